#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mhn/archgraph.hpp"
#include "mhn/error.hpp"

namespace mhn {

struct ConvBlock {
  int convs = 1;
  int channels = 1;
  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

// VGG-style backbone. Blocks are numbered from 1, so `split_block_index` is
// the i of conv(i): blocks 1..i-2 form the shared trunk, conv(i-1) and
// conv(i) are replicated per branch. Blocks after i are unused.
struct BackboneSpec {
  std::vector<ConvBlock> blocks;
  int split_block_index = 6;
  Size2 kernel{3, 3};
  int in_channels = 3;
  // Width of the 1x1 lateral convs of the skip connections; 0 keeps the
  // branch width.
  int lateral_channels = 0;
  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

// VGG16 conv1..conv5 plus conv6, full width.
inline BackboneSpec vgg16_backbone() {
  return {{{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}, {3, 512}}, 6, {3, 3}, 3, 0};
}

// Same block layout at 1/8 width with fewer convs per block.
inline BackboneSpec toy_backbone() {
  return {{{1, 8}, {1, 16}, {2, 32}, {2, 64}, {2, 64}, {2, 64}}, 6, {3, 3}, 3, 0};
}

inline void check_backbone(const BackboneSpec& b) {
  auto reject = [](const std::string& why) { throw Error(ErrorKind::InvalidBackbone, why); };
  const int i = b.split_block_index;
  if (i < 3 || i > static_cast<int>(b.blocks.size()))
    reject("split_block_index " + std::to_string(i) + " outside [3, " +
           std::to_string(b.blocks.size()) + "]");
  if (b.kernel.h < 1 || b.kernel.w < 1 || b.kernel.h % 2 == 0 || b.kernel.w % 2 == 0)
    reject("backbone kernel must be odd");
  if (b.in_channels < 1) reject("in_channels must be >= 1");
  if (b.lateral_channels < 0) reject("lateral_channels must be >= 0");
  for (int k = 0; k < i; ++k) {
    const ConvBlock& blk = b.blocks[k];
    if (blk.convs < 1) reject("block " + std::to_string(k + 1) + " has no convs");
    if (blk.channels < 1) reject("block " + std::to_string(k + 1) + " has no channels");
    if (k > 0 && blk.channels < b.blocks[k - 1].channels)
      reject("channels decrease at block " + std::to_string(k + 1));
  }
  // conv(i)s is added to conv(i-2) and conv(i)m to conv(i-1).
  const int c2 = b.blocks[i - 3].channels, c1 = b.blocks[i - 2].channels,
            c0 = b.blocks[i - 1].channels;
  if (c2 != c0 || c1 != c0)
    reject("conv(i-2), conv(i-1) and conv(i) must have equal channels for the branch sums");
}

enum class Arch { MhnNoskip, Mhn, MhnD };

inline std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::MhnNoskip: return "mhn-noskip";
    case Arch::Mhn: return "mhn";
    case Arch::MhnD: return "mhn-d";
  }
  return "?";
}

inline std::optional<Arch> parse_arch(std::string_view s) {
  for (Arch a : {Arch::MhnNoskip, Arch::Mhn, Arch::MhnD})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

namespace detail {

inline std::string block_name(int block) { return std::to_string(block); }

struct BranchIds {
  std::string s, m, l;
};

class BackboneWriter {
 public:
  BackboneWriter(ArchGraph& g, const BackboneSpec& b) : g_(g), b_(b) {}

  // Appends the convs of `block` with ReLUs. Returns the last ReLU id.
  std::string conv_block(const std::string& input, int block, const std::string& suffix,
                         int dilation, bool shared, const std::string& last_id = {}) {
    const ConvBlock& blk = b_.blocks[block - 1];
    std::string prev = input;
    for (int k = 1; k <= blk.convs; ++k) {
      const std::string tag = block_name(block) + suffix + "_" + std::to_string(k);
      NodeSpec conv;
      conv.id = "conv" + tag;
      conv.op = Op::Conv;
      conv.inputs = {prev};
      conv.kernel = b_.kernel;
      conv.dilation = dilation;
      conv.padding = {dilation * (b_.kernel.h - 1) / 2, dilation * (b_.kernel.w - 1) / 2};
      conv.out_channels = blk.channels;
      if (shared) conv.share_group = "conv" + block_name(block) + "_" + std::to_string(k);
      g_.add(conv);
      NodeSpec relu;
      relu.id = (k == blk.convs && !last_id.empty()) ? last_id : "relu" + tag;
      relu.op = Op::ReLU;
      relu.inputs = {conv.id};
      g_.add(relu);
      prev = relu.id;
    }
    return prev;
  }

  std::string pool(const std::string& input, int block) {
    NodeSpec p;
    p.id = "pool" + block_name(block);
    p.op = Op::Pool;
    p.inputs = {input};
    p.kernel = {2, 2};
    p.stride = 2;
    g_.add(p);
    return p.id;
  }

  std::string add(const std::string& id, std::vector<std::string> inputs) {
    NodeSpec a;
    a.id = id;
    a.op = Op::Add;
    a.inputs = std::move(inputs);
    g_.add(a);
    return id;
  }

  std::string conv1x1(const std::string& id, const std::string& input, int channels) {
    NodeSpec c;
    c.id = id;
    c.op = Op::Conv;
    c.inputs = {input};
    c.out_channels = channels;
    g_.add(c);
    return id;
  }

  std::string upsample(const std::string& id, const std::string& input) {
    NodeSpec u;
    u.id = id;
    u.op = Op::UpsampleX2;
    u.inputs = {input};
    g_.add(u);
    return id;
  }

 private:
  ArchGraph& g_;
  const BackboneSpec& b_;
};

// Shared trunk plus the three branches of the multi-branch network. With
// `dilated`, pool(i-2) is dropped and conv(i-1), conv(i)m, conv(i) use
// dilation 2; bran-s keeps plain convolutions.
inline BranchIds build_branches(ArchGraph& g, const BackboneSpec& b, bool dilated) {
  check_backbone(b);
  BackboneWriter w(g, b);
  const int i = b.split_block_index;

  NodeSpec input;
  input.id = "data";
  input.op = Op::Input;
  input.out_channels = b.in_channels;
  g.add(input);

  std::string x = input.id;
  for (int blk = 1; blk <= i - 2; ++blk) {
    x = w.conv_block(x, blk, "", 1, false);
    if (blk < i - 2) x = w.pool(x, blk);
  }
  const std::string trunk = x;
  const int d = dilated ? 2 : 1;

  // bran-s: no further pooling.
  std::string s = w.conv_block(trunk, i - 1, "s", 1, true);
  s = w.conv_block(s, i, "s", 1, true);
  const std::string feat_s = w.add("feat-s", {s, trunk});

  std::string mid = dilated ? trunk : w.pool(trunk, i - 2);
  mid = w.conv_block(mid, i - 1, "", d, true);

  // bran-m: conv(i)m without pooling, summed with conv(i-1).
  std::string m = w.conv_block(mid, i, "m", d, true);
  const std::string feat_m = w.add("feat-m", {m, mid});

  // bran-l: pool(i-1) then conv(i).
  const std::string pooled = w.pool(mid, i - 1);
  const std::string feat_l = w.conv_block(pooled, i, "", d, true, "feat-l");
  return {feat_s, feat_m, feat_l};
}

inline std::string alias(const BackboneSpec& b, int offset) {
  return "M" + std::to_string(b.split_block_index - offset);
}

inline void declare_outputs(ArchGraph& g, const BackboneSpec& b, const BranchIds& trunks,
                            const BranchIds& nodes) {
  g.add_output({"bran-s", nodes.s, trunks.s, alias(b, 2)});
  g.add_output({"bran-m", nodes.m, trunks.m, alias(b, 1)});
  g.add_output({"bran-l", nodes.l, trunks.l, alias(b, 0)});
}

// Skip connections: feat-l -> 1x1 -> x2 joins 1x1(feat-m) into feat-m-c,
// then feat-m-c joins 1x1(feat-s) the same way. `mc_upsample` is false when
// feat-m-c already has the resolution of feat-s.
inline BranchIds add_skips(ArchGraph& g, const BackboneSpec& b, const BranchIds& t,
                           bool mc_upsample) {
  BackboneWriter w(g, b);
  const int width = b.lateral_channels > 0 ? b.lateral_channels
                                           : b.blocks[b.split_block_index - 1].channels;
  const std::string up_l = w.upsample("up-l", w.conv1x1("lat-l", t.l, width));
  const std::string feat_mc = w.add("feat-m-c", {up_l, w.conv1x1("lat-m", t.m, width)});
  std::string from_mc = w.conv1x1("lat-mc", feat_mc, width);
  if (mc_upsample) from_mc = w.upsample("up-mc", from_mc);
  const std::string feat_sc = w.add("feat-s-c", {from_mc, w.conv1x1("lat-s", t.s, width)});
  return {feat_sc, feat_mc, t.l};
}

}  // namespace detail

/// Multi-branch network without skip connections.
inline ArchGraph build_mhn_noskip(const BackboneSpec& b) {
  ArchGraph g("mhn-noskip");
  const auto t = detail::build_branches(g, b, false);
  detail::declare_outputs(g, b, t, t);
  return g;
}

/// Multi-branch network with skip connections; predicts from
/// (feat-s-c, feat-m-c, feat-l).
inline ArchGraph build_mhn(const BackboneSpec& b) {
  ArchGraph g("mhn");
  const auto t = detail::build_branches(g, b, false);
  detail::declare_outputs(g, b, t, detail::add_skips(g, b, t, true));
  return g;
}

/// Dilated variant: pool(i-2) removed, dilation 2 in conv(i-1), conv(i)m
/// and conv(i). bran-s and bran-m end up at the same stride, so the
/// feat-m-c -> feat-s-c skip has no upsample.
inline ArchGraph build_mhn_d(const BackboneSpec& b) {
  ArchGraph g("mhn-d");
  const auto t = detail::build_branches(g, b, true);
  detail::declare_outputs(g, b, t, detail::add_skips(g, b, t, false));
  return g;
}

inline ArchGraph build(Arch arch, const BackboneSpec& b) {
  switch (arch) {
    case Arch::MhnNoskip: return build_mhn_noskip(b);
    case Arch::Mhn: return build_mhn(b);
    case Arch::MhnD: return build_mhn_d(b);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown architecture");
}

struct HeadSpec {
  static constexpr Size2 kMidKernel{5, 3};
  static constexpr Size2 kMidPadding{2, 1};

  int anchors_per_branch = 3;
  // Per-output anchor counts in declaration order; overrides
  // anchors_per_branch when non-empty.
  std::vector<int> anchors_per_output;
  // Width of the 5x3 conv; 0 keeps the branch width.
  int mid_channels = 0;

  int anchors_for(std::size_t output) const {
    return anchors_per_output.empty() ? anchors_per_branch : anchors_per_output.at(output);
  }
};

/// Per declared output: 5x3 conv + ReLU feeding sibling 1x1 cls/reg convs.
inline ArchGraph attach_heads(ArchGraph g, const HeadSpec& h) {
  if (!h.anchors_per_output.empty() && h.anchors_per_output.size() != g.outputs().size())
    throw Error(ErrorKind::SplitMismatch, "anchor counts given for " +
                                              std::to_string(h.anchors_per_output.size()) +
                                              " outputs, graph has " +
                                              std::to_string(g.outputs().size()));
  if (h.mid_channels < 0) throw Error(ErrorKind::InvalidConfig, "mid_channels must be >= 0");
  const SignatureMap sigs = infer_signatures(g);
  const std::vector<BranchOutput> outputs = g.outputs();
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const BranchOutput& o = outputs[k];
    const int anchors = h.anchors_for(k);
    if (anchors < 1) throw Error(ErrorKind::InvalidConfig, "anchors per branch must be >= 1");
    const std::string p = o.name + "-";
    NodeSpec mid;
    mid.id = p + "conv";
    mid.op = Op::Conv;
    mid.inputs = {o.node};
    mid.kernel = HeadSpec::kMidKernel;
    mid.padding = HeadSpec::kMidPadding;
    mid.out_channels = h.mid_channels > 0 ? h.mid_channels : sigs.at(o.node).channels;
    g.add(mid);
    NodeSpec relu;
    relu.id = p + "relu";
    relu.op = Op::ReLU;
    relu.inputs = {mid.id};
    g.add(relu);
    NodeSpec cls;
    cls.id = p + "cls";
    cls.op = Op::Conv;
    cls.inputs = {relu.id};
    cls.out_channels = 2 * anchors;
    g.add(cls);
    NodeSpec reg = cls;
    reg.id = p + "reg";
    reg.out_channels = 4 * anchors;
    g.add(reg);
    g.add_head({o.name, mid.id, cls.id, reg.id, anchors});
  }
  return g;
}

/// Declares the second-stage head on the declared output with the smallest
/// stride; ties go to the earliest declared output.
inline ArchGraph attach_rcnn_head(ArchGraph g, Size2 roi_size, int fc_width) {
  if (g.outputs().empty()) throw Error(ErrorKind::NoOutputs, "graph declares no outputs");
  if (roi_size.h < 1 || roi_size.w < 1 || fc_width < 1)
    throw Error(ErrorKind::InvalidConfig, "roi size and fc width must be positive");
  const SignatureMap sigs = infer_signatures(g);
  const BranchOutput* best = nullptr;
  for (const BranchOutput& o : g.outputs())
    if (!best || sigs.at(o.node).stride < sigs.at(best->node).stride) best = &o;
  g.set_rcnn({best->name, best->node, roi_size, fc_width});
  return g;
}

/// The fully-connected part of the second-stage head as its own graph. Its
/// input is one ROI-pooled cell grid flattened into channels.
inline ArchGraph rcnn_head_graph(const ArchGraph& g) {
  if (!g.rcnn()) throw Error(ErrorKind::InvalidConfig, "graph has no rcnn head");
  const RcnnHead& rc = *g.rcnn();
  const SignatureMap sigs = infer_signatures(g);
  ArchGraph h("rcnn-head");
  NodeSpec in;
  in.id = "rois";
  in.op = Op::Input;
  in.out_channels = sigs.at(rc.source).channels * rc.roi.h * rc.roi.w;
  h.add(in);
  std::string prev = in.id;
  for (int k = 1; k <= 2; ++k) {
    NodeSpec fc;
    fc.id = "rcnn-fc" + std::to_string(k);
    fc.op = Op::Conv;
    fc.inputs = {prev};
    fc.out_channels = rc.fc_width;
    h.add(fc);
    NodeSpec relu;
    relu.id = "rcnn-relu" + std::to_string(k);
    relu.op = Op::ReLU;
    relu.inputs = {fc.id};
    h.add(relu);
    prev = relu.id;
  }
  NodeSpec cls;
  cls.id = "rcnn-cls";
  cls.op = Op::Conv;
  cls.inputs = {prev};
  cls.out_channels = 2;
  h.add(cls);
  NodeSpec reg = cls;
  reg.id = "rcnn-reg";
  reg.out_channels = 4;
  h.add(reg);
  h.add_output({"cls", cls.id, cls.id, ""});
  h.add_output({"reg", reg.id, reg.id, ""});
  return h;
}

}  // namespace mhn
