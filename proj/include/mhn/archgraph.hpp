#pragma once

#include <algorithm>
#include <climits>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mhn/error.hpp"

namespace mhn {

enum class Op { Input, Conv, Pool, ReLU, Add, UpsampleX2 };

inline std::string_view to_string(Op op) {
  switch (op) {
    case Op::Input: return "Input";
    case Op::Conv: return "Conv";
    case Op::Pool: return "Pool";
    case Op::ReLU: return "ReLU";
    case Op::Add: return "Add";
    case Op::UpsampleX2: return "UpsampleX2";
  }
  return "?";
}

inline std::optional<Op> parse_op(std::string_view s) {
  for (Op op : {Op::Input, Op::Conv, Op::Pool, Op::ReLU, Op::Add, Op::UpsampleX2})
    if (to_string(op) == s) return op;
  return std::nullopt;
}

// (height, width) pair used for kernels, paddings and receptive fields.
struct Size2 {
  int h = 1;
  int w = 1;
  friend bool operator==(const Size2&, const Size2&) = default;
};

struct NodeSpec {
  std::string id;
  Op op = Op::Input;
  std::vector<std::string> inputs;
  Size2 kernel{1, 1};
  int stride = 1;
  int dilation = 1;
  Size2 padding{0, 0};
  // Conv output width. Input nodes carry the image channel count here.
  int out_channels = 0;
  // Conv nodes with the same non-empty label bind one weight blob.
  std::string share_group{};

  friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

// A declared branch output. `node` is the map the branch predicts from;
// `trunk` is the pre-fusion branch map (equal to `node` without skips).
struct BranchOutput {
  std::string name;
  std::string node;
  std::string trunk;
  std::string alias;
  friend bool operator==(const BranchOutput&, const BranchOutput&) = default;
};

struct HeadBinding {
  std::string branch;
  std::string conv;
  std::string cls;
  std::string reg;
  int anchors = 0;
  friend bool operator==(const HeadBinding&, const HeadBinding&) = default;
};

// Second-stage head reading ROI-pooled cells of `source`.
struct RcnnHead {
  std::string branch;
  std::string source;
  Size2 roi{7, 7};
  int fc_width = 256;
  friend bool operator==(const RcnnHead&, const RcnnHead&) = default;
};

class ArchGraph {
 public:
  ArchGraph() = default;
  explicit ArchGraph(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  const NodeSpec& add(NodeSpec node) {
    if (index_.count(node.id))
      throw Error(ErrorKind::InvalidGraph, "duplicate node id", node.id);
    index_.emplace(node.id, nodes_.size());
    nodes_.push_back(std::move(node));
    return nodes_.back();
  }

  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

  const NodeSpec* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &nodes_[it->second];
  }

  const NodeSpec& at(std::string_view id) const {
    if (const NodeSpec* n = find(id)) return *n;
    throw Error(ErrorKind::InvalidGraph, "no such node", std::string(id));
  }

  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  void add_output(BranchOutput out) {
    if (out.trunk.empty()) out.trunk = out.node;
    outputs_.push_back(std::move(out));
  }
  const std::vector<BranchOutput>& outputs() const { return outputs_; }

  void add_head(HeadBinding head) { heads_.push_back(std::move(head)); }
  const std::vector<HeadBinding>& heads() const { return heads_; }

  void set_rcnn(RcnnHead head) { rcnn_ = std::move(head); }
  const std::optional<RcnnHead>& rcnn() const { return rcnn_; }

  friend bool operator==(const ArchGraph& a, const ArchGraph& b) {
    return a.name_ == b.name_ && a.nodes_ == b.nodes_ && a.outputs_ == b.outputs_ &&
           a.heads_ == b.heads_ && a.rcnn_ == b.rcnn_;
  }

 private:
  std::string name_;
  std::vector<NodeSpec> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<BranchOutput> outputs_;
  std::vector<HeadBinding> heads_;
  std::optional<RcnnHead> rcnn_;
};

// Input pixels [lo, hi] relative to j * stride for some output cell j.
struct Span {
  int lo = 0;
  int hi = 0;
  int size() const { return hi - lo + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

// Static analysis record of one node.
//
// Per axis, output cell j sees input pixels j * stride + support(j),
// ignoring truncation at the image border. Without upsampling the support
// is the same for every cell; each bilinear x2 doubles its period, since
// even and odd output cells blend different source pairs. `rf` is the
// widest support over all cells and `rf_offset` the start for cell 0.
struct FeatureSignature {
  int stride = 1;
  Size2 rf{1, 1};
  Size2 rf_offset{0, 0};
  int channels = 0;
  int conv_depth = 0;
  std::vector<Span> phases_y{Span{}};
  std::vector<Span> phases_x{Span{}};

  Span support_y(int cell) const { return at_phase(phases_y, cell); }
  Span support_x(int cell) const { return at_phase(phases_x, cell); }

  friend bool operator==(const FeatureSignature&, const FeatureSignature&) = default;

 private:
  static Span at_phase(const std::vector<Span>& p, int cell) {
    const int n = static_cast<int>(p.size());
    return p[((cell % n) + n) % n];
  }
};

using SignatureMap = std::map<std::string, FeatureSignature>;

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {

// Kahn's algorithm in declaration order; nullopt on a cycle or dangling edge.
inline std::optional<std::vector<const NodeSpec*>> topological_order(const ArchGraph& g) {
  std::unordered_map<std::string, int> pending;
  std::unordered_map<std::string, std::vector<const NodeSpec*>> consumers;
  for (const NodeSpec& n : g.nodes()) {
    pending[n.id] = static_cast<int>(n.inputs.size());
    for (const std::string& in : n.inputs) {
      if (!g.contains(in)) return std::nullopt;
      consumers[in].push_back(&n);
    }
  }
  std::vector<const NodeSpec*> order;
  std::vector<const NodeSpec*> ready;
  for (const NodeSpec& n : g.nodes())
    if (n.inputs.empty()) ready.push_back(&n);
  std::size_t head = 0;
  while (head < ready.size()) {
    const NodeSpec* n = ready[head++];
    order.push_back(n);
    for (const NodeSpec* c : consumers[n->id]) {
      // A node listing the same predecessor twice is decremented twice.
      if (--pending[c->id] == 0) ready.push_back(c);
    }
  }
  if (order.size() != g.size()) return std::nullopt;
  return order;
}

using Phases = std::vector<Span>;

inline int phase_of(long cell, std::size_t period) {
  const long n = static_cast<long>(period);
  return static_cast<int>(((cell % n) + n) % n);
}

struct SigState {
  int stride = 1;
  Phases y{Span{}}, x{Span{}};
  int channels = 0;
  int conv_depth = 0;

  FeatureSignature to_signature() const {
    auto widest = [](const Phases& p) {
      int w = 0;
      for (const Span& s : p) w = std::max(w, s.size());
      return w;
    };
    return {stride, {widest(y), widest(x)}, {y[0].lo, x[0].lo}, channels, conv_depth, y, x};
  }
};

// Output cell q reads input cells q * s - p + t * d.
inline Phases window(const Phases& in, int stride_in, int k, int d, int p, int s) {
  const std::size_t period = in.size() / std::gcd(in.size(), static_cast<std::size_t>(s));
  Phases out(period);
  for (std::size_t q = 0; q < period; ++q) {
    Span u{INT_MAX, INT_MIN};
    for (int t = 0; t < k; ++t) {
      const int off = t * d - p;
      const Span& c = in[phase_of(static_cast<long>(q) * s + off, in.size())];
      u.lo = std::min(u.lo, off * stride_in + c.lo);
      u.hi = std::max(u.hi, off * stride_in + c.hi);
    }
    out[q] = u;
  }
  return out;
}

inline Phases merge(const Phases& a, const Phases& b) {
  const std::size_t period = std::lcm(a.size(), b.size());
  Phases out(period);
  for (std::size_t q = 0; q < period; ++q) {
    const Span& u = a[q % a.size()];
    const Span& v = b[q % b.size()];
    out[q] = {std::min(u.lo, v.lo), std::max(u.hi, v.hi)};
  }
  return out;
}

// Output cell 2j blends source cells j-1 and j, cell 2j+1 blends j and j+1.
inline Phases upsample(const Phases& in, int stride_in) {
  const std::size_t period = 2 * in.size();
  Phases out(period);
  for (std::size_t q = 0; q < period; ++q) {
    const long j = static_cast<long>(q / 2);
    const bool odd = q % 2 == 1;
    const int base = odd ? stride_in / 2 : 0;
    Span u{INT_MAX, INT_MIN};
    for (long c : {odd ? j : j - 1, odd ? j + 1 : j}) {
      const Span& src = in[phase_of(c, in.size())];
      const int off = static_cast<int>(c - j) * stride_in - base;
      u.lo = std::min(u.lo, off + src.lo);
      u.hi = std::max(u.hi, off + src.hi);
    }
    out[q] = u;
  }
  return out;
}

// Propagates signatures over a structurally valid, acyclic graph. With a
// report, problems are appended and propagation continues; without one the
// first problem throws.
inline SignatureMap propagate(const ArchGraph& /*g*/, const std::vector<const NodeSpec*>& order,
                              ValidationReport* report) {
  std::unordered_map<std::string, SigState> state;
  auto fail = [&](ErrorKind kind, const std::string& msg, const std::string& node) {
    if (!report) throw Error(kind, msg, node);
    report->violations.push_back(msg + " at " + std::string(node));
  };

  for (const NodeSpec* n : order) {
    SigState s;
    switch (n->op) {
      case Op::Input:
        s.channels = n->out_channels;
        break;
      case Op::Conv:
      case Op::Pool: {
        const SigState& in = state.at(n->inputs.front());
        const int d = n->op == Op::Conv ? n->dilation : 1;
        s.stride = in.stride * n->stride;
        s.y = window(in.y, in.stride, n->kernel.h, d, n->padding.h, n->stride);
        s.x = window(in.x, in.stride, n->kernel.w, d, n->padding.w, n->stride);
        s.channels = n->op == Op::Conv ? n->out_channels : in.channels;
        s.conv_depth = in.conv_depth + (n->op == Op::Conv ? 1 : 0);
        break;
      }
      case Op::ReLU:
        s = state.at(n->inputs.front());
        break;
      case Op::Add: {
        s = state.at(n->inputs.front());
        for (std::size_t i = 1; i < n->inputs.size(); ++i) {
          const SigState& other = state.at(n->inputs[i]);
          if (other.stride != s.stride)
            fail(ErrorKind::InvalidGraph,
                 "stride mismatch at Add (" + std::to_string(s.stride) + " vs " +
                     std::to_string(other.stride) + ")",
                 n->id);
          if (other.channels != s.channels)
            fail(ErrorKind::InvalidGraph,
                 "channel mismatch at Add (" + std::to_string(s.channels) + " vs " +
                     std::to_string(other.channels) + ")",
                 n->id);
          s.y = merge(s.y, other.y);
          s.x = merge(s.x, other.x);
          s.conv_depth = std::max(s.conv_depth, other.conv_depth);
        }
        break;
      }
      case Op::UpsampleX2: {
        const SigState& in = state.at(n->inputs.front());
        s = in;
        if (in.stride % 2 != 0) {
          fail(ErrorKind::NonIntegerStride,
               "upsampling stride " + std::to_string(in.stride) + " by 2", n->id);
          break;
        }
        s.stride = in.stride / 2;
        s.y = upsample(in.y, in.stride);
        s.x = upsample(in.x, in.stride);
        break;
      }
    }
    state[n->id] = s;
  }

  SignatureMap out;
  for (const auto& [id, s] : state) out.emplace(id, s.to_signature());
  return out;
}

inline void check_structure(const ArchGraph& g, ValidationReport& r) {
  auto bad = [&](const NodeSpec& n, const std::string& what) {
    r.violations.push_back(what + " at " + n.id);
  };
  if (g.size() == 0) {
    r.violations.push_back("graph has no nodes");
    return;
  }
  int inputs = 0;
  for (const NodeSpec& n : g.nodes()) {
    for (const std::string& in : n.inputs)
      if (!g.contains(in)) bad(n, "unknown predecessor '" + in + "'");
    const auto arity = n.inputs.size();
    switch (n.op) {
      case Op::Input:
        ++inputs;
        if (arity != 0) bad(n, "Input with predecessors");
        if (n.out_channels < 1) bad(n, "Input channels must be >= 1");
        break;
      case Op::Add:
        if (arity < 2) bad(n, "Add needs >= 2 predecessors");
        break;
      default:
        if (arity != 1) bad(n, std::string(to_string(n.op)) + " needs exactly 1 predecessor");
        break;
    }
    if (n.op == Op::Conv || n.op == Op::Pool) {
      if (n.kernel.h < 1 || n.kernel.w < 1) bad(n, "kernel must be >= 1");
      if (n.stride < 1) bad(n, "stride must be >= 1");
      if (n.padding.h < 0 || n.padding.w < 0) bad(n, "padding must be >= 0");
    }
    if (n.op == Op::Conv) {
      if (n.dilation < 1) bad(n, "dilation must be >= 1");
      if (n.out_channels < 1) bad(n, "Conv channels must be >= 1");
    }
    if (n.op == Op::Pool && (n.padding.h >= n.kernel.h || n.padding.w >= n.kernel.w))
      bad(n, "Pool padding must be smaller than kernel");
    if (!n.share_group.empty() && n.op != Op::Conv) bad(n, "share group on non-Conv node");
  }
  if (inputs != 1)
    r.violations.push_back("expected exactly one Input node, found " + std::to_string(inputs));
}

inline std::vector<std::string> reachable_from_input(const ArchGraph& g) {
  std::unordered_map<std::string, std::vector<std::string>> consumers;
  std::vector<std::string> stack;
  for (const NodeSpec& n : g.nodes()) {
    for (const std::string& in : n.inputs) consumers[in].push_back(n.id);
    if (n.op == Op::Input) stack.push_back(n.id);
  }
  std::vector<std::string> seen;
  while (!stack.empty()) {
    std::string id = stack.back();
    stack.pop_back();
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) continue;
    seen.push_back(id);
    for (const std::string& c : consumers[id]) stack.push_back(c);
  }
  return seen;
}

}  // namespace detail

/// Lists every well-formedness violation of `graph`; an empty report means
/// the graph can be analysed and executed.
inline ValidationReport validate(const ArchGraph& graph) {
  ValidationReport r;
  detail::check_structure(graph, r);
  if (graph.size() == 0) return r;

  const auto order = detail::topological_order(graph);
  if (!order) r.violations.push_back("graph has a cycle or dangling edge");

  const auto reach = detail::reachable_from_input(graph);
  auto reachable = [&](const std::string& id) {
    return std::find(reach.begin(), reach.end(), id) != reach.end();
  };
  for (const BranchOutput& o : graph.outputs()) {
    for (const std::string* id : {&o.node, &o.trunk}) {
      if (!graph.contains(*id))
        r.violations.push_back("unknown output node '" + *id + "' for " + o.name);
      else if (!reachable(*id))
        r.violations.push_back("output node '" + *id + "' unreachable from Input");
    }
  }
  for (const HeadBinding& h : graph.heads())
    for (const std::string* id : {&h.conv, &h.cls, &h.reg})
      if (!graph.contains(*id))
        r.violations.push_back("unknown head node '" + *id + "' for " + h.branch);
  if (const auto& rc = graph.rcnn(); rc && !graph.contains(rc->source))
    r.violations.push_back("unknown rcnn source '" + rc->source + "'");

  if (!r.ok() || !order) return r;

  const SignatureMap sigs = detail::propagate(graph, *order, &r);

  // One weight blob per group: kernel, input and output widths must agree.
  std::map<std::string, const NodeSpec*> first_in_group;
  for (const NodeSpec& n : graph.nodes()) {
    if (n.share_group.empty()) continue;
    auto [it, fresh] = first_in_group.emplace(n.share_group, &n);
    if (fresh) continue;
    const NodeSpec& ref = *it->second;
    const int in_ref = sigs.at(ref.inputs.front()).channels;
    const int in_n = sigs.at(n.inputs.front()).channels;
    if (ref.kernel != n.kernel || ref.out_channels != n.out_channels || in_ref != in_n)
      r.violations.push_back("share group '" + n.share_group + "' shape mismatch at " + n.id);
  }
  return r;
}

/// Stride, receptive field, channel count and conv depth for every node.
/// Throws InvalidGraph on structural problems and NonIntegerStride when an
/// upsample would leave a fractional stride.
inline SignatureMap infer_signatures(const ArchGraph& graph) {
  ValidationReport structural;
  detail::check_structure(graph, structural);
  if (!structural.ok())
    throw Error(ErrorKind::InvalidGraph, structural.violations.front());
  const auto order = detail::topological_order(graph);
  if (!order) throw Error(ErrorKind::InvalidGraph, "graph has a cycle or dangling edge");
  return detail::propagate(graph, *order, nullptr);
}

struct BranchRow {
  std::string name;
  std::string alias;
  std::string node;
  std::string trunk;
  int stride = 0;
  Size2 rf;           // trunk receptive field
  int conv_depth = 0; // trunk depth
  Size2 out_rf;       // receptive field of the predicting map
  int out_conv_depth = 0;
};

/// One row per declared output in declaration order.
inline std::vector<BranchRow> branch_report(const ArchGraph& graph) {
  for (const BranchOutput& o : graph.outputs())
    for (const std::string* id : {&o.node, &o.trunk})
      if (!graph.contains(*id))
        throw Error(ErrorKind::UnknownOutput, "declared output '" + o.name + "' refers to '" +
                                                  *id + "' which is not in the graph");
  const SignatureMap sigs = infer_signatures(graph);
  std::vector<BranchRow> rows;
  for (const BranchOutput& o : graph.outputs()) {
    const FeatureSignature& out = sigs.at(o.node);
    const FeatureSignature& trunk = sigs.at(o.trunk);
    rows.push_back({o.name, o.alias, o.node, o.trunk, out.stride, trunk.rf, trunk.conv_depth,
                    out.rf, out.conv_depth});
  }
  return rows;
}

inline std::string format_branch_report(const std::vector<BranchRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-6s %-10s %6s %9s %6s %9s %6s\n", "output", "alias",
                "node", "stride", "rf", "depth", "out_rf", "out_d");
  out += line;
  for (const BranchRow& r : rows) {
    const std::string rf = std::to_string(r.rf.h) + "x" + std::to_string(r.rf.w);
    const std::string orf = std::to_string(r.out_rf.h) + "x" + std::to_string(r.out_rf.w);
    std::snprintf(line, sizeof line, "%-8s %-6s %-10s %6d %9s %6d %9s %6d\n", r.name.c_str(),
                  r.alias.c_str(), r.node.c_str(), r.stride, rf.c_str(), r.conv_depth,
                  orf.c_str(), r.out_conv_depth);
    out += line;
  }
  return out;
}

}  // namespace mhn
