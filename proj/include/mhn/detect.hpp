#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "mhn/anchors.hpp"
#include "mhn/archgraph.hpp"
#include "mhn/box.hpp"
#include "mhn/builders.hpp"
#include "mhn/engine.hpp"
#include "mhn/error.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Regression offsets relative to a reference box.
struct Deltas {
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
};

inline Box decode_box(const Box& ref, const Deltas& t) {
  if (!std::isfinite(t.tx) || !std::isfinite(t.ty) || !std::isfinite(t.tw) ||
      !std::isfinite(t.th))
    throw Error(ErrorKind::NonFiniteRegression, "non-finite regression offsets");
  const double w = ref.width(), h = ref.height();
  const double cx = ref.center_x() + t.tx * w;
  const double cy = ref.center_y() + t.ty * h;
  const double nw = w * std::exp(t.tw);
  const double nh = h * std::exp(t.th);
  const Box out{cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
  if (!out.finite()) throw Error(ErrorKind::NonFiniteRegression, "decoded box is not finite");
  return out;
}

// Clips to [0, W] x [0, H]; `image` is (H, W).
inline Box clip_box(const Box& b, Size2 image) {
  return {std::clamp(b.x1, 0.0, double(image.w)), std::clamp(b.y1, 0.0, double(image.h)),
          std::clamp(b.x2, 0.0, double(image.w)), std::clamp(b.y2, 0.0, double(image.h))};
}

inline std::vector<Box> decode_boxes(std::span<const Box> anchors, std::span<const Deltas> deltas,
                                     Size2 image) {
  if (anchors.size() != deltas.size())
    throw Error(ErrorKind::ShapeMismatch, "anchor and regression counts differ");
  std::vector<Box> out;
  out.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i)
    out.push_back(clip_box(decode_box(anchors[i], deltas[i]), image));
  return out;
}

/// Final score: second-stage score plus lambda times the first-stage score.
inline double fuse_scores(double s_rcnn, double s_mhn, double lambda) {
  return s_rcnn + lambda * s_mhn;
}

struct Proposal {
  Box box;
  double s_mhn = 0.0;
  int branch = 0;
};

struct Detection {
  Box box;
  double s_rcnn = 0.0;
  double s_mhn = 0.0;
  double s_f = 0.0;
  double lambda = 0.0;
  int branch = 0;
};

/// Greedy NMS. Order: s_f descending, then smaller x1, smaller y1, input
/// position. A candidate is dropped when its IoU with a kept box is at
/// least `iou_threshold`.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold,
                                  int max_out) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw Error(ErrorKind::InvalidConfig, "NMS threshold must be in (0, 1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Detection& da = dets[a];
    const Detection& db = dets[b];
    if (da.s_f != db.s_f) return da.s_f > db.s_f;
    if (da.box.x1 != db.box.x1) return da.box.x1 < db.box.x1;
    return da.box.y1 < db.box.y1;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    if (static_cast<int>(kept.size()) >= max_out) break;
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept)
      if (iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct PipelineConfig {
  AnchorConfig anchors;
  double lambda = 0.5;
  int top_k = 200;
  double nms_iou = 0.5;
  int max_out = 100;
};

namespace detail {

// Foreground probability of a (background, foreground) logit pair.
inline double softmax_fg(float bg, float fg) {
  return 1.0 / (1.0 + std::exp(static_cast<double>(bg) - static_cast<double>(fg)));
}

inline std::vector<Proposal> gather_proposals(const ArchGraph& g, const NodeValues& values,
                                              const SignatureMap& sigs, const AnchorSet& set,
                                              Size2 image) {
  std::vector<Proposal> proposals;
  for (int b = 0; b < static_cast<int>(g.heads().size()); ++b) {
    const HeadBinding& head = g.heads()[b];
    const Tensor4& cls = values.at(head.cls);
    const Tensor4& reg = values.at(head.reg);
    const int a_count = head.anchors;
    if (cls.c() != 2 * a_count || reg.c() != 4 * a_count)
      throw Error(ErrorKind::ShapeMismatch, "head channels do not match anchor count", head.cls);
    const int stride = sigs.at(head.cls).stride;
    const std::vector<Box> anchors = grid_anchors(set, b, stride, cls.h(), cls.w());
    for (int i = 0; i < cls.h(); ++i)
      for (int j = 0; j < cls.w(); ++j)
        for (int a = 0; a < a_count; ++a) {
          const Box& anchor = anchors[(static_cast<std::size_t>(i) * cls.w() + j) * a_count + a];
          const Deltas t{reg.at(0, 4 * a, i, j), reg.at(0, 4 * a + 1, i, j),
                         reg.at(0, 4 * a + 2, i, j), reg.at(0, 4 * a + 3, i, j)};
          const Box box = clip_box(decode_box(anchor, t), image);
          if (!box.valid()) continue;
          proposals.push_back(
              {box, softmax_fg(cls.at(0, 2 * a, i, j), cls.at(0, 2 * a + 1, i, j)), b});
        }
  }
  return proposals;
}

}  // namespace detail

/// forward -> per-branch proposals on tiled anchors -> top-K by first-stage
/// score -> optional second stage on ROI-pooled cells -> fused score -> NMS.
/// Without a second-stage head the first-stage score stands in for s_rcnn.
/// The image is zero-padded at the bottom and right to a multiple of the
/// largest stride; boxes are clipped to the unpadded size.
inline std::vector<Detection> detect_pipeline(const ArchGraph& g, const WeightStore& w,
                                              const Tensor4& image, const PipelineConfig& cfg) {
  if (image.n() != 1) throw Error(ErrorKind::ShapeMismatch, "pipeline takes one image");
  if (g.heads().empty()) throw Error(ErrorKind::InvalidConfig, "graph has no prediction heads");
  if (cfg.top_k < 1 || cfg.max_out < 1 || !(cfg.lambda >= 0.0))
    throw Error(ErrorKind::InvalidConfig, "top_k, max_out must be >= 1 and lambda >= 0");

  const AnchorSet set = make_anchor_set(cfg.anchors);
  if (set.branches != static_cast<int>(g.heads().size()))
    throw Error(ErrorKind::SplitMismatch, "anchor split has " + std::to_string(set.branches) +
                                              " branches, graph has " +
                                              std::to_string(g.heads().size()) + " heads");
  for (int b = 0; b < set.branches; ++b)
    if (static_cast<int>(set.on_branch(b).size()) != g.heads()[b].anchors)
      throw Error(ErrorKind::SplitMismatch,
                  "branch " + std::to_string(b) + " anchor count does not match its head");

  const Size2 image_size{image.h(), image.w()};
  const SignatureMap sigs = infer_signatures(g);
  int max_stride = 1;
  for (const auto& [id, s] : sigs) max_stride = std::max(max_stride, s.stride);
  const NodeValues values = forward_all(g, w, pad_to_multiple(image, max_stride));

  std::vector<Proposal> proposals = detail::gather_proposals(g, values, sigs, set, image_size);
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const Proposal& a, const Proposal& b) { return a.s_mhn > b.s_mhn; });
  if (static_cast<int>(proposals.size()) > cfg.top_k) proposals.resize(cfg.top_k);

  std::vector<Detection> dets;
  dets.reserve(proposals.size());
  if (g.rcnn() && !proposals.empty()) {
    const RcnnHead& rc = *g.rcnn();
    const ArchGraph head = rcnn_head_graph(g);
    const Tensor4& src = values.at(rc.source);
    const int stride = sigs.at(rc.source).stride;
    const int cells = src.c() * rc.roi.h * rc.roi.w;
    Tensor4 batch({static_cast<int>(proposals.size()), cells, 1, 1});
    const Box extent{0.0, 0.0, double(src.w()) * stride, double(src.h()) * stride};
    for (std::size_t k = 0; k < proposals.size(); ++k) {
      const Box& p = proposals[k].box;
      const Box inside{std::max(p.x1, extent.x1), std::max(p.y1, extent.y1),
                       std::min(p.x2, extent.x2), std::min(p.y2, extent.y2)};
      if (!inside.valid()) continue;  // no feature cells under the box: zeros
      const Tensor4 pooled = roi_pool(src, inside, stride, rc.roi);
      std::copy(pooled.data().begin(), pooled.data().end(),
                batch.data().begin() + static_cast<std::ptrdiff_t>(k * cells));
    }
    const NodeValues out = forward_all(head, w, batch);
    const Tensor4& cls = out.at("rcnn-cls");
    const Tensor4& reg = out.at("rcnn-reg");
    for (std::size_t k = 0; k < proposals.size(); ++k) {
      const int n = static_cast<int>(k);
      const Proposal& p = proposals[k];
      Detection d;
      const Deltas t{reg.at(n, 0, 0, 0), reg.at(n, 1, 0, 0), reg.at(n, 2, 0, 0),
                     reg.at(n, 3, 0, 0)};
      const Box refined = clip_box(decode_box(p.box, t), image_size);
      d.box = refined.valid() ? refined : p.box;
      d.s_rcnn = detail::softmax_fg(cls.at(n, 0, 0, 0), cls.at(n, 1, 0, 0));
      d.s_mhn = p.s_mhn;
      d.branch = p.branch;
      dets.push_back(d);
    }
  } else {
    for (const Proposal& p : proposals) dets.push_back({p.box, p.s_mhn, p.s_mhn, 0.0, 0.0, p.branch});
  }
  for (Detection& d : dets) {
    d.lambda = cfg.lambda;
    d.s_f = fuse_scores(d.s_rcnn, d.s_mhn, cfg.lambda);
  }
  return nms(dets, cfg.nms_iou, cfg.max_out);
}

}  // namespace mhn
