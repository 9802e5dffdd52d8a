#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "mhn/box.hpp"
#include "mhn/error.hpp"

namespace mhn {

struct AnchorConfig {
  double s_min = 30.0;
  double s_max = 480.0;
  int n_anchors = 9;
  // Anchor width over height.
  double aspect_ratio = 0.41;
  // Anchors per branch, smallest scales first.
  std::vector<int> branch_split{3, 3, 3};
};

/// Anchor heights: the log range [s_min, s_max] cut into N equal bins, one
/// anchor at the centre of each bin,
///   s_n = s_min * (s_max / s_min)^((n - 0.5) / N),  n = 1..N.
inline std::vector<double> anchor_scales(const AnchorConfig& cfg) {
  if (!(cfg.s_min > 0.0) || !std::isfinite(cfg.s_max) || cfg.s_min > cfg.s_max)
    throw Error(ErrorKind::InvalidRange, "need 0 < s_min <= s_max");
  if (cfg.n_anchors < 1) throw Error(ErrorKind::InvalidRange, "need at least one anchor");
  const double ratio = cfg.s_max / cfg.s_min;
  std::vector<double> scales(cfg.n_anchors);
  for (int n = 1; n <= cfg.n_anchors; ++n)
    scales[n - 1] = cfg.s_min * std::pow(ratio, (n - 0.5) / cfg.n_anchors);
  return scales;
}

struct Anchor {
  int branch = 0;
  double width = 0.0;
  double height = 0.0;
};

struct AnchorSet {
  std::vector<double> scales;
  std::vector<Anchor> anchors;  // ascending scale, grouped by branch
  int branches = 0;

  std::vector<Anchor> on_branch(int branch) const {
    std::vector<Anchor> out;
    for (const Anchor& a : anchors)
      if (a.branch == branch) out.push_back(a);
    return out;
  }
};

/// Hands the smallest scales to branch 0 (bran-s), the next block to branch
/// 1, and so on.
inline AnchorSet assign_branches(const std::vector<double>& scales,
                                 const std::vector<int>& branch_split, double aspect_ratio) {
  if (!(aspect_ratio > 0.0)) throw Error(ErrorKind::InvalidRange, "aspect ratio must be positive");
  for (int c : branch_split)
    if (c < 0) throw Error(ErrorKind::SplitMismatch, "negative branch count");
  const int total = std::accumulate(branch_split.begin(), branch_split.end(), 0);
  if (total != static_cast<int>(scales.size()))
    throw Error(ErrorKind::SplitMismatch, "branch split sums to " + std::to_string(total) +
                                              " but there are " +
                                              std::to_string(scales.size()) + " scales");
  AnchorSet set;
  set.scales = scales;
  set.branches = static_cast<int>(branch_split.size());
  std::size_t k = 0;
  for (int b = 0; b < set.branches; ++b)
    for (int j = 0; j < branch_split[b]; ++j, ++k)
      set.anchors.push_back({b, scales[k] * aspect_ratio, scales[k]});
  return set;
}

/// N anchors over `branches` branches as evenly as possible; leftover
/// anchors go to the largest-scale branches.
inline std::vector<int> even_split(int n_anchors, int branches = 3) {
  if (n_anchors < 1 || branches < 1)
    throw Error(ErrorKind::InvalidRange, "need at least one anchor and one branch");
  std::vector<int> split(branches, n_anchors / branches);
  for (int k = 0; k < n_anchors % branches; ++k) ++split[branches - 1 - k];
  return split;
}

inline AnchorSet make_anchor_set(const AnchorConfig& cfg) {
  return assign_branches(anchor_scales(cfg), cfg.branch_split, cfg.aspect_ratio);
}

/// Tiles the anchors of `branch` over a feat_h x feat_w grid. Cell (i, j)
/// is centred at ((j + 0.5) * stride, (i + 0.5) * stride); output order is
/// row, column, anchor. Boxes are not clipped.
inline std::vector<Box> grid_anchors(const AnchorSet& set, int branch, int stride, int feat_h,
                                     int feat_w) {
  if (stride < 1) throw Error(ErrorKind::InvalidRange, "stride must be >= 1");
  const std::vector<Anchor> local = set.on_branch(branch);
  std::vector<Box> boxes;
  boxes.reserve(static_cast<std::size_t>(std::max(feat_h, 0)) * std::max(feat_w, 0) * local.size());
  for (int i = 0; i < feat_h; ++i)
    for (int j = 0; j < feat_w; ++j) {
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      for (const Anchor& a : local)
        boxes.push_back({cx - 0.5 * a.width, cy - 0.5 * a.height, cx + 0.5 * a.width,
                         cy + 0.5 * a.height});
    }
  return boxes;
}

}  // namespace mhn
