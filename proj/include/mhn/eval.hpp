#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mhn/box.hpp"
#include "mhn/error.hpp"

namespace mhn {

struct GroundTruthBox {
  Box box;
  bool ignore = false;
  // KITTI-style occlusion level, 0 (visible) .. 3 (unknown).
  int occlusion = 0;

  double height() const { return box.height(); }
};

struct ScoredBox {
  Box box;
  double score = 0.0;
};

// Height band [min_height, max_height) plus an occlusion ceiling. Boxes
// outside the band become ignore regions rather than disappearing.
struct SubsetFilter {
  double min_height = 0.0;
  std::optional<double> max_height;
  int max_occlusion = 3;

  void check() const {
    if (max_height && !(min_height < *max_height))
      throw Error(ErrorKind::InvalidRange, "subset needs min_height < max_height");
  }
};

/// Named subsets. Occlusion uses the KITTI levels: 0 visible, 1 partly,
/// 2 largely occluded, 3 unknown.
inline const std::map<std::string, SubsetFilter>& named_subsets() {
  static const std::map<std::string, SubsetFilter> subsets{
      {"all", {20.0, std::nullopt, 3}},
      {"reasonable", {50.0, std::nullopt, 1}},
      {"reasonable_small", {50.0, 75.0, 1}},
      {"reasonable_occ", {50.0, std::nullopt, 2}},
      {"small", {25.0, 60.0, 3}},
      {"medium", {60.0, 120.0, 3}},
      {"large", {120.0, std::nullopt, 3}},
  };
  return subsets;
}

inline std::vector<GroundTruthBox> subset_filter(std::vector<GroundTruthBox> gts,
                                                 const SubsetFilter& f) {
  f.check();
  for (GroundTruthBox& g : gts) {
    const double h = g.height();
    const bool in_band = h >= f.min_height && (!f.max_height || h < *f.max_height);
    if (!in_band || g.occlusion > f.max_occlusion) g.ignore = true;
  }
  return gts;
}

enum class DetOutcome { TruePositive, FalsePositive, Ignored };

struct MatchResult {
  std::vector<DetOutcome> detections;
  std::vector<bool> gt_matched;
};

/// Greedy matching of score-sorted detections. A detection takes the
/// unmatched active ground truth of highest IoU (>= threshold); failing that
/// it is absorbed by the best ignore region (neither TP nor FP); otherwise
/// it is a false positive. IoU ties go to the earlier ground truth.
inline MatchResult match(const std::vector<ScoredBox>& dets, const std::vector<GroundTruthBox>& gts,
                         double iou_threshold) {
  MatchResult r;
  r.gt_matched.assign(gts.size(), false);
  for (const ScoredBox& d : dets) {
    int best_active = -1, best_ignore = -1;
    double iou_active = iou_threshold, iou_ignore = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(d.box, gts[g].box);
      if (gts[g].ignore) {
        if (o >= iou_ignore && (best_ignore < 0 || o > iou_ignore)) best_ignore = int(g), iou_ignore = o;
      } else if (!r.gt_matched[g]) {
        if (o >= iou_active && (best_active < 0 || o > iou_active)) best_active = int(g), iou_active = o;
      }
    }
    if (best_active >= 0) {
      r.gt_matched[best_active] = true;
      r.detections.push_back(DetOutcome::TruePositive);
    } else if (best_ignore >= 0) {
      r.detections.push_back(DetOutcome::Ignored);
    } else {
      r.detections.push_back(DetOutcome::FalsePositive);
    }
  }
  return r;
}

struct EvalCurve {
  struct Point {
    double threshold = 0.0;
    int tp = 0;
    int fp = 0;
  };
  // Descending threshold; one point per distinct detection score.
  std::vector<Point> points;
  int n_gt = 0;
  int n_images = 0;
};

struct ImageEval {
  std::vector<ScoredBox> detections;
  std::vector<GroundTruthBox> ground_truth;
};

/// Matches every image and sweeps the score threshold over all detections.
inline EvalCurve build_curve(const std::vector<ImageEval>& images, double iou_threshold) {
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> pool;
  EvalCurve curve;
  curve.n_images = static_cast<int>(images.size());
  for (const ImageEval& img : images) {
    std::vector<ScoredBox> dets = img.detections;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    const MatchResult m = match(dets, img.ground_truth, iou_threshold);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (m.detections[i] != DetOutcome::Ignored)
        pool.push_back({dets[i].score, m.detections[i] == DetOutcome::TruePositive});
    for (const GroundTruthBox& g : img.ground_truth) curve.n_gt += g.ignore ? 0 : 1;
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (pool[i].tp ? tp : fp) += 1;
    if (i + 1 == pool.size() || pool[i + 1].score != pool[i].score)
      curve.points.push_back({pool[i].score, tp, fp});
  }
  return curve;
}

/// Interpolated AP: mean over `n_points` evenly spaced recall levels of the
/// best precision reached at recall >= level.
inline double average_precision(const EvalCurve& curve, int n_points = 11) {
  if (curve.n_gt <= 0) throw Error(ErrorKind::NoGroundTruth, "no active ground truth");
  if (n_points < 2) throw Error(ErrorKind::InvalidConfig, "need at least 2 recall points");
  double sum = 0.0;
  for (int k = 0; k < n_points; ++k) {
    const double level = static_cast<double>(k) / (n_points - 1);
    double best = 0.0;
    for (const auto& p : curve.points) {
      const double recall = static_cast<double>(p.tp) / curve.n_gt;
      const double precision = static_cast<double>(p.tp) / (p.tp + p.fp);
      if (recall >= level) best = std::max(best, precision);
    }
    sum += best;
  }
  return sum / n_points;
}

inline constexpr double kMissRateFloor = 1e-4;

/// FPPI references 10^-2, 10^-1.75, ..., 10^0.
inline std::vector<double> fppi_references() {
  std::vector<double> refs(9);
  for (int k = 0; k < 9; ++k) refs[k] = std::pow(10.0, -2.0 + 0.25 * k);
  return refs;
}

/// Log-average miss rate over FPPI in [0.01, 1]. At each reference the
/// miss rate of the lowest-threshold point with FPPI <= reference is used;
/// with no such point nothing has been detected yet and the miss rate is 1.
/// The result is the geometric mean of the miss rates floored at 1e-4.
inline double log_average_miss_rate(const EvalCurve& curve, int n_images) {
  if (curve.n_gt <= 0) throw Error(ErrorKind::NoGroundTruth, "no active ground truth");
  if (n_images <= 0) throw Error(ErrorKind::InvalidConfig, "n_images must be positive");
  double log_sum = 0.0;
  const auto refs = fppi_references();
  for (double ref : refs) {
    double miss = 1.0;
    for (const auto& p : curve.points) {
      const double fppi = static_cast<double>(p.fp) / n_images;
      if (fppi <= ref) miss = 1.0 - static_cast<double>(p.tp) / curve.n_gt;
    }
    log_sum += std::log(std::max(miss, kMissRateFloor));
  }
  return std::exp(log_sum / static_cast<double>(refs.size()));
}

}  // namespace mhn
