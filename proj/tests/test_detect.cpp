#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "mhn/mhn.hpp"
#include "oracles.hpp"

using namespace mhn;

namespace {

std::vector<Detection> random_dets(std::mt19937_64& rng, int n, bool grid_scores) {
  std::uniform_real_distribution<double> pos(0.0, 60.0), size(4.0, 30.0), score(0.0, 1.0);
  std::uniform_int_distribution<int> tick(0, 63);
  std::vector<Detection> d;
  for (int i = 0; i < n; ++i) {
    Detection x;
    const double x1 = std::floor(pos(rng)), y1 = std::floor(pos(rng));
    x.box = {x1, y1, x1 + std::floor(size(rng)), y1 + std::floor(size(rng))};
    x.s_rcnn = grid_scores ? tick(rng) / 64.0 : score(rng);
    x.s_mhn = grid_scores ? tick(rng) / 64.0 : score(rng);
    x.s_f = fuse_scores(x.s_rcnn, x.s_mhn, 0.5);
    d.push_back(x);
  }
  return d;
}

bool same_boxes(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].box == b[i].box) || a[i].s_f != b[i].s_f) return false;
  return true;
}

}  // namespace

TEST(Iou, Basics) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0);
  EXPECT_EQ(iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);
  EXPECT_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
}

TEST(Decode, IdentityAndKnown) {
  const Box a{10, 20, 30, 80};
  EXPECT_EQ(decode_box(a, {}), a);
  const Box b = decode_box({0, 0, 10, 20}, {0.1, 0.2, std::log(2.0), 0.0});
  EXPECT_NEAR(b.x1, -4, 1e-12);
  EXPECT_NEAR(b.y1, 4, 1e-12);
  EXPECT_NEAR(b.x2, 16, 1e-12);
  EXPECT_NEAR(b.y2, 24, 1e-12);
  EXPECT_EQ(clip_box(b, {20, 10}), (Box{0, 4, 10, 20}));
}

TEST(Decode, NonFinite) {
  for (Deltas t : {Deltas{NAN, 0, 0, 0}, Deltas{0, 0, INFINITY, 0}, Deltas{0, 0, 0, 1e6}}) {
    try {
      decode_box({0, 0, 10, 10}, t);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::NonFiniteRegression);
    }
  }
}

TEST(Decode, Batch) {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {50, 50, 70, 90}};
  const std::vector<Deltas> deltas(2);
  const auto out = decode_boxes(anchors, deltas, {64, 64});
  EXPECT_EQ(out[0], anchors[0]);
  EXPECT_EQ(out[1], (Box{50, 50, 64, 64}));
  EXPECT_THROW(decode_boxes(anchors, std::vector<Deltas>(1), {64, 64}), Error);
}

TEST(Fusion, Values) {
  EXPECT_DOUBLE_EQ(fuse_scores(0.6, 0.8, 0.5), 1.0);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const double r = u(rng), m = u(rng), l = u(rng), dm = u(rng);
    EXPECT_EQ(fuse_scores(r, m, 0.0), r);
    EXPECT_GE(fuse_scores(r, m + dm, l), fuse_scores(r, m, l));
    EXPECT_GE(fuse_scores(r + dm, m, l), fuse_scores(r, m, l));
  }
}

TEST(Nms, SuppressesAtThreshold) {
  std::vector<Detection> d(2);
  d[0].box = {0, 0, 10, 10};
  d[0].s_f = 0.9;
  d[1].box = {5, 0, 15, 10};
  d[1].s_f = 0.8;
  EXPECT_EQ(nms(d, 1.0 / 3.0, 10).size(), 1u);
  EXPECT_EQ(nms(d, 0.34, 10).size(), 2u);
  EXPECT_EQ(nms(d, 0.34, 1).size(), 1u);
  EXPECT_THROW(nms(d, 0.0, 10), Error);
  EXPECT_THROW(nms(d, 1.0, 10), Error);
}

TEST(Nms, TieBreakOrder) {
  std::vector<Detection> d(3);
  d[0].box = {20, 5, 30, 15};
  d[1].box = {10, 9, 20, 19};
  d[2].box = {10, 2, 20, 12};
  for (auto& x : d) x.s_f = 0.5;
  const auto kept = nms(d, 0.9, 10);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].box, d[2].box);
  EXPECT_EQ(kept[1].box, d[1].box);
  EXPECT_EQ(kept[2].box, d[0].box);
}

TEST(Nms, MatchesOracle) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> n(0, 30), cap(1, 40);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  for (int t = 0; t < 200; ++t) {
    const auto d = random_dets(rng, n(rng), t % 2 == 0);
    const double th = thr(rng);
    const int m = cap(rng);
    EXPECT_TRUE(same_boxes(nms(d, th, m), oracle::nms(d, th, m)));
  }
}

TEST(Nms, RankingInvariantUnderMhnShift) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 100; ++t) {
    auto d = random_dets(rng, 25, true);
    const auto base = nms(d, 0.5, 100);
    const double shift = std::uniform_int_distribution<int>(-64, 64)(rng) / 64.0;
    for (auto& x : d) x.s_f = fuse_scores(x.s_rcnn, x.s_mhn + shift, 0.5);
    const auto moved = nms(d, 0.5, 100);
    ASSERT_EQ(base.size(), moved.size());
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(base[i].box, moved[i].box);
  }
}

TEST(Pipeline, ZeroWeightsBoundedOutput) {
  const ArchGraph g = fixture::toy_detector();
  PipelineConfig cfg;
  cfg.max_out = 30;
  const auto dets = detect_pipeline(g, constant_weights(g, 0.0f), Tensor4({1, 3, 64, 64}), cfg);
  EXPECT_LE(dets.size(), 30u);
  EXPECT_FALSE(dets.empty());
  for (const Detection& d : dets) {
    EXPECT_TRUE(d.box.valid());
    EXPECT_GE(d.box.x1, 0);
    EXPECT_LE(d.box.x2, 64);
    EXPECT_DOUBLE_EQ(d.s_rcnn, 0.5);
    EXPECT_DOUBLE_EQ(d.s_mhn, 0.5);
    EXPECT_DOUBLE_EQ(d.s_f, 0.75);
  }
}

TEST(Pipeline, SingleHotGivesOneDominantDetection) {
  for (bool rcnn : {false, true}) {
    const ArchGraph g = fixture::toy_detector(rcnn);
    const auto dets = detect_pipeline(g, fixture::single_hot_weights(g),
                                      fixture::single_hot_image(64, 64, 20, 36), PipelineConfig{});
    ASSERT_GE(dets.size(), 2u);
    EXPECT_GT(dets[0].s_mhn, 0.99);
    EXPECT_GT(dets[0].s_f - dets[1].s_f, 0.2);
    EXPECT_EQ(dets[0].branch, 0);
    // Cell (2, 4) of the stride-8 map, anchor 0.
    EXPECT_DOUBLE_EQ(dets[0].box.center_x(), 36.0);
    EXPECT_DOUBLE_EQ(dets[0].box.center_y(), 20.0);
    for (std::size_t i = 1; i < dets.size(); ++i) EXPECT_DOUBLE_EQ(dets[i].s_mhn, 0.5);
  }
}

TEST(Pipeline, LambdaZeroUsesSecondStageOnly) {
  const ArchGraph g = fixture::toy_detector();
  PipelineConfig cfg;
  cfg.lambda = 0.0;
  const auto dets = detect_pipeline(g, init_weights(g, 17), Tensor4({1, 3, 48, 48}, 0.5f), cfg);
  for (const Detection& d : dets) EXPECT_EQ(d.s_f, d.s_rcnn);
}

TEST(Pipeline, PadsToLargestStride) {
  const ArchGraph g = fixture::toy_detector();
  const auto dets = detect_pipeline(g, init_weights(g, 17), Tensor4({1, 3, 37, 70}, 0.5f), {});
  ASSERT_FALSE(dets.empty());
  for (const Detection& d : dets) {
    EXPECT_LE(d.box.x2, 70.0);
    EXPECT_LE(d.box.y2, 37.0);
  }
}

TEST(Pipeline, Deterministic) {
  const ArchGraph g = fixture::toy_detector();
  const WeightStore w = init_weights(g, 17);
  std::mt19937_64 rng(3);
  Tensor4 x({1, 3, 64, 64});
  for (float& v : x.data()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  const auto a = detect_pipeline(g, w, x, {});
  const auto b = detect_pipeline(g, w, x, {});
  EXPECT_TRUE(same_boxes(a, b));
}

TEST(Pipeline, ConfigErrors) {
  const ArchGraph g = fixture::toy_detector(false);
  const WeightStore w = constant_weights(g, 0.0f);
  PipelineConfig cfg;
  cfg.anchors.branch_split = {4, 3, 2};
  try {
    detect_pipeline(g, w, Tensor4({1, 3, 32, 32}), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SplitMismatch);
  }
  EXPECT_THROW(detect_pipeline(build_mhn(toy_backbone()), w, Tensor4({1, 3, 32, 32}), {}), Error);
  EXPECT_THROW(detect_pipeline(g, w, Tensor4({2, 3, 32, 32}), {}), Error);
}
