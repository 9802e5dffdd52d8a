#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mhn/mhn.hpp"

using namespace mhn;

namespace {

void expect_rel(double got, double want, double tol = 1e-12) {
  EXPECT_LE(std::abs(got - want), tol * std::abs(want)) << got << " vs " << want;
}

}  // namespace

TEST(AnchorScales, DefaultTable) {
  // Reference values computed in 50-digit arithmetic.
  const double want[] = {34.99587118728349742681078, 47.62203155904598424255117,
                         64.80358433353837019237585, 88.18406953653593108305252,
                         120.0,
                         163.2948000209252357106816, 222.2099309489497030091258,
                         302.3810519747695595441305, 411.4771117694749588238568};
  const auto s = anchor_scales({});
  ASSERT_EQ(s.size(), 9u);
  for (int i = 0; i < 9; ++i) expect_rel(s[i], want[i]);
}

TEST(AnchorScales, Properties) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lo(1.0, 100.0), span(1.0, 50.0), alpha(0.1, 10.0);
  std::uniform_int_distribution<int> count(1, 20);
  for (int t = 0; t < 100; ++t) {
    AnchorConfig c;
    c.s_min = lo(rng);
    c.s_max = c.s_min * span(rng);
    c.n_anchors = count(rng);
    const auto s = anchor_scales(c);
    const double ratio = std::pow(c.s_max / c.s_min, 1.0 / c.n_anchors);
    for (int n = 0; n < c.n_anchors; ++n) {
      // Geometric midpoint of bin n in log space.
      const double a = c.s_min * std::pow(ratio, n), b = c.s_min * std::pow(ratio, n + 1);
      expect_rel(s[n], std::sqrt(a * b), 1e-9);
      if (n > 0) expect_rel(s[n] / s[n - 1], ratio, 1e-9);
      EXPECT_GT(s[n], c.s_min);
      EXPECT_LT(s[n], c.s_max);
    }
    const double k = alpha(rng);
    AnchorConfig scaled = c;
    scaled.s_min *= k;
    scaled.s_max *= k;
    const auto ss = anchor_scales(scaled);
    for (int n = 0; n < c.n_anchors; ++n) expect_rel(ss[n], k * s[n], 1e-9);
  }
}

TEST(AnchorScales, Errors) {
  for (AnchorConfig c : {AnchorConfig{0, 10, 3, 0.41, {1, 1, 1}}, AnchorConfig{20, 10, 3, 0.41, {1, 1, 1}},
                         AnchorConfig{10, 20, 0, 0.41, {}}}) {
    try {
      anchor_scales(c);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidRange);
    }
  }
  AnchorConfig equal{50, 50, 4, 0.41, {}};
  for (double v : anchor_scales(equal)) EXPECT_EQ(v, 50.0);
}

TEST(Branches, EvenSplits) {
  EXPECT_EQ(even_split(9), (std::vector<int>{3, 3, 3}));
  EXPECT_EQ(even_split(12), (std::vector<int>{4, 4, 4}));
  EXPECT_EQ(even_split(10), (std::vector<int>{3, 3, 4}));
}

TEST(Branches, Assignment) {
  const AnchorSet set = make_anchor_set({});
  ASSERT_EQ(set.anchors.size(), 9u);
  for (int k = 0; k < 9; ++k) {
    EXPECT_EQ(set.anchors[k].branch, k / 3);
    EXPECT_DOUBLE_EQ(set.anchors[k].width, 0.41 * set.anchors[k].height);
  }
  AnchorConfig c12;
  c12.n_anchors = 12;
  c12.branch_split = {4, 4, 4};
  const AnchorSet s12 = make_anchor_set(c12);
  for (int b = 0; b < 3; ++b) EXPECT_EQ(s12.on_branch(b).size(), 4u);
  EXPECT_LT(s12.on_branch(0).back().height, s12.on_branch(1).front().height);

  try {
    assign_branches(anchor_scales({}), {3, 3, 2}, 0.41);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SplitMismatch);
  }
}

TEST(GridAnchors, CentresAndOrder) {
  AnchorConfig c;
  c.n_anchors = 3;
  c.branch_split = {1, 1, 1};
  const AnchorSet set = make_anchor_set(c);
  const auto boxes = grid_anchors(set, 0, 8, 2, 2);
  ASSERT_EQ(boxes.size(), 4u);
  const double centres[4][2] = {{4, 4}, {12, 4}, {4, 12}, {12, 12}};
  for (int k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(boxes[k].center_x(), centres[k][0]);
    EXPECT_DOUBLE_EQ(boxes[k].center_y(), centres[k][1]);
    EXPECT_NEAR(boxes[k].height(), set.anchors[0].height, 1e-12);
  }
  // Unclipped: a large anchor on a small grid leaves the image.
  EXPECT_LT(grid_anchors(set, 2, 8, 1, 1)[0].y1, 0.0);
  EXPECT_EQ(grid_anchors(make_anchor_set({}), 1, 16, 3, 5).size(), 3u * 5u * 3u);
}
