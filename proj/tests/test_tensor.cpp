#include <gtest/gtest.h>

#include <random>

#include "mhn/mhn.hpp"
#include "oracles.hpp"

using namespace mhn;

namespace {

Tensor4 counting(Shape4 s) {
  Tensor4 t(s);
  float v = 0.0f;
  for (float& x : t.data()) x = v++;
  return t;
}

// Small integers: every sum and product stays exact in float.
Tensor4 random_int(std::mt19937_64& rng, Shape4 s, int lo = -4, int hi = 4) {
  std::uniform_int_distribution<int> d(lo, hi);
  Tensor4 t(s);
  for (float& x : t.data()) x = static_cast<float>(d(rng));
  return t;
}

Tensor4 random_real(std::mt19937_64& rng, Shape4 s) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Tensor4 t(s);
  for (float& x : t.data()) x = d(rng);
  return t;
}

void expect_near(const Tensor4& a, const Tensor4& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], tol) << i;
}

}  // namespace

TEST(Tensor4, ShapeAndIndexing) {
  Tensor4 t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  t.at(1, 2, 3, 4) = 7.0f;
  EXPECT_EQ(t.data().back(), 7.0f);
  EXPECT_THROW(Tensor4({0, 1, 1, 1}), Error);
  EXPECT_THROW(Tensor4({1, 1, 2, 2}, std::vector<float>(3)), Error);
  EXPECT_TRUE(t.all_finite());
}

TEST(Conv2d, HandExample) {
  // 3x3 all-ones kernel over the 4x4 counting grid, padding 1, centre cell.
  const Tensor4 x = counting({1, 1, 4, 4});
  const Tensor4 w({1, 1, 3, 3}, 1.0f);
  const std::vector<float> b{0.5f};
  const Tensor4 y = conv2d(x, w, b, {1, 1, {1, 1}});
  EXPECT_EQ(y.shape(), (Shape4{1, 1, 4, 4}));
  EXPECT_EQ(y.at(0, 0, 1, 1), 0 + 1 + 2 + 4 + 5 + 6 + 8 + 9 + 10 + 0.5f);
  EXPECT_EQ(y.at(0, 0, 0, 0), 0 + 1 + 4 + 5 + 0.5f);
}

TEST(Conv2d, ShapeErrors) {
  const Tensor4 x({1, 2, 5, 5});
  EXPECT_THROW(conv2d(x, Tensor4({1, 3, 3, 3}), std::vector<float>{0}, {}), Error);
  EXPECT_THROW(conv2d(x, Tensor4({1, 2, 3, 3}), std::vector<float>{0, 0}, {}), Error);
  EXPECT_THROW(conv2d(x, Tensor4({1, 2, 7, 7}), std::vector<float>{0}, {}), Error);
}

TEST(Conv2d, MatchesOracleIntegerExact) {
  std::mt19937_64 rng(1);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  int cases = 0;
  while (cases < 150) {
    const int k = pick(1, 3), s = pick(1, 2), d = pick(1, 3), p = pick(0, 3);
    const Shape4 xs{pick(1, 2), pick(1, 3), pick(3, 9), pick(3, 9)};
    if (conv_out_size(xs.h, k, s, d, p) < 1 || conv_out_size(xs.w, k, s, d, p) < 1) continue;
    const Tensor4 x = random_int(rng, xs);
    const Tensor4 w = random_int(rng, {pick(1, 3), xs.c, k, k});
    std::vector<float> b(w.n());
    for (float& v : b) v = static_cast<float>(pick(-3, 3));
    const Tensor4 got = conv2d(x, w, b, {s, d, {p, p}});
    EXPECT_EQ(got, oracle::conv2d(x, w, b, s, d, {p, p}));
    ++cases;
  }
}

TEST(Conv2d, MatchesOracleReal) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const Tensor4 x = random_real(rng, {1, 3, 8, 7});
    const Tensor4 w = random_real(rng, {2, 3, 3, 2});
    const std::vector<float> b{0.25f, -0.5f};
    expect_near(conv2d(x, w, b, {1, 2, {2, 1}}), oracle::conv2d(x, w, b, 1, 2, {2, 1}), 1e-6);
  }
}

TEST(MaxPool, HandExample) {
  const Tensor4 y = maxpool2d(counting({1, 1, 4, 4}));
  EXPECT_EQ(y, Tensor4({1, 1, 2, 2}, std::vector<float>{5, 7, 13, 15}));
}

TEST(MaxPool, PaddingNeverWins) {
  const Tensor4 x({1, 1, 2, 2}, -3.0f);
  const Tensor4 y = maxpool2d(x, {2, 2}, 1, {1, 1});
  for (float v : y.data()) EXPECT_EQ(v, -3.0f);
  EXPECT_THROW(maxpool2d(x, {2, 2}, 1, {2, 2}), Error);
}

TEST(MaxPool, MatchesOracle) {
  std::mt19937_64 rng(3);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int t = 0; t < 150; ++t) {
    const int k = pick(2, 3), s = pick(1, 3), p = pick(0, k - 1);
    const Tensor4 x = random_int(rng, {pick(1, 2), pick(1, 3), pick(k, 9), pick(k, 9)}, -50, 50);
    EXPECT_EQ(maxpool2d(x, {k, k}, s, {p, p}), oracle::maxpool(x, {k, k}, s, {p, p}));
  }
}

TEST(Upsample, HandExample) {
  const Tensor4 y = upsample_bilinear_x2(Tensor4({1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3}));
  const std::vector<float> want{0,   .25f, .75f,  1,     .5f, .75f, 1.25f, 1.5f,
                                1.5f, 1.75f, 2.25f, 2.5f, 2,   2.25f, 2.75f, 3};
  EXPECT_EQ(y, Tensor4({1, 1, 4, 4}, want));
}

TEST(Upsample, MatchesOracle) {
  std::mt19937_64 rng(4);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int t = 0; t < 100; ++t) {
    // Multiples of 16 keep every quarter-weight product exact.
    Tensor4 x = random_int(rng, {pick(1, 2), pick(1, 2), pick(1, 6), pick(1, 6)}, -8, 8);
    for (float& v : x.data()) v *= 16.0f;
    EXPECT_EQ(upsample_bilinear_x2(x), oracle::upsample_x2(x));
  }
  for (int t = 0; t < 100; ++t) {
    const Tensor4 x = random_real(rng, {1, 2, pick(1, 6), pick(1, 6)});
    expect_near(upsample_bilinear_x2(x), oracle::upsample_x2(x), 1e-6);
  }
}

TEST(AddRelu, Basics) {
  const Tensor4 a({1, 1, 1, 3}, std::vector<float>{-1, 0, 2});
  const Tensor4 b({1, 1, 1, 3}, std::vector<float>{1, -2, 2});
  EXPECT_EQ(elementwise_add(a, b), Tensor4({1, 1, 1, 3}, std::vector<float>{0, -2, 4}));
  EXPECT_EQ(relu(a), Tensor4({1, 1, 1, 3}, std::vector<float>{0, 0, 2}));
  EXPECT_THROW(elementwise_add(a, Tensor4({1, 1, 3, 1})), Error);
}

TEST(Pad, ToMultiple) {
  const Tensor4 x = counting({1, 1, 3, 5});
  const Tensor4 y = pad_to_multiple(x, 4);
  EXPECT_EQ(y.shape(), (Shape4{1, 1, 4, 8}));
  EXPECT_EQ(y.at(0, 0, 2, 4), 14.0f);
  EXPECT_EQ(y.at(0, 0, 3, 7), 0.0f);
  EXPECT_EQ(y.at(0, 0, 0, 5), 0.0f);
  EXPECT_EQ(pad_to_multiple(y, 4), y);
  EXPECT_THROW(pad_to_multiple(x, 0), Error);
}

TEST(RoiPool, HandExample) {
  const Tensor4 y = roi_pool(counting({1, 1, 4, 4}), Box{0, 0, 4, 4}, 1, {2, 2});
  EXPECT_EQ(y, Tensor4({1, 1, 2, 2}, std::vector<float>{5, 7, 13, 15}));
}

TEST(RoiPool, StrideAndClamp) {
  const Tensor4 f = counting({1, 1, 4, 4});
  // [8, 24) at stride 8 covers cells 1..2 and 3 is clamped off.
  EXPECT_EQ(roi_pool(f, Box{8, 8, 40, 40}, 8, {1, 1}).at(0, 0, 0, 0), 15.0f);
  // Collapsed span still reads one cell.
  EXPECT_EQ(roi_pool(f, Box{9, 9, 10, 10}, 8, {2, 2}).at(0, 0, 0, 0), 5.0f);
}

TEST(RoiPool, Degenerate) {
  const Tensor4 f({1, 1, 4, 4});
  for (const Box& b : {Box{5, 5, 5, 9}, Box{5, 9, 9, 5}, Box{100, 100, 120, 120}, Box{-9, -9, -1, -1}}) {
    try {
      roi_pool(f, b, 1, {2, 2});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::DegenerateROI);
    }
  }
}

TEST(RoiPool, MatchesOracle) {
  std::mt19937_64 rng(5);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> coord(-8.0, 72.0);
  int cases = 0;
  while (cases < 150) {
    const int stride = pick(1, 8);
    const Tensor4 f = random_int(rng, {1, pick(1, 3), pick(2, 9), pick(2, 9)}, -20, 20);
    double x1 = coord(rng), x2 = coord(rng), y1 = coord(rng), y2 = coord(rng);
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    const Box roi{x1, y1, x2, y2};
    if (!roi.valid() || x2 <= 0 || y2 <= 0 || x1 >= f.w() * stride || y1 >= f.h() * stride) continue;
    const Size2 out{pick(1, 7), pick(1, 7)};
    EXPECT_EQ(roi_pool(f, roi, stride, out), oracle::roi_pool(f, roi, stride, out));
    ++cases;
  }
}
