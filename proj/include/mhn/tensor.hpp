#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mhn/archgraph.hpp"
#include "mhn/box.hpp"
#include "mhn/error.hpp"

namespace mhn {

struct Shape4 {
  int n = 1, c = 1, h = 1, w = 1;
  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Dense NCHW float tensor, row-major.
class Tensor4 {
 public:
  Tensor4() : Tensor4(Shape4{}) {}

  explicit Tensor4(Shape4 shape, float fill = 0.0f) : shape_(shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
      throw Error(ErrorKind::ShapeMismatch, "tensor dims must be positive, got " + shape.str());
    data_.assign(shape.count(), fill);
  }

  Tensor4(Shape4 shape, std::vector<float> data) : Tensor4(shape) {
    if (data.size() != shape.count())
      throw Error(ErrorKind::ShapeMismatch, "data length " + std::to_string(data.size()) +
                                                " does not match " + shape.str());
    data_ = std::move(data);
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  float& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  float at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  // Same data under another shape with the same element count.
  Tensor4 reshaped(Shape4 shape) const { return Tensor4(shape, data_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

struct Conv2dParams {
  int stride = 1;
  int dilation = 1;
  Size2 padding{0, 0};
};

inline int conv_out_size(int in, int k, int stride, int dilation, int pad) {
  const int span = in + 2 * pad - dilation * (k - 1) - 1;
  return span < 0 ? 0 : span / stride + 1;
}

/// Zero-padded cross-correlation. `weight` is (out_c, in_c, kh, kw).
/// Each output value sums taps in (channel, kh, kw) order, then adds bias.
inline Tensor4 conv2d(const Tensor4& x, const Tensor4& weight, std::span<const float> bias,
                      const Conv2dParams& p) {
  const Shape4& ws = weight.shape();
  if (ws.c != x.c())
    throw Error(ErrorKind::ShapeMismatch, "conv expects " + std::to_string(ws.c) +
                                              " input channels, got " + std::to_string(x.c()));
  if (bias.size() != static_cast<std::size_t>(ws.n))
    throw Error(ErrorKind::ShapeMismatch, "bias length " + std::to_string(bias.size()) +
                                              " for " + std::to_string(ws.n) + " channels");
  if (p.stride < 1 || p.dilation < 1 || p.padding.h < 0 || p.padding.w < 0)
    throw Error(ErrorKind::ShapeMismatch, "invalid conv parameters");
  const int oh = conv_out_size(x.h(), ws.h, p.stride, p.dilation, p.padding.h);
  const int ow = conv_out_size(x.w(), ws.w, p.stride, p.dilation, p.padding.w);
  if (oh < 1 || ow < 1)
    throw Error(ErrorKind::ShapeMismatch, "conv output would be empty for input " +
                                              x.shape().str());
  Tensor4 out({x.n(), ws.n, oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int oc = 0; oc < ws.n; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          float acc = 0.0f;
          for (int ic = 0; ic < ws.c; ++ic)
            for (int ky = 0; ky < ws.h; ++ky) {
              const int iy = oy * p.stride + ky * p.dilation - p.padding.h;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < ws.w; ++kx) {
                const int ix = ox * p.stride + kx * p.dilation - p.padding.w;
                if (ix < 0 || ix >= x.w()) continue;
                acc += x.at(n, ic, iy, ix) * weight.at(oc, ic, ky, kx);
              }
            }
          out.at(n, oc, oy, ox) = acc + bias[oc];
        }
  return out;
}

/// Max pooling; padded positions never win.
inline Tensor4 maxpool2d(const Tensor4& x, Size2 kernel = {2, 2}, int stride = 2,
                         Size2 padding = {0, 0}) {
  if (kernel.h < 1 || kernel.w < 1 || stride < 1 || padding.h < 0 || padding.w < 0 ||
      padding.h >= kernel.h || padding.w >= kernel.w)
    throw Error(ErrorKind::ShapeMismatch, "invalid pool parameters");
  const int oh = conv_out_size(x.h(), kernel.h, stride, 1, padding.h);
  const int ow = conv_out_size(x.w(), kernel.w, stride, 1, padding.w);
  if (oh < 1 || ow < 1)
    throw Error(ErrorKind::ShapeMismatch, "pool window larger than input " + x.shape().str());
  Tensor4 out({x.n(), x.c(), oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          for (int ky = 0; ky < kernel.h; ++ky) {
            const int iy = oy * stride + ky - padding.h;
            if (iy < 0 || iy >= x.h()) continue;
            for (int kx = 0; kx < kernel.w; ++kx) {
              const int ix = ox * stride + kx - padding.w;
              if (ix < 0 || ix >= x.w()) continue;
              best = std::max(best, x.at(n, c, iy, ix));
            }
          }
          out.at(n, c, oy, ox) = best;
        }
  return out;
}

namespace detail {

struct LerpTap {
  int i0, i1;
  float frac;
};

// Half-pixel-centre source coordinate for a x2 upscale, clamped to the map.
inline LerpTap upsample_tap(int dst, int in_size) {
  float src = (static_cast<float>(dst) + 0.5f) * 0.5f - 0.5f;
  if (src < 0.0f) src = 0.0f;
  int i0 = static_cast<int>(src);
  if (i0 > in_size - 1) i0 = in_size - 1;
  const int i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, src - static_cast<float>(i0)};
}

}  // namespace detail

/// Bilinear x2 upsampling, half-pixel centres (align_corners = false).
inline Tensor4 upsample_bilinear_x2(const Tensor4& x) {
  Tensor4 out({x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  std::vector<detail::LerpTap> ty(out.h()), tx(out.w());
  for (int y = 0; y < out.h(); ++y) ty[y] = detail::upsample_tap(y, x.h());
  for (int xx = 0; xx < out.w(); ++xx) tx[xx] = detail::upsample_tap(xx, x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < out.h(); ++y) {
        const auto& a = ty[y];
        for (int xx = 0; xx < out.w(); ++xx) {
          const auto& b = tx[xx];
          const float top = (1.0f - b.frac) * x.at(n, c, a.i0, b.i0) + b.frac * x.at(n, c, a.i0, b.i1);
          const float bot = (1.0f - b.frac) * x.at(n, c, a.i1, b.i0) + b.frac * x.at(n, c, a.i1, b.i1);
          out.at(n, c, y, xx) = (1.0f - a.frac) * top + a.frac * bot;
        }
      }
  return out;
}

inline Tensor4 elementwise_add(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape())
    throw Error(ErrorKind::ShapeMismatch,
                "add of " + a.shape().str() + " and " + b.shape().str());
  Tensor4 out = a;
  auto o = out.data();
  auto bb = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bb[i];
  return out;
}

/// Zero-pads bottom and right so height and width are multiples of `m`.
inline Tensor4 pad_to_multiple(const Tensor4& x, int m) {
  if (m < 1) throw Error(ErrorKind::InvalidRange, "pad multiple must be >= 1");
  const int h = (x.h() + m - 1) / m * m, w = (x.w() + m - 1) / m * m;
  if (h == x.h() && w == x.w()) return x;
  Tensor4 out({x.n(), x.c(), h, w});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx) out.at(n, c, y, xx) = x.at(n, c, y, xx);
  return out;
}

inline Tensor4 relu(Tensor4 x) {
  for (float& v : x.data()) v = std::max(v, 0.0f);
  return x;
}

namespace detail {

// Round half away from zero.
inline int round_half_away(double v) { return static_cast<int>(std::round(v)); }

// Start of bin k when `len` cells are split into `bins` parts, rounded.
inline int bin_edge(int k, int len, int bins) { return (2 * k * len + bins) / (2 * bins); }

}  // namespace detail

/// ROI max pooling. The roi is in input-pixel coordinates; it is scaled by
/// 1 / feat_stride, rounded, clamped to the map, and split into out.h x
/// out.w bins with rounded proportional edges. Empty bins produce 0.
inline Tensor4 roi_pool(const Tensor4& feat, const Box& roi, int feat_stride, Size2 out,
                        int batch = 0) {
  if (feat_stride < 1 || out.h < 1 || out.w < 1)
    throw Error(ErrorKind::ShapeMismatch, "invalid roi_pool parameters");
  if (batch < 0 || batch >= feat.n())
    throw Error(ErrorKind::ShapeMismatch, "roi batch index out of range");
  if (!roi.finite() || !roi.valid())
    throw Error(ErrorKind::DegenerateROI, "roi has no positive area");
  const double extent_w = static_cast<double>(feat.w()) * feat_stride;
  const double extent_h = static_cast<double>(feat.h()) * feat_stride;
  if (roi.x2 <= 0.0 || roi.y2 <= 0.0 || roi.x1 >= extent_w || roi.y1 >= extent_h)
    throw Error(ErrorKind::DegenerateROI, "roi lies outside the feature map");

  auto span = [&](double a, double b, int limit) {
    int lo = std::clamp(detail::round_half_away(a / feat_stride), 0, limit);
    int hi = std::clamp(detail::round_half_away(b / feat_stride), 0, limit);
    if (hi <= lo) {
      if (lo < limit) hi = lo + 1;
      else lo = limit - 1, hi = limit;
    }
    return std::pair{lo, hi};
  };
  const auto [x0, x1] = span(roi.x1, roi.x2, feat.w());
  const auto [y0, y1] = span(roi.y1, roi.y2, feat.h());

  Tensor4 pooled({1, feat.c(), out.h, out.w});
  for (int c = 0; c < feat.c(); ++c)
    for (int by = 0; by < out.h; ++by) {
      const int ys = y0 + detail::bin_edge(by, y1 - y0, out.h);
      const int ye = y0 + detail::bin_edge(by + 1, y1 - y0, out.h);
      for (int bx = 0; bx < out.w; ++bx) {
        const int xs = x0 + detail::bin_edge(bx, x1 - x0, out.w);
        const int xe = x0 + detail::bin_edge(bx + 1, x1 - x0, out.w);
        if (ys >= ye || xs >= xe) {
          pooled.at(0, c, by, bx) = 0.0f;
          continue;
        }
        float best = -std::numeric_limits<float>::infinity();
        for (int y = ys; y < ye; ++y)
          for (int x = xs; x < xe; ++x) best = std::max(best, feat.at(batch, c, y, x));
        pooled.at(0, c, by, bx) = best;
      }
    }
  return pooled;
}

}  // namespace mhn
