// Shared constructed fixtures.
#pragma once

#include <random>

#include "mhn/mhn.hpp"

namespace fixture {

using namespace mhn;

// Toy MHN with heads and a second stage, as `infer` builds it by default.
inline ArchGraph toy_detector(bool rcnn = true) {
  ArchGraph g = attach_heads(build_mhn(toy_backbone()), HeadSpec{3, {}, 0});
  if (rcnn) g = attach_rcnn_head(g, {7, 7}, 256);
  return g;
}

// Every conv copies channel 0 through its centre tap, except the lateral
// paths out of bran-m and bran-l, which are zeroed, so a single hot input
// pixel reaches exactly one bran-s cell. The bran-s classifier turns that
// cell into a confident foreground for anchor 0; all other logits are 0.
inline WeightStore single_hot_weights(const ArchGraph& g) {
  WeightStore w = constant_weights(g, 0.0f);
  for (auto& [key, cw] : w.entries()) {
    const Shape4 s = cw.kernel.shape();
    auto* mutable_cw = w.find(key);
    if (key == "lat-m" || key == "lat-l" || key == "lat-mc") continue;
    if (key.rfind("rcnn-", 0) == 0 || key.find("-cls") != std::string::npos ||
        key.find("-reg") != std::string::npos)
      continue;
    mutable_cw->kernel.at(0, 0, s.h / 2, s.w / 2) = 1.0f;
  }
  w.find("bran-s-cls")->kernel.at(1, 0, 0, 0) = 10.0f;
  return w;
}

// 1 x 3 x h x w image, zero except channel 0 at (row, col).
inline Tensor4 single_hot_image(int h, int w, int row, int col) {
  Tensor4 x({1, 3, h, w});
  x.at(0, 0, row, col) = 1.0f;
  return x;
}

// Valid random backbone: 3..6 blocks before the split, odd kernels 3 or 5.
inline BackboneSpec random_backbone(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  BackboneSpec b;
  b.split_block_index = pick(3, 6);
  const int extra = pick(0, 1);
  int ch = pick(1, 4);
  for (int k = 1; k <= b.split_block_index + extra; ++k) {
    if (k <= b.split_block_index - 2) ch += pick(0, 3);
    b.blocks.push_back({pick(1, 3), ch});
  }
  b.kernel = {2 * pick(1, 2) + 1, 2 * pick(1, 2) + 1};
  b.in_channels = pick(1, 3);
  return b;
}

}  // namespace fixture
