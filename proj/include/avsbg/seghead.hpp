#pragma once

// Top-down segmentation decoder over the motion pyramid.

#include "avsbg/motion.hpp"

namespace avsbg {

struct MaskPrediction {
  Var logits;  // [T,H,W]
  Var probs;   // sigmoid(logits)
};

struct DecoderWeights {
  std::array<Var, kPyramidLevels> lateral_w, lateral_b;  // 1x1, C -> D
  std::array<Var, kPyramidLevels - 1> refine_w, refine_b;  // 3x3, D -> D, levels 3..1
  Var head_w, head_b;                                       // 1x1, D -> 1

  static DecoderWeights create(ParamStore& store, int width) {
    DecoderWeights w;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      const std::string name = "decoder.lateral" + std::to_string(i + 1);
      w.lateral_w[i] = store.uniform(name + ".w", {width, kFusedChannels}, kFusedChannels, 3.0);
      w.lateral_b[i] = store.zeros(name + ".b", {width});
    }
    for (std::size_t i = 0; i + 1 < kPyramidLevels; ++i) {
      const std::string name = "decoder.refine" + std::to_string(i + 1);
      w.refine_w[i] = store.uniform(name + ".w", {width, width, 3, 3}, width * 9);
      w.refine_b[i] = store.zeros(name + ".b", {width});
    }
    w.head_w = store.uniform("decoder.head.w", {1, width}, width, 3.0);
    w.head_b = store.zeros("decoder.head.b", {1});
    return w;
  }
};

/// Starts at level 4; each step upsamples x2, adds the lateral of the next
/// finer level and refines with a 3x3 convolution. The 1-channel head runs at
/// level-1 resolution and is upsampled x4 (both maps are linear, so this
/// equals upsampling the features first).
inline MaskPrediction decode(const MotionPyramid& pyr, const DecoderWeights& w, int out_h, int out_w) {
  Var x = pointwise(pyr.zhat[3], w.lateral_w[3], w.lateral_b[3]);
  for (int level = 2; level >= 0; --level) {
    const auto k = static_cast<std::size_t>(level);
    const Var& skip = pyr.zhat[k];
    x = resize_bilinear(x, skip.dim(2), skip.dim(3));
    x = add(x, pointwise(skip, w.lateral_w[k], w.lateral_b[k]));
    x = silu(conv2d(x, w.refine_w[k], w.refine_b[k], 1, 1));
  }
  const Var head = pointwise(x, w.head_w, w.head_b);  // [T,1,h1,w1]
  const Var up = resize_bilinear(head, out_h, out_w);
  MaskPrediction pred;
  pred.logits = reshape(up, {up.dim(0), out_h, out_w});
  pred.probs = sigmoid(pred.logits);
  return pred;
}

}  // namespace avsbg
