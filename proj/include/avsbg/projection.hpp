#pragma once

// Visual-to-audio projection: mask the coarsest motion features, encode them
// with two 3x3 convolutions, and decode a 128-d audio embedding per frame.

#include "avsbg/datamodel.hpp"
#include "avsbg/motion.hpp"

namespace avsbg {

inline constexpr int kMaskedChannels = kFusedChannels / 4;

enum class MaskSource { Predicted, GroundTruth };

struct ProjectionWeights {
  Var reduce_w, reduce_b;
  Var enc1_w, enc1_b, enc2_w, enc2_b;
  Var dec1_w, dec1_b, dec2_w, dec2_b;

  static ProjectionWeights create(ParamStore& store, int hidden = kAudioDim) {
    ProjectionWeights w;
    const int c = kMaskedChannels;
    w.reduce_w = store.uniform("projection.reduce.w", {c, kFusedChannels}, kFusedChannels, 3.0);
    w.reduce_b = store.zeros("projection.reduce.b", {c});
    w.enc1_w = store.uniform("projection.enc1.w", {c, c, 3, 3}, c * 9);
    w.enc1_b = store.zeros("projection.enc1.b", {c});
    w.enc2_w = store.uniform("projection.enc2.w", {c, c, 3, 3}, c * 9, 3.0);
    w.enc2_b = store.zeros("projection.enc2.b", {c});
    w.dec1_w = store.uniform("projection.dec1.w", {hidden, c}, c);
    w.dec1_b = store.zeros("projection.dec1.b", {hidden});
    w.dec2_w = store.uniform("projection.dec2.w", {kAudioDim, hidden}, hidden, 3.0);
    w.dec2_b = store.zeros("projection.dec2.b", {kAudioDim});
    return w;
  }
};

/// M' = reduce(Ẑ_4) * area-averaged mask, [T, C/4, h4, w4].
inline Var build_masked_feature(const Var& zhat4, const Var& mask, MaskSource source, const ProjectionWeights& w) {
  detail::require_rank(zhat4.value(), 4, "build_masked_feature");
  detail::require_rank(mask.value(), 3, "build_masked_feature");
  const int h4 = zhat4.dim(2), w4 = zhat4.dim(3);
  if (mask.dim(0) != zhat4.dim(0) || mask.dim(1) % h4 || mask.dim(2) % w4 || mask.dim(1) / h4 != mask.dim(2) / w4)
    throw ArgumentError("build_masked_feature: mask " + shape_str(mask.shape()) + " incompatible with features " +
                        shape_str(zhat4.shape()));
  for (double v : mask.value().values()) {
    // NaN predictions pass through so the loss reports them as non-finite
    const bool ok = source == MaskSource::GroundTruth ? (v == 0.0 || v == 1.0) : !(v < 0.0 || v > 1.0);
    if (!ok) throw ArgumentError("build_masked_feature: mask value out of range for its source");
  }
  const Var reduced = pointwise(zhat4, w.reduce_w, w.reduce_b);
  return spatial_scale(reduced, avg_pool(mask, mask.dim(1) / h4));
}

/// M' -> Ã [T, 128]: conv3x3, SiLU, conv3x3 (shape preserving), global pool,
/// then a two-layer perceptron.
inline Var reconstruct_audio(const Var& masked, const ProjectionWeights& w) {
  detail::require_rank(masked.value(), 4, "reconstruct_audio");
  const Var encoded = conv2d(silu(conv2d(masked, w.enc1_w, w.enc1_b, 1, 1)), w.enc2_w, w.enc2_b, 1, 1);
  const Var pooled = global_avg_pool(encoded);
  return linear(silu(linear(pooled, w.dec1_w, w.dec1_b)), w.dec2_w, w.dec2_b);
}

struct MaskChoice {
  Var mask;
  MaskSource source;
};

/// S4 reconstructs from the predicted probabilities, MS3 from the ground truth.
inline MaskChoice select_mask_source(Setting setting, const Var& predicted, const std::optional<Tensor>& gt) {
  if (setting == Setting::MS3) {
    if (!gt) throw ConfigError("MS3 projection requires ground-truth masks");
    return {Var::constant(*gt), MaskSource::GroundTruth};
  }
  return {predicted, MaskSource::Predicted};
}

}  // namespace avsbg
