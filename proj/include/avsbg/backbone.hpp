#pragma once

// Toy stand-ins for the pretrained encoders with the same output contracts:
// a 4-level visual pyramid at strides 4/8/16/32 and a 128-d per-frame audio
// embedding.

#include <array>

#include "avsbg/ops.hpp"
#include "avsbg/params.hpp"

namespace avsbg {

inline constexpr int kAudioDim = 128;
inline constexpr int kPyramidLevels = 4;

struct BackboneConfig {
  std::array<int, kPyramidLevels> visual_channels{64, 128, 320, 512};
  std::array<int, 3> audio_channels{16, 32, 64};
};

/// Four levels F_i, each [T, C_i, H / 2^(i+1), W / 2^(i+1)] for i = 1..4.
struct FeaturePyramid {
  std::array<Var, kPyramidLevels> levels;
};

/// Spatial size of pyramid level i (1-based) for an H x W input.
inline std::pair<int, int> pyramid_level_size(int height, int width, int level) {
  return {height >> (level + 1), width >> (level + 1)};
}

inline void check_pyramid_input(int height, int width) {
  if (height <= 0 || width <= 0 || height % 32 || width % 32)
    throw ArgumentError("frame size " + std::to_string(height) + "x" + std::to_string(width) +
                        " is not divisible by 32");
}

struct VisualEncoderWeights {
  Var stem_w, stem_b;
  std::array<Var, kPyramidLevels> stage_w, stage_b;

  static VisualEncoderWeights create(ParamStore& store, const BackboneConfig& cfg) {
    VisualEncoderWeights w;
    const auto& c = cfg.visual_channels;
    w.stem_w = store.uniform("visual.stem.w", {c[0], 3, 4, 4}, 3 * 16);
    w.stem_b = store.zeros("visual.stem.b", {c[0]});
    for (int i = 0; i < kPyramidLevels; ++i) {
      const int cin = i == 0 ? c[0] : c[static_cast<std::size_t>(i - 1)];
      const int cout = c[static_cast<std::size_t>(i)];
      const std::string name = "visual.stage" + std::to_string(i + 1);
      w.stage_w[static_cast<std::size_t>(i)] = store.uniform(name + ".w", {cout, cin, 3, 3}, cin * 9);
      w.stage_b[static_cast<std::size_t>(i)] = store.zeros(name + ".b", {cout});
    }
    return w;
  }
};

/// frames [T,3,H,W] -> pyramid. Stride-4 patch stem, then one 3x3 stage per
/// level (stride 1 for level 1, stride 2 afterwards), SiLU after each.
inline FeaturePyramid encode_visual(const Var& frames, const VisualEncoderWeights& w) {
  if (frames.value().rank() != 4 || frames.dim(1) != 3)
    throw ArgumentError("encode_visual: frames must be [T,3,H,W], got " + shape_str(frames.shape()));
  check_pyramid_input(frames.dim(2), frames.dim(3));
  FeaturePyramid pyr;
  Var x = silu(conv2d(frames, w.stem_w, w.stem_b, 4, 0));
  for (int i = 0; i < kPyramidLevels; ++i) {
    const auto k = static_cast<std::size_t>(i);
    x = silu(conv2d(x, w.stage_w[k], w.stage_b[k], i == 0 ? 1 : 2, 1));
    pyr.levels[k] = x;
  }
  return pyr;
}

struct AudioEncoderWeights {
  std::array<Var, 3> conv_w, conv_b;
  Var proj_w, proj_b;

  static AudioEncoderWeights create(ParamStore& store, const BackboneConfig& cfg) {
    AudioEncoderWeights w;
    int cin = 1;
    for (std::size_t i = 0; i < 3; ++i) {
      const int cout = cfg.audio_channels[i];
      const std::string name = "audio.conv" + std::to_string(i + 1);
      w.conv_w[i] = store.uniform(name + ".w", {cout, cin, 3, 3}, cin * 9);
      w.conv_b[i] = store.zeros(name + ".b", {cout});
      cin = cout;
    }
    w.proj_w = store.uniform("audio.proj.w", {kAudioDim, cin}, cin, 3.0);
    w.proj_b = store.zeros("audio.proj.b", {kAudioDim});
    return w;
  }
};

/// Log-mel inputs are scaled by this factor before the first convolution.
inline constexpr double kMelInputScale = 0.1;

/// segments [T, frames, mels] -> A [T, 128]. Frames are processed
/// independently (the batch axis is time).
inline Var encode_audio(const Tensor& segments, const AudioEncoderWeights& w) {
  if (segments.rank() != 3) throw ArgumentError("encode_audio: segments must be [T,frames,mels]");
  Tensor scaled = segments.reshaped({segments.dim(0), 1, segments.dim(1), segments.dim(2)});
  scaled *= kMelInputScale;
  Var x = Var::constant(std::move(scaled));
  for (std::size_t i = 0; i < 3; ++i) x = silu(conv2d(x, w.conv_w[i], w.conv_b[i], 2, 1));
  return linear(global_avg_pool(x), w.proj_w, w.proj_b);
}

}  // namespace avsbg
