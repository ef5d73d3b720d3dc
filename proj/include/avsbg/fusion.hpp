#pragma once

// Audio-visual fusion: channel alignment to C = 128, channel-wise audio
// correlation, and an audio-modulated residual with a sigmoid channel gate.

#include <cmath>

#include "avsbg/backbone.hpp"

namespace avsbg {

inline constexpr int kFusedChannels = kAudioDim;

struct FusedPyramid {
  std::array<Var, kPyramidLevels> aligned;  // F'_i [T,C,h,w]
  std::array<Var, kPyramidLevels> corr;     // Corr_i [T,C]; undefined when audio is bypassed
  std::array<Var, kPyramidLevels> z;        // Z_i [T,C,h,w]
};

struct FusionWeights {
  std::array<Var, kPyramidLevels> align_w, align_b;

  static FusionWeights create(ParamStore& store, const BackboneConfig& cfg) {
    FusionWeights w;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      const int cin = cfg.visual_channels[i];
      const std::string name = "fusion.align" + std::to_string(i + 1);
      w.align_w[i] = store.uniform(name + ".w", {kFusedChannels, cin}, cin, 3.0);
      w.align_b[i] = store.zeros(name + ".b", {kFusedChannels});
    }
    return w;
  }
};

/// Per-level 1x1 map to C = 128 channels.
inline std::array<Var, kPyramidLevels> align_channels(const FeaturePyramid& pyr, const FusionWeights& w) {
  std::array<Var, kPyramidLevels> out;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) out[i] = pointwise(pyr.levels[i], w.align_w[i], w.align_b[i]);
  return out;
}

/// Corr[t,c] = sum_{h,w} Fn[t,c,h,w] * An[t,c] for already-normalised inputs.
inline Var correlation_sum(const Var& fn, const Var& an) {
  detail::require_rank(fn.value(), 4, "channel_correlation");
  const int n = fn.dim(0), c = fn.dim(1), hw = fn.dim(2) * fn.dim(3);
  if (an.value().rank() != 2 || an.dim(0) != n || an.dim(1) != c)
    throw ArgumentError("channel_correlation: audio " + shape_str(an.shape()) + " vs features " + shape_str(fn.shape()));
  Tensor out({n, c});
  std::vector<double> spatial(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n * c; ++i) {
    const double* p = fn.value().data() + static_cast<std::ptrdiff_t>(i) * hw;
    double s = 0.0;
    for (int k = 0; k < hw; ++k) s += p[k];
    spatial[static_cast<std::size_t>(i)] = s;
    out[static_cast<std::size_t>(i)] = s * an.value()[static_cast<std::size_t>(i)];
  }
  return make_op(std::move(out), {fn, an}, [n, c, hw, spatial = std::move(spatial)](detail::Node& self) {
    const Tensor& av = self.inputs[1]->value;
    for (int i = 0; i < n * c; ++i) {
      const double g = self.grad[static_cast<std::size_t>(i)];
      if (needs_grad(self, 0)) {
        double* gp = self.inputs[0]->grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * hw;
        const double v = g * av[static_cast<std::size_t>(i)];
        for (int k = 0; k < hw; ++k) gp[k] += v;
      }
      if (needs_grad(self, 1)) self.inputs[1]->grad_buffer()[static_cast<std::size_t>(i)] += g * spatial[static_cast<std::size_t>(i)];
    }
  });
}

/// Row-normalised audio embedding, Â' in [T, d].
inline Var normalize_audio(const Var& audio) { return l2_normalize_channels(audio); }

/// Channel correlation of one aligned level with the audio embedding.
inline Var channel_correlation(const Var& aligned, const Var& audio) {
  if (aligned.dim(1) != audio.dim(1))
    throw ArgumentError("channel_correlation: feature channels " + std::to_string(aligned.dim(1)) +
                        " != audio dim " + std::to_string(audio.dim(1)));
  return correlation_sum(l2_normalize_channels(aligned), normalize_audio(audio));
}

/// Z = F' + sigmoid(Corr / sqrt(h w)) * F' * Â' (channel broadcast over space).
inline Var fuse(const Var& aligned, const Var& corr, const Var& audio) {
  const double temperature = std::sqrt(static_cast<double>(aligned.dim(2) * aligned.dim(3)));
  const Var gate = sigmoid(scale(corr, 1.0 / temperature));
  return add(aligned, channel_scale(aligned, mul(gate, normalize_audio(audio))));
}

/// With `use_audio` false every level is the pure residual Z_i = F'_i.
inline FusedPyramid fuse_pyramid(const FeaturePyramid& pyr, const Var& audio, const FusionWeights& w, bool use_audio) {
  FusedPyramid out;
  out.aligned = align_channels(pyr, w);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (!use_audio) {
      out.z[i] = out.aligned[i];
      continue;
    }
    out.corr[i] = channel_correlation(out.aligned[i], audio);
    out.z[i] = fuse(out.aligned[i], out.corr[i], audio);
  }
  return out;
}

}  // namespace avsbg
