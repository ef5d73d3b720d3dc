#pragma once

// Inter-frame correlation attention. Each frame attends over all positions of
// its neighbour (t+1, or t-1 for the last frame) through an all-pairs cost
// volume; the warped features enter through a zero-initialised 1x1 map.

#include <cmath>
#include <vector>

#include "avsbg/fusion.hpp"

namespace avsbg {

/// Frame paired with t: the next frame, or the previous one for the last frame.
inline int motion_partner(int t, int frames) {
  if (frames < 2) throw ArgumentError("motion attention needs at least 2 frames");
  return t + 1 < frames ? t + 1 : t - 1;
}

/// [T,C,h,w] -> T tensors [C,h,w], order preserving.
inline std::vector<Tensor> split_frames(const Tensor& z) {
  if (z.rank() != 4) throw ArgumentError("split_frames: expected [T,C,h,w], got " + shape_str(z.shape()));
  if (z.dim(0) < 2) throw ArgumentError("split_frames: at least 2 frames required");
  std::vector<Tensor> out;
  for (int t = 0; t < z.dim(0); ++t) out.push_back(z.slice0(t, 1).reshaped({z.dim(1), z.dim(2), z.dim(3)}));
  return out;
}

/// V[p,q] = <a[:,p], b[:,q]> / sqrt(C) over flattened positions; [N,N].
inline Tensor cost_volume(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || a.shape() != b.shape())
    throw ArgumentError("cost_volume: expected equal [C,h,w] inputs, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
  const int c = a.dim(0), n = a.dim(1) * a.dim(2);
  Tensor v({n, n});
  detail::MatMap(v.data(), n, n).noalias() =
      detail::CMatMap(a.data(), c, n).transpose() * detail::CMatMap(b.data(), c, n) / std::sqrt(static_cast<double>(c));
  return v;
}

namespace detail {

inline void softmax_rows(double* m, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double* row = m + static_cast<std::ptrdiff_t>(r) * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (int k = 0; k < cols; ++k) s += (row[k] = std::exp(row[k] - mx));
    for (int k = 0; k < cols; ++k) row[k] /= s;
  }
}

}  // namespace detail

/// Row-softmax of the cost volume between frame t and its partner: [N,N].
inline Tensor attention_map(const Tensor& z, int t) {
  const auto frames = split_frames(z);
  Tensor v = cost_volume(frames[static_cast<std::size_t>(t)],
                         frames[static_cast<std::size_t>(motion_partner(t, z.dim(0)))]);
  detail::softmax_rows(v.data(), v.dim(0), v.dim(1));
  return v;
}

/// warped_t = softmax(V_t) applied to the partner frame's features; [T,C,h,w].
inline Var correlation_warp(const Var& z) {
  detail::require_rank(z.value(), 4, "correlation_warp");
  const int frames = z.dim(0), c = z.dim(1), n = z.dim(2) * z.dim(3);
  if (frames < 2) throw ArgumentError("correlation_warp: at least 2 frames required");
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  const auto frame_size = static_cast<std::ptrdiff_t>(c) * n;
  Tensor out(z.shape());
  std::vector<double> attn(static_cast<std::size_t>(frames) * n * n);
  for (int t = 0; t < frames; ++t) {
    const int s = motion_partner(t, frames);
    detail::CMatMap zt(z.value().data() + t * frame_size, c, n);
    detail::CMatMap zs(z.value().data() + s * frame_size, c, n);
    double* a = attn.data() + static_cast<std::ptrdiff_t>(t) * n * n;
    detail::MatMap am(a, n, n);
    am.noalias() = zt.transpose() * zs;
    am *= inv_sqrt_c;
    detail::softmax_rows(a, n, n);
    detail::MatMap(out.data() + t * frame_size, c, n).noalias() = zs * am.transpose();
  }
  return make_op(std::move(out), {z}, [frames, c, n, inv_sqrt_c, frame_size, attn = std::move(attn)](detail::Node& self) {
    const Tensor& zv = self.inputs[0]->value;
    Tensor& gz = self.inputs[0]->grad_buffer();
    detail::RowMat dattn(n, n);
    for (int t = 0; t < frames; ++t) {
      const int s = motion_partner(t, frames);
      detail::CMatMap g(self.grad.data() + t * frame_size, c, n);
      detail::CMatMap zt(zv.data() + t * frame_size, c, n);
      detail::CMatMap zs(zv.data() + s * frame_size, c, n);
      detail::CMatMap a(attn.data() + static_cast<std::ptrdiff_t>(t) * n * n, n, n);
      detail::MatMap gzt(gz.data() + t * frame_size, c, n);
      detail::MatMap gzs(gz.data() + s * frame_size, c, n);
      gzs.noalias() += g * a;
      dattn.noalias() = g.transpose() * zs;
      // softmax backward: dV = A .* (dA - rowsum(dA .* A))
      const Eigen::VectorXd rowdot = (dattn.array() * a.array()).rowwise().sum();
      dattn = (a.array() * (dattn.colwise() - rowdot).array()).matrix();
      dattn *= inv_sqrt_c;
      gzt.noalias() += zs * dattn.transpose();
      gzs.noalias() += zt * dattn;
    }
  });
}

struct MotionWeights {
  std::array<Var, kPyramidLevels> proj_w, proj_b;

  static MotionWeights create(ParamStore& store) {
    MotionWeights w;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      const std::string name = "motion.proj" + std::to_string(i + 1);
      w.proj_w[i] = store.zeros(name + ".w", {kFusedChannels, kFusedChannels});
      w.proj_b[i] = store.zeros(name + ".b", {kFusedChannels});
    }
    return w;
  }
};

/// Ẑ = Z + P(warp(Z)). P starts at zero, so this is the identity at init.
inline Var motion_attend(const Var& z, const Var& proj_w, const Var& proj_b) {
  return add(z, pointwise(correlation_warp(z), proj_w, proj_b));
}

struct MotionPyramid {
  std::array<Var, kPyramidLevels> zhat;
};

/// `levels[i]` selects which pyramid levels get motion attention; disabled
/// levels (or `enabled == false`) pass Z through unchanged.
inline MotionPyramid motion_pyramid(const FusedPyramid& fused, const MotionWeights& w, bool enabled,
                                    const std::array<bool, kPyramidLevels>& levels = {true, true, true, true}) {
  MotionPyramid out;
  for (std::size_t i = 0; i < kPyramidLevels; ++i)
    out.zhat[i] = (enabled && levels[i]) ? motion_attend(fused.z[i], w.proj_w[i], w.proj_b[i]) : fused.z[i];
  return out;
}

}  // namespace avsbg
