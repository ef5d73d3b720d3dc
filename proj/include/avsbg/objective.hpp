#pragma once

// Training objective: BCE on supervised frames, lambda-weighted KL alignment
// between mask-pooled fused features and the audio embedding, and the
// eta-weighted consistency between original and reconstructed audio.

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "avsbg/fusion.hpp"

namespace avsbg {

inline constexpr double kProbClamp = 1e-6;

namespace testing {

/// Armed faults flip the sign of the gradient flowing through the named
/// loss term. Used to prove that the gradient checker catches broken
/// backward passes.
inline std::string& armed_fault() {
  thread_local std::string name;
  return name;
}

}  // namespace testing

namespace detail {

inline Var fault_point(const Var& x, const char* term) {
  if (testing::armed_fault() != term) return x;
  return make_op(x.value(), {x}, [](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

}  // namespace detail

/// Mean binary cross-entropy over pixels of supervised frames, on
/// probabilities clamped to [1e-6, 1 - 1e-6]. Reference form.
inline double bce_loss(const Tensor& probs, const Tensor& target, const std::vector<bool>& supervised) {
  probs.check_same(target, "bce_loss");
  detail::require_rank(probs, 3, "bce_loss");
  const int frames = probs.dim(0);
  const std::size_t plane = probs.size() / static_cast<std::size_t>(frames);
  if (supervised.size() != static_cast<std::size_t>(frames)) throw ArgumentError("bce_loss: supervised flags length");
  double acc = 0.0;
  std::size_t count = 0;
  for (int t = 0; t < frames; ++t) {
    if (!supervised[static_cast<std::size_t>(t)]) continue;
    for (std::size_t i = t * plane; i < (t + 1) * plane; ++i) {
      const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
      acc -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
    }
    count += plane;
  }
  if (count == 0) throw ArgumentError("bce_loss: no supervised frame in batch");
  return acc / static_cast<double>(count);
}

/// Differentiable BCE evaluated from logits (numerically stable form of the
/// same loss without the clamp).
inline Var bce_with_logits(const Var& logits, const Tensor& target, const std::vector<bool>& supervised) {
  logits.value().check_same(target, "bce_with_logits");
  detail::require_rank(target, 3, "bce_with_logits");
  const int frames = target.dim(0);
  const std::size_t plane = target.size() / static_cast<std::size_t>(frames);
  if (supervised.size() != static_cast<std::size_t>(frames)) throw ArgumentError("bce_with_logits: supervised flags length");
  const auto n_sup = static_cast<std::size_t>(std::count(supervised.begin(), supervised.end(), true));
  if (n_sup == 0) throw ArgumentError("bce_with_logits: no supervised frame in batch");
  const double inv = 1.0 / static_cast<double>(n_sup * plane);
  double acc = 0.0;
  const Tensor& l = logits.value();
  for (int t = 0; t < frames; ++t) {
    if (!supervised[static_cast<std::size_t>(t)]) continue;
    for (std::size_t i = t * plane; i < (t + 1) * plane; ++i)
      acc += std::max(l[i], 0.0) - target[i] * l[i] + std::log1p(std::exp(-std::abs(l[i])));
  }
  const Var out = make_op(Tensor(Shape{}, acc * inv), {logits}, [target, supervised, plane, inv](detail::Node& self) {
    const Tensor& lv = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    const double go = self.grad[0] * inv;
    for (std::size_t t = 0; t < supervised.size(); ++t) {
      if (!supervised[t]) continue;
      for (std::size_t i = t * plane; i < (t + 1) * plane; ++i) g[i] += go * (detail::sigmoid(lv[i]) - target[i]);
    }
  });
  return detail::fault_point(out, "bce");
}

/// mean_t KL(softmax(p[t,:]) || softmax(q[t,:])) for logits p, q of shape [T,C].
inline Var kl_softmax(const Var& p, const Var& q) {
  p.value().check_same(q.value(), "kl_softmax");
  detail::require_rank(p.value(), 2, "kl_softmax");
  const int rows = p.dim(0), c = p.dim(1);
  auto log_softmax = [c](const double* x, double* out) {
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += std::exp(x[k] - mx);
    const double lse = mx + std::log(s);
    for (int k = 0; k < c; ++k) out[k] = x[k] - lse;
  };
  std::vector<double> lp(static_cast<std::size_t>(rows) * c), lq(lp.size()), kl_rows(static_cast<std::size_t>(rows));
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const auto off = static_cast<std::ptrdiff_t>(r) * c;
    log_softmax(p.value().data() + off, lp.data() + off);
    log_softmax(q.value().data() + off, lq.data() + off);
    double kl = 0.0;
    for (int k = 0; k < c; ++k) kl += std::exp(lp[static_cast<std::size_t>(off + k)]) * (lp[static_cast<std::size_t>(off + k)] - lq[static_cast<std::size_t>(off + k)]);
    kl_rows[static_cast<std::size_t>(r)] = kl;
    total += kl;
  }
  return make_op(Tensor(Shape{}, total / rows), {p, q},
                 [rows, c, lp = std::move(lp), lq = std::move(lq), kl_rows = std::move(kl_rows)](detail::Node& self) {
                   const double go = self.grad[0] / rows;
                   for (int r = 0; r < rows; ++r)
                     for (int k = 0; k < c; ++k) {
                       const auto i = static_cast<std::size_t>(r * c + k);
                       const double pk = std::exp(lp[i]), qk = std::exp(lq[i]);
                       if (needs_grad(self, 0))
                         self.inputs[0]->grad_buffer()[i] += go * pk * (lp[i] - lq[i] - kl_rows[static_cast<std::size_t>(r)]);
                       if (needs_grad(self, 1)) self.inputs[1]->grad_buffer()[i] += go * (qk - pk);
                     }
                 });
}

/// avg_{h,w}(M * Z_i): mask area-averaged to the level resolution, [T,C].
inline Var masked_average(const Var& probs, const Var& z) {
  const int factor = probs.dim(1) / z.dim(2);
  if (factor * z.dim(2) != probs.dim(1) || factor * z.dim(3) != probs.dim(2))
    throw ArgumentError("masked_average: mask " + shape_str(probs.shape()) + " vs level " + shape_str(z.shape()));
  return global_avg_pool(spatial_scale(z, avg_pool(probs, factor)));
}

/// lambda * sum over pyramid levels of the KL alignment term. lambda == 0
/// returns an exact constant zero without evaluating anything.
inline Var kl_alignment(const Var& probs, const FusedPyramid& fused, const Var& audio, double lambda) {
  if (lambda < 0) throw ArgumentError("kl_alignment: lambda must be >= 0");
  if (lambda == 0.0) return Var::constant(Tensor(Shape{}, 0.0));
  Var total;
  for (const Var& z : fused.z) {
    const Var term = kl_softmax(masked_average(probs, z), audio);
    total = total ? add(total, term) : term;
  }
  return scale(detail::fault_point(total, "kl"), lambda);
}

/// eta * mean over T x d of (Norm(A) - Norm(Ã))^2 with row-wise L2 Norm.
inline Var consistency_loss(const Var& audio, const Var& reconstructed, double eta) {
  audio.value().check_same(reconstructed.value(), "consistency_loss");
  const Var diff = sub(l2_normalize_channels(audio), l2_normalize_channels(reconstructed));
  return scale(detail::fault_point(mean(mul(diff, diff)), "consistency"), eta);
}

struct LossBreakdown {
  double bce = 0;
  double kl = 0;               // sum over levels, before lambda
  double consistency = 0;      // eta * raw distance
  double consistency_raw = 0;  // distance before eta
  double total = 0;
  double lambda = 0;
  double eta = 0;

  nlohmann::json to_json() const {
    return {{"bce", bce}, {"kl", kl}, {"consistency", consistency}, {"total", total}, {"lambda", lambda}, {"eta", eta}};
  }
};

/// total = bce + lambda * kl + eta * consistency_raw.
inline LossBreakdown total_loss(double bce, double kl, double consistency_raw, double lambda, double eta) {
  LossBreakdown b;
  b.bce = bce;
  b.kl = kl;
  b.consistency_raw = consistency_raw;
  b.consistency = eta * consistency_raw;
  b.lambda = lambda;
  b.eta = eta;
  b.total = bce + lambda * kl + b.consistency;
  return b;
}

}  // namespace avsbg
