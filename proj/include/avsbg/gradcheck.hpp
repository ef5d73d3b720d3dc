#pragma once

// Central finite-difference checks of analytic gradients.

#include <functional>
#include <random>
#include <sstream>

#include "avsbg/model.hpp"

namespace avsbg {

struct GradCheckOptions {
  double step = 1e-5;         // finite-difference step
  double tolerance = 1e-4;    // max relative error
  double floor = 1e-6;        // denominator floor for tiny gradients
  int samples_per_tensor = 2;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string term;
  std::string param;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [&](const auto& e) { return e.rel_error <= tolerance; });
  }
  double worst(const std::string& term = {}) const {
    double w = 0.0;
    for (const auto& e : entries)
      if (term.empty() || e.term == term) w = std::max(w, e.rel_error);
    return w;
  }
  std::vector<std::string> terms() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (std::find(out.begin(), out.end(), e.term) == out.end()) out.push_back(e.term);
    return out;
  }
  std::vector<std::string> failing_terms() const {
    std::vector<std::string> out;
    for (const auto& t : terms())
      if (worst(t) > tolerance) out.push_back(t);
    return out;
  }
  void append(const GradCheckReport& o) { entries.insert(entries.end(), o.entries.begin(), o.entries.end()); }
};

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares d loss / d p against (f(p+h) - f(p-h)) / 2h on sampled entries of
/// each parameter. `loss` must rebuild its graph on every call.
inline GradCheckReport check_gradients(const std::string& term, const std::function<Var()>& loss,
                                       const std::vector<std::pair<std::string, Var>>& params, const GradCheckOptions& opt) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto [_, p] : params) p.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  for (const auto& [_, p] : params) analytic.push_back(p.grad());

  std::mt19937_64 rng(opt.seed);
  auto eval = [&] {
    NoGradGuard g;
    return loss().value()[0];
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var p = params[k].second;
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    const int n = std::min<int>(opt.samples_per_tensor, static_cast<int>(p.size()));
    for (int s = 0; s < n; ++s) {
      const std::size_t i = pick(rng);
      double& w = p.mutable_value()[i];
      const double saved = w;
      w = saved + opt.step;
      const double up = eval();
      w = saved - opt.step;
      const double down = eval();
      w = saved;
      const double numeric = (up - down) / (2 * opt.step);
      report.entries.push_back({term, params[k].first, i, analytic[k][i], numeric, relative_error(analytic[k][i], numeric, opt.floor)});
    }
  }
  return report;
}

/// Same check for a plain input tensor (used for per-op tests).
inline double max_input_grad_error(const std::function<Var(const Var&)>& f, const Tensor& x0, double step = 1e-5,
                                   double floor = 1e-6) {
  Var x = Var::parameter(x0);
  backward(f(x));
  const Tensor analytic = x.grad();
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    NoGradGuard g;
    Tensor a = x0, b = x0;
    a[i] += step;
    b[i] -= step;
    const double numeric = (f(Var::constant(a)).value()[0] - f(Var::constant(b)).value()[0]) / (2 * step);
    worst = std::max(worst, relative_error(analytic[i], numeric, floor));
  }
  return worst;
}

/// The seeded tiny setup shared by the gradient suite and `avsbg gradcheck`:
/// T=2 frames at 32x32, narrow channels, and nonzero motion projections so
/// every path carries gradient.
struct GradCheckFixture {
  ModelConfig config;
  std::unique_ptr<AvsModel> model;
  ClipSample clip;
  Tensor mel;

  explicit GradCheckFixture(std::uint64_t seed = 0) {
    config.height = config.width = 32;
    config.backbone.visual_channels = {8, 12, 16, 16};
    config.backbone.audio_channels = {4, 8, 8};
    config.decoder_channels = 8;
    config.projection_hidden = 16;
    config.init_seed = seed;
    model = std::make_unique<AvsModel>(config);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (const auto& [name, p] : model->params().all())
      if (name.starts_with("motion.")) {
        Var v = p;
        for (double& x : v.mutable_value().values()) x = u(rng);
      }

    SynthConfig sc;
    sc.n_clips = 1;
    sc.frames = 2;
    sc.height = sc.width = 32;
    sc.seed = seed;
    sc.setting = Setting::MS3;
    sc.n_shapes = 2;
    clip = generate_synthetic(sc).clips.at(0);
    mel = AvsModel::mel_segments(clip);
  }

  std::vector<std::pair<std::string, Var>> parameters() const {
    return {model->params().all().begin(), model->params().all().end()};
  }

  /// Loss for one named term: bce, kl, consistency, or total.
  Var term_loss(const std::string& term) const {
    const Switches all;
    if (term == "bce") {
      const ForwardResult f = model->forward(clip.frames, mel, all, false);
      return bce_with_logits(f.mask.logits, *clip.gt_masks, clip.supervised);
    }
    if (term == "kl") {
      const ForwardResult f = model->forward(clip.frames, mel, all, true);
      return kl_alignment(f.mask.probs, f.fused, f.audio, 0.5);
    }
    if (term == "consistency") {
      // predicted-mask source, so the gradient also reaches the decoder
      const ForwardResult f = model->forward(clip.frames, mel, all, true);
      return consistency_loss(f.audio, model->reconstruct(f, Setting::S4, clip.gt_masks), 1.0);
    }
    if (term == "total") return model->loss(clip, mel, {Setting::MS3, 0.5, 1.0, all}).total;
    throw ArgumentError("unknown loss term '" + term + "'");
  }

  static const std::vector<std::string>& terms() {
    static const std::vector<std::string> t{"bce", "kl", "consistency", "total"};
    return t;
  }

  GradCheckReport run(const GradCheckOptions& opt) const {
    GradCheckReport all;
    all.tolerance = opt.tolerance;
    for (const auto& term : terms()) all.append(check_gradients(term, [&] { return term_loss(term); }, parameters(), opt));
    return all;
  }
};

}  // namespace avsbg
