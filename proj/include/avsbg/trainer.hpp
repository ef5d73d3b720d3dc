#pragma once

// Adam training loop, checkpoints, and the ablation harness.

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avsbg/metrics.hpp"
#include "avsbg/model.hpp"

namespace avsbg {

struct TrainConfig {
  Setting setting = Setting::S4;
  double lr = 1e-4;
  int batch_size = 8;
  int epochs = 15;
  int max_steps = 0;  // 0: no cap
  double lambda = 0.0;
  double eta = 1.0;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 0;
  bool enable_motion = true;
  bool enable_bg = true;
  bool enable_audio = true;
  std::string init_checkpoint;
  bool freeze_encoders = false;

  static TrainConfig for_setting(Setting s) {
    TrainConfig c;
    c.setting = s;
    c.epochs = s == Setting::S4 ? 15 : 30;
    c.lambda = s == Setting::S4 ? 0.0 : 0.5;
    return c;
  }

  Switches switches() const { return {enable_audio, enable_motion, enable_bg}; }

  void validate() const {
    if (!(lr > 0)) throw ArgumentError("lr must be positive");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (epochs < 0 || max_steps < 0) throw ArgumentError("epochs and max_steps must be >= 0");
    if (lambda < 0) throw ArgumentError("lambda must be >= 0");
    if (enable_bg && !(eta > 0)) throw ArgumentError("eta must be positive when bg is enabled");
    check_pyramid_input(height, width);
  }

  nlohmann::json to_json() const {
    return {{"setting", to_string(setting)},
            {"lr", lr},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"max_steps", max_steps},
            {"lambda", lambda},
            {"eta", eta},
            {"height", height},
            {"width", width},
            {"seed", seed},
            {"enable_motion", enable_motion},
            {"enable_bg", enable_bg},
            {"enable_audio", enable_audio},
            {"init_checkpoint", init_checkpoint},
            {"freeze_encoders", freeze_encoders}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.setting = parse_setting(j.at("setting").get<std::string>());
    c.lr = j.at("lr");
    c.batch_size = j.at("batch_size");
    c.epochs = j.at("epochs");
    c.max_steps = j.at("max_steps");
    c.lambda = j.at("lambda");
    c.eta = j.at("eta");
    c.height = j.at("height");
    c.width = j.at("width");
    c.seed = j.at("seed");
    c.enable_motion = j.at("enable_motion");
    c.enable_bg = j.at("enable_bg");
    c.enable_audio = j.at("enable_audio");
    c.init_checkpoint = j.at("init_checkpoint");
    c.freeze_encoders = j.at("freeze_encoders");
    return c;
  }

  ObjectiveConfig objective() const { return {setting, lambda, eta, switches()}; }

  bool operator==(const TrainConfig&) const = default;
};

/// Single-file archive: "AVSBGCK1", u64 header length, JSON header (configs,
/// step, rng state, tensor index), then raw little-endian f64 payloads.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::int64_t step = 0;
  std::string rng_state;
  std::map<std::string, Tensor> weights;

  static constexpr char kMagic[9] = "AVSBGCK1";

  nlohmann::json header() const {
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, t] : weights) index.push_back({{"name", name}, {"shape", t.shape()}});
    return {{"model", model.to_json()}, {"train", train.to_json()}, {"step", step}, {"rng_state", rng_state}, {"tensors", index}};
  }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    const std::string head = header().dump();
    const std::uint64_t len = head.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(head.data(), static_cast<std::streamsize>(len));
    for (const auto& [_, t] : weights)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw ConfigError("short write on checkpoint " + path.string());
  }

  static Checkpoint load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint64_t len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError(path.string() + " is not a checkpoint");
    if (len > (1u << 26)) throw ConfigError("checkpoint header too large");
    std::string head(len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(len));
    Checkpoint c;
    try {
      const auto j = nlohmann::json::parse(head);
      c.model = ModelConfig::from_json(j.at("model"));
      c.train = TrainConfig::from_json(j.at("train"));
      c.step = j.at("step");
      c.rng_state = j.at("rng_state");
      for (const auto& e : j.at("tensors")) {
        Tensor t(e.at("shape").get<Shape>());
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        c.weights.emplace(e.at("name").get<std::string>(), std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    if (!in) throw ConfigError("truncated checkpoint " + path.string());
    return c;
  }
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::map<std::string, Var>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& [name, p] : params) {
      if (!p.node()->has_grad()) continue;
      auto& [m, v] = moments_[name];
      Tensor& w = p.node()->value;
      const Tensor& g = p.node()->grad;
      if (m.empty()) m = v = Tensor::zeros_like(w);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1_ * m[i] + (1 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1 - b2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  std::int64_t steps() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

struct LogEntry {
  std::int64_t step = 0;
  LossBreakdown loss;
  double wallclock = 0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"bce", loss.bce}, {"kl", loss.kl}, {"consistency", loss.consistency}, {"total", loss.total}, {"wallclock", wallclock}};
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogEntry> log;
  double final_loss() const { return log.empty() ? 0.0 : log.back().loss.total; }
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, ModelConfig mc = {}) : cfg_(std::move(cfg)), model_(prepare(cfg_, std::move(mc))), adam_(cfg_.lr), rng_(cfg_.seed) {
    if (!cfg_.init_checkpoint.empty()) load_weights(Checkpoint::load(cfg_.init_checkpoint));
    for (const auto& [name, p] : model_.params().all()) {
      const bool motion = name.starts_with("motion.");
      const bool encoder = name.starts_with("visual.") || name.starts_with("audio.");
      if ((motion && !cfg_.enable_motion) || (encoder && cfg_.freeze_encoders)) continue;
      trainable_.emplace(name, p);
    }
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  AvsModel& model() noexcept { return model_; }
  const AvsModel& model() const noexcept { return model_; }
  std::int64_t step() const noexcept { return step_; }

  /// Copies weights from a checkpoint with the same architecture.
  void load_weights(const Checkpoint& ckpt) {
    const std::string diff = model_.config().architecture_diff(ckpt.model);
    if (!diff.empty()) throw ConfigError("checkpoint architecture mismatch:" + diff);
    model_.params().load_state(ckpt.weights);
  }

  /// One Adam step on the mean loss over `batch`.
  LossBreakdown train_step(const std::vector<const ClipSample*>& batch) {
    if (batch.empty()) throw ArgumentError("train_step: empty batch");
    model_.params().zero_grad();
    const ObjectiveConfig obj = cfg_.objective();
    const double w = 1.0 / static_cast<double>(batch.size());
    LossBreakdown mean{};
    for (const ClipSample* clip : batch) {
      LossResult r = model_.loss(*clip, mel(*clip), obj);
      check_finite(r.breakdown, *clip);
      backward(scale(r.total, w));
      mean.bce += w * r.breakdown.bce;
      mean.kl += w * r.breakdown.kl;
      mean.consistency += w * r.breakdown.consistency;
      mean.consistency_raw += w * r.breakdown.consistency_raw;
      mean.total += w * r.breakdown.total;
      mean.lambda = r.breakdown.lambda;
      mean.eta = r.breakdown.eta;
    }
    adam_.step(trainable_);
    ++step_;
    return mean;
  }

  /// Loss on a batch without updating anything.
  LossBreakdown batch_loss(const std::vector<const ClipSample*>& batch) {
    NoGradGuard guard;
    LossBreakdown mean{};
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const ClipSample* clip : batch) {
      const LossBreakdown b = model_.loss(*clip, mel(*clip), cfg_.objective()).breakdown;
      mean.bce += w * b.bce;
      mean.kl += w * b.kl;
      mean.consistency += w * b.consistency;
      mean.total += w * b.total;
    }
    return mean;
  }

  /// Epoch loop with seeded shuffling. Clips are resized to the configured
  /// resolution if needed. Log lines go to `log_out` as JSON.
  TrainResult run(const Corpus& corpus, std::ostream* log_out = nullptr) {
    if (corpus.setting != cfg_.setting)
      throw ArgumentError("corpus setting " + to_string(corpus.setting) + " does not match config " + to_string(cfg_.setting));
    if (corpus.clips.empty()) throw ArgumentError("train: empty corpus");
    const std::vector<ClipSample> clips = conform(corpus);
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    const auto per_epoch = static_cast<std::int64_t>((clips.size() + cfg_.batch_size - 1) / cfg_.batch_size);
    std::int64_t budget = per_epoch * cfg_.epochs;
    if (cfg_.max_steps > 0) budget = std::min<std::int64_t>(budget, cfg_.max_steps);
    for (std::int64_t done = 0; done < budget;) {
      std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t b = 0; b < order.size() && done < budget; b += static_cast<std::size_t>(cfg_.batch_size), ++done) {
        std::vector<const ClipSample*> batch;
        for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(cfg_.batch_size)); ++i)
          batch.push_back(&clips[order[i]]);
        LogEntry e;
        e.loss = train_step(batch);
        e.step = step_;
        e.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (log_out) *log_out << e.to_json().dump() << '\n' << std::flush;
        result.log.push_back(e);
      }
    }
    result.checkpoint = checkpoint();
    return result;
  }

  MetricsReport evaluate(const Corpus& corpus) {
    const Switches sw = cfg_.switches();
    return evaluate_corpus([&](const ClipSample& c) { return predict(c, sw); }, Corpus{corpus.setting, corpus.split, conform(corpus)});
  }

  Tensor predict(const ClipSample& clip, const Switches& sw) { return model_.predict(clip, sw, &mel(clip)); }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.model = model_.config();
    c.train = cfg_;
    c.step = step_;
    std::ostringstream os;
    os << rng_;
    c.rng_state = os.str();
    c.weights = model_.params().state();
    return c;
  }

 private:
  static ModelConfig prepare(const TrainConfig& cfg, ModelConfig mc) {
    cfg.validate();
    mc.height = cfg.height;
    mc.width = cfg.width;
    mc.init_seed = cfg.seed;
    return mc;
  }

  std::vector<ClipSample> conform(const Corpus& corpus) const {
    std::vector<ClipSample> out;
    out.reserve(corpus.clips.size());
    for (const auto& c : corpus.clips)
      out.push_back(c.height() == cfg_.height && c.width() == cfg_.width ? c : resize_clip(c, cfg_.height, cfg_.width));
    return out;
  }

  const Tensor& mel(const ClipSample& clip) {
    // ids are only unique within a corpus, so the waveform must match too
    auto it = mel_cache_.find(clip.clip_id);
    if (it == mel_cache_.end() || it->second.first != clip.waveform)
      it = mel_cache_.insert_or_assign(clip.clip_id, std::pair{clip.waveform, AvsModel::mel_segments(clip)}).first;
    return it->second.second;
  }

  void check_finite(const LossBreakdown& b, const ClipSample& clip) const {
    const std::pair<const char*, double> terms[] = {{"bce", b.bce}, {"kl", b.kl}, {"consistency", b.consistency}, {"total", b.total}};
    for (const auto& [name, v] : terms)
      if (!std::isfinite(v))
        throw NumericalError(name, std::string("non-finite ") + name + " loss at step " + std::to_string(step_) + " on clip '" +
                                       clip.clip_id + "'");
  }

  TrainConfig cfg_;
  AvsModel model_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
  std::map<std::string, Var> trainable_;
  std::map<std::string, std::pair<std::vector<double>, Tensor>> mel_cache_;
};

inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const ModelConfig& mc = {}, std::ostream* log_out = nullptr) {
  Trainer t(cfg, mc);
  return t.run(corpus, log_out);
}

struct AblationRow {
  Switches switches;
  MetricsReport metrics;
  double final_loss = 0;
};

struct AblationReport {
  std::vector<std::string> switches;
  std::vector<AblationRow> rows;

  std::string table() const {
    std::ostringstream os;
    os << "variant                 mIoU     F\n";
    for (const auto& r : rows) {
      char line[96];
      std::snprintf(line, sizeof line, "%-22s  %.4f   %.4f\n", r.switches.label().c_str(), r.metrics.miou, r.metrics.fscore);
      os << line;
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
      rows_j.push_back({{"audio", r.switches.audio}, {"motion", r.switches.motion}, {"bg", r.switches.bg},
                        {"miou", r.metrics.miou}, {"fscore", r.metrics.fscore}, {"final_loss", r.final_loss}});
    return {{"switches", switches}, {"rows", rows_j}};
  }
};

/// Trains every on/off combination of the named switches (others stay as in
/// `base`) with the same seed and scores each on `eval`.
inline AblationReport ablate(const TrainConfig& base, const Corpus& train_corpus, const Corpus& eval_corpus,
                             const std::vector<std::string>& switches, const ModelConfig& mc = {}) {
  for (const auto& s : switches)
    if (s != "audio" && s != "motion" && s != "bg") throw ArgumentError("unknown ablation switch '" + s + "'");
  for (std::size_t i = 0; i < switches.size(); ++i)
    for (std::size_t j = i + 1; j < switches.size(); ++j)
      if (switches[i] == switches[j]) throw ArgumentError("duplicate ablation switch '" + switches[i] + "'");
  AblationReport report;
  report.switches = switches;
  const std::size_t combos = std::size_t{1} << switches.size();
  for (std::size_t mask = 0; mask < combos; ++mask) {
    TrainConfig cfg = base;
    for (std::size_t k = 0; k < switches.size(); ++k) {
      const bool on = !(mask & (std::size_t{1} << k));
      if (switches[k] == "audio") cfg.enable_audio = on;
      if (switches[k] == "motion") cfg.enable_motion = on;
      if (switches[k] == "bg") cfg.enable_bg = on;
    }
    Trainer t(cfg, mc);
    const TrainResult res = t.run(train_corpus);
    report.rows.push_back({cfg.switches(), t.evaluate(eval_corpus), res.final_loss()});
  }
  return report;
}

}  // namespace avsbg
