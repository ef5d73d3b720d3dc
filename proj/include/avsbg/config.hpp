#pragma once

// Plain-text run configuration: one `key = value` per line, `#` comments.
// Layering (lowest to highest): defaults, file, AVSBG_* environment, CLI.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "avsbg/trainer.hpp"

namespace avsbg {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

class RunConfigFile {
 public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        // training
        "setting", "lr", "batch_size", "epochs", "max_steps", "lambda", "eta", "height", "width", "seed", "enable_motion",
        "enable_bg", "enable_audio", "init_checkpoint", "freeze_encoders",
        // model
        "visual_channels", "audio_channels", "decoder_channels", "motion_levels",
        // synthesis
        "clips", "shapes", "frames", "motion_px", "silent_fraction", "sample_rate"};
    return keys;
  }

  static RunConfigFile parse(std::string_view text) {
    RunConfigFile cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      const std::string body = detail::trim(line.substr(0, line.find('#')));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ArgumentError("config line " + std::to_string(lineno) + ": expected key = value");
      cfg.set(detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfigFile load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// Keys in sorted order, so output is stable.
  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ArgumentError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Values from AVSBG_<KEY> environment variables override this file.
  void apply_env() {
    for (const auto& key : known_keys()) {
      std::string var = "AVSBG_";
      for (char c : key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (const char* v = std::getenv(var.c_str())) values_[key] = v;
    }
  }

  /// Layers `other` on top of this one.
  void merge(const RunConfigFile& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  bool operator==(const RunConfigFile&) const = default;

  static RunConfigFile from(const TrainConfig& t) {
    RunConfigFile c;
    c.values_ = {{"setting", to_string(t.setting)},
                 {"lr", detail::format_double(t.lr)},
                 {"batch_size", std::to_string(t.batch_size)},
                 {"epochs", std::to_string(t.epochs)},
                 {"max_steps", std::to_string(t.max_steps)},
                 {"lambda", detail::format_double(t.lambda)},
                 {"eta", detail::format_double(t.eta)},
                 {"height", std::to_string(t.height)},
                 {"width", std::to_string(t.width)},
                 {"seed", std::to_string(t.seed)},
                 {"enable_motion", t.enable_motion ? "true" : "false"},
                 {"enable_bg", t.enable_bg ? "true" : "false"},
                 {"enable_audio", t.enable_audio ? "true" : "false"},
                 {"init_checkpoint", t.init_checkpoint},
                 {"freeze_encoders", t.freeze_encoders ? "true" : "false"}};
    return c;
  }

  static RunConfigFile from(const SynthConfig& s) {
    RunConfigFile c;
    c.values_ = {{"setting", to_string(s.setting)},
                 {"clips", std::to_string(s.n_clips)},
                 {"shapes", std::to_string(s.n_shapes)},
                 {"height", std::to_string(s.height)},
                 {"width", std::to_string(s.width)},
                 {"frames", std::to_string(s.frames)},
                 {"motion_px", detail::format_double(s.motion_px_per_frame)},
                 {"silent_fraction", detail::format_double(s.silent_fraction)},
                 {"sample_rate", std::to_string(s.sample_rate)},
                 {"seed", std::to_string(s.seed)}};
    return c;
  }

  /// Setting-keyed defaults (epochs, lambda) are taken from the configured
  /// setting unless the file sets them explicitly.
  TrainConfig train_config() const {
    TrainConfig t = TrainConfig::for_setting(contains("setting") ? parse_setting(values_.at("setting")) : Setting::S4);
    get("lr", t.lr);
    get("batch_size", t.batch_size);
    get("epochs", t.epochs);
    get("max_steps", t.max_steps);
    get("lambda", t.lambda);
    get("eta", t.eta);
    get("height", t.height);
    get("width", t.width);
    get("seed", t.seed);
    get("enable_motion", t.enable_motion);
    get("enable_bg", t.enable_bg);
    get("enable_audio", t.enable_audio);
    get("init_checkpoint", t.init_checkpoint);
    get("freeze_encoders", t.freeze_encoders);
    return t;
  }

  SynthConfig synth_config() const {
    SynthConfig s;
    if (contains("setting")) s.setting = parse_setting(values_.at("setting"));
    get("clips", s.n_clips);
    get("shapes", s.n_shapes);
    get("height", s.height);
    get("width", s.width);
    get("frames", s.frames);
    get("motion_px", s.motion_px_per_frame);
    get("silent_fraction", s.silent_fraction);
    get("sample_rate", s.sample_rate);
    get("seed", s.seed);
    if (!contains("shapes") && s.setting == Setting::MS3) s.n_shapes = 2;
    return s;
  }

  void apply(ModelConfig& m) const {
    get_list("visual_channels", m.backbone.visual_channels);
    get_list("audio_channels", m.backbone.audio_channels);
    get("decoder_channels", m.decoder_channels);
    if (contains("motion_levels")) {
      // 1-based level numbers, e.g. "3,4"
      m.motion_levels.fill(false);
      const std::string& v = values_.at("motion_levels");
      std::size_t pos = 0;
      while (pos < v.size()) {
        const auto comma = std::min(v.find(',', pos), v.size());
        const int level = parse_number<int>("motion_levels", detail::trim(std::string_view(v).substr(pos, comma - pos)));
        if (level < 1 || level > kPyramidLevels) bad("motion_levels", v, "a list of levels in 1..4");
        m.motion_levels[static_cast<std::size_t>(level - 1)] = true;
        pos = comma + 1;
      }
    }
  }

 private:
  [[noreturn]] static void bad(const std::string& key, const std::string& v, const char* want) {
    throw ArgumentError("config key '" + key + "': '" + v + "' is not " + want);
  }

  template <class T>
  static T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) bad(key, v, "a valid number");
    return out;
  }

  void get(const std::string& key, std::string& out) const {
    if (contains(key)) out = values_.at(key);
  }
  void get(const std::string& key, bool& out) const {
    if (!contains(key)) return;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "on") out = true;
    else if (v == "false" || v == "0" || v == "off") out = false;
    else bad(key, v, "a boolean");
  }
  template <class T>
    requires std::is_arithmetic_v<T>
  void get(const std::string& key, T& out) const {
    if (contains(key)) out = parse_number<T>(key, values_.at(key));
  }
  template <std::size_t N>
  void get_list(const std::string& key, std::array<int, N>& out) const {
    if (!contains(key)) return;
    const std::string& v = values_.at(key);
    std::vector<int> parts;
    std::size_t pos = 0;
    while (pos <= v.size()) {
      const auto comma = std::min(v.find(',', pos), v.size());
      parts.push_back(parse_number<int>(key, detail::trim(std::string_view(v).substr(pos, comma - pos))));
      pos = comma + 1;
    }
    if (parts.size() != N) bad(key, v, ("a list of " + std::to_string(N) + " integers").c_str());
    std::copy(parts.begin(), parts.end(), out.begin());
  }

  std::map<std::string, std::string> values_;
};

}  // namespace avsbg
