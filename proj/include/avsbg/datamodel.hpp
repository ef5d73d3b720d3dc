#pragma once

// Clip and corpus types, AVSBench-layout ingestion, and the synthetic
// moving-shapes corpus generator.
//
// On-disk layout (shared by real and synthetic corpora):
//   <root>/<setting>/<split>/<clip_id>/frames/0.png .. (T-1).png   RGB
//   <root>/<setting>/<split>/<clip_id>/audio.wav                   16-bit PCM mono
//   <root>/<setting>/<split>/<clip_id>/masks/0.png .. (T-1).png    0/255 gray
//   <root>/<setting>/<split>/manifest.json

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsbg/media_io.hpp"
#include "avsbg/ops.hpp"
#include "avsbg/tensor.hpp"

namespace avsbg {

namespace fs = std::filesystem;

enum class Setting { S4, MS3 };
enum class Split { Train, Val, Test };

inline std::string to_string(Setting s) { return s == Setting::S4 ? "s4" : "ms3"; }
inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Setting parse_setting(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "s4") return Setting::S4;
  if (s == "ms3") return Setting::MS3;
  throw ArgumentError("unknown setting '" + s + "' (expected s4 or ms3)");
}

inline Split parse_split(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ArgumentError("unknown split '" + s + "' (expected train, val or test)");
}

/// Which frames carry a training target. S4 training sees only the first
/// frame's mask; evaluation and MS3 use every frame.
inline std::vector<bool> supervision_pattern(Setting setting, Split split, int frames) {
  std::vector<bool> sup(static_cast<std::size_t>(frames), true);
  if (setting == Setting::S4 && split == Split::Train)
    for (int t = 1; t < frames; ++t) sup[static_cast<std::size_t>(t)] = false;
  return sup;
}

inline constexpr int kDefaultFrames = 5;
inline constexpr int kDefaultSampleRate = 16000;

struct ClipSample {
  std::string clip_id;
  Setting setting = Setting::S4;
  Split split = Split::Train;
  Tensor frames;                   // [T,3,H,W] in [0,1]
  std::vector<double> waveform;    // mono, [-1,1)
  int sample_rate = kDefaultSampleRate;
  std::optional<Tensor> gt_masks;  // [T,H,W] in {0,1}
  std::vector<bool> gt_available;  // per frame; meaningful when gt_masks is set
  std::vector<bool> supervised;    // per frame

  int num_frames() const { return frames.dim(0); }
  int height() const { return frames.dim(2); }
  int width() const { return frames.dim(3); }
  bool has_full_gt() const {
    return gt_masks && std::all_of(gt_available.begin(), gt_available.end(), [](bool b) { return b; });
  }

  void validate() const {
    auto fail = [&](const std::string& m) { throw ArgumentError("clip '" + clip_id + "': " + m); };
    if (frames.rank() != 4 || frames.dim(1) != 3) fail("frames must be [T,3,H,W], got " + shape_str(frames.shape()));
    const int t = num_frames();
    if (t < 2) fail("at least 2 frames required");
    if (height() % 32 || width() % 32) fail("H and W must be divisible by 32");
    if (supervised.size() != static_cast<std::size_t>(t)) fail("supervised flags length mismatch");
    if (gt_masks) {
      if (gt_masks->shape() != Shape{t, height(), width()}) fail("gt_masks shape " + shape_str(gt_masks->shape()));
      for (double v : gt_masks->values())
        if (v != 0.0 && v != 1.0) fail("gt_masks must be binary");
      if (gt_available.size() != static_cast<std::size_t>(t)) fail("gt_available length mismatch");
    }
    const auto n_sup = std::count(supervised.begin(), supervised.end(), true);
    if (setting == Setting::S4 && split == Split::Train && (n_sup != 1 || !supervised[0]))
      fail("S4 training clips supervise exactly the first frame");
    if (setting == Setting::MS3 && n_sup != t) fail("MS3 clips supervise every frame");
    for (int i = 0; i < t; ++i)
      if (supervised[static_cast<std::size_t>(i)] && !(gt_masks && gt_available[static_cast<std::size_t>(i)]))
        fail("supervised frame " + std::to_string(i) + " has no mask");
  }
};

/// Paths of one clip inside a corpus directory.
struct ClipDescriptor {
  std::string clip_id;
  std::vector<fs::path> frames;
  fs::path audio;
  std::vector<std::optional<fs::path>> masks;
  std::vector<bool> supervised;
};

struct CorpusManifest {
  fs::path root;
  Setting setting = Setting::S4;
  Split split = Split::Train;
  int frames_per_clip = kDefaultFrames;
  std::vector<ClipDescriptor> clips;

  /// Paths are stored relative to `root`, so a corpus can be moved.
  nlohmann::json to_json() const {
    auto rel = [&](const fs::path& p) { return p.lexically_relative(root).generic_string(); };
    nlohmann::json j;
    j["setting"] = to_string(setting);
    j["split"] = to_string(split);
    j["frames_per_clip"] = frames_per_clip;
    j["clips"] = nlohmann::json::array();
    for (const auto& c : clips) {
      nlohmann::json jc;
      jc["clip_id"] = c.clip_id;
      jc["audio"] = rel(c.audio);
      jc["frames"] = nlohmann::json::array();
      for (const auto& f : c.frames) jc["frames"].push_back(rel(f));
      jc["masks"] = nlohmann::json::array();
      for (const auto& m : c.masks) jc["masks"].push_back(m ? nlohmann::json(rel(*m)) : nlohmann::json(nullptr));
      jc["supervised"] = c.supervised;
      j["clips"].push_back(std::move(jc));
    }
    return j;
  }

  static CorpusManifest from_json(const nlohmann::json& j, const fs::path& root) {
    CorpusManifest m;
    m.root = root;
    m.setting = parse_setting(j.at("setting").get<std::string>());
    m.split = parse_split(j.at("split").get<std::string>());
    m.frames_per_clip = j.at("frames_per_clip").get<int>();
    for (const auto& jc : j.at("clips")) {
      ClipDescriptor c;
      c.clip_id = jc.at("clip_id").get<std::string>();
      c.audio = root / jc.at("audio").get<std::string>();
      for (const auto& f : jc.at("frames")) c.frames.emplace_back(root / f.get<std::string>());
      for (const auto& mk : jc.at("masks"))
        c.masks.push_back(mk.is_null() ? std::nullopt : std::optional<fs::path>(root / mk.get<std::string>()));
      c.supervised = jc.at("supervised").get<std::vector<bool>>();
      m.clips.push_back(std::move(c));
    }
    return m;
  }
};

/// In-memory corpus.
struct Corpus {
  Setting setting = Setting::S4;
  Split split = Split::Train;
  std::vector<ClipSample> clips;
};

// ---------------------------------------------------------------------------
// Quantisation shared by the writer, the reader and the generator, so that a
// written corpus reloads bit-identically.

inline std::int16_t to_pcm(double x) {
  return static_cast<std::int16_t>(std::clamp<long>(std::lround(x * 32768.0), -32768, 32767));
}
inline double from_pcm(std::int16_t q) { return q / 32768.0; }
inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v * 255.0), 0, 255)); }
inline double from_byte(std::uint8_t b) { return b / 255.0; }

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::vector<fs::path> numbered_pngs(const fs::path& dir) {
  static const std::regex re(R"((\d+)\.png)");
  std::vector<std::pair<int, fs::path>> found;
  if (!fs::is_directory(dir)) return {};
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) found.emplace_back(std::stoi(m[1]), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (int i = 0; i < static_cast<int>(found.size()); ++i) {
    if (found[static_cast<std::size_t>(i)].first != i) break;
    out.push_back(found[static_cast<std::size_t>(i)].second);
  }
  return out;
}

}  // namespace detail

/// Scans `<root>/<setting>/<split>/` and describes every clip directory.
inline CorpusManifest load_corpus(const fs::path& root, Setting setting, Split split = Split::Train,
                                  int expected_frames = kDefaultFrames) {
  const fs::path dir = root / to_string(setting) / to_string(split);
  if (!fs::is_directory(dir)) throw LoadError("", "corpus directory not found: " + dir.string());
  std::vector<fs::path> clip_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) clip_dirs.push_back(e.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());

  CorpusManifest m{root, setting, split, expected_frames, {}};
  for (const auto& cd : clip_dirs) {
    ClipDescriptor c;
    c.clip_id = cd.filename().string();
    c.frames = detail::numbered_pngs(cd / "frames");
    if (static_cast<int>(c.frames.size()) != expected_frames)
      throw LoadError(c.clip_id, "expected " + std::to_string(expected_frames) + " frames, found " +
                                     std::to_string(c.frames.size()));
    c.audio = cd / "audio.wav";
    if (!fs::is_regular_file(c.audio)) throw LoadError(c.clip_id, "missing audio.wav");
    c.supervised = supervision_pattern(setting, split, expected_frames);
    for (int t = 0; t < expected_frames; ++t) {
      const fs::path mp = cd / "masks" / (std::to_string(t) + ".png");
      if (fs::is_regular_file(mp))
        c.masks.emplace_back(mp);
      else if (c.supervised[static_cast<std::size_t>(t)])
        throw LoadError(c.clip_id, "missing mask for supervised frame " + std::to_string(t));
      else
        c.masks.emplace_back(std::nullopt);
    }
    m.clips.push_back(std::move(c));
  }
  return m;
}

inline ClipSample load_clip(const ClipDescriptor& c, Setting setting, Split split) {
  ClipSample s;
  s.clip_id = c.clip_id;
  s.setting = setting;
  s.split = split;
  s.supervised = c.supervised;
  const int t_count = static_cast<int>(c.frames.size());
  try {
    int h = 0, w = 0;
    std::vector<double> data;
    for (const auto& f : c.frames) {
      const io::Image8 img = io::read_png(f, 3);
      if (h == 0) {
        h = img.height;
        w = img.width;
        data.reserve(static_cast<std::size_t>(t_count) * 3 * h * w);
      } else if (img.height != h || img.width != w) {
        throw LoadError(c.clip_id, "frame size changes within clip");
      }
      for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < h * w; ++i) data.push_back(from_byte(img.pixels[static_cast<std::size_t>(i * 3 + ch)]));
    }
    s.frames = Tensor({t_count, 3, h, w}, std::move(data));

    const io::PcmAudio pcm = io::read_wav(c.audio);
    s.sample_rate = pcm.sample_rate;
    s.waveform.reserve(pcm.samples.size());
    for (auto q : pcm.samples) s.waveform.push_back(from_pcm(q));

    Tensor masks({t_count, h, w});
    s.gt_available.assign(static_cast<std::size_t>(t_count), false);
    bool any = false;
    for (int t = 0; t < t_count; ++t) {
      const auto& mp = c.masks[static_cast<std::size_t>(t)];
      if (!mp) continue;
      const io::Image8 img = io::read_png(*mp, 1);
      if (img.height != h || img.width != w) throw LoadError(c.clip_id, "mask size differs from frame size");
      for (int i = 0; i < h * w; ++i)
        masks[static_cast<std::size_t>(t * h * w + i)] = img.pixels[static_cast<std::size_t>(i)] > 127 ? 1.0 : 0.0;
      s.gt_available[static_cast<std::size_t>(t)] = true;
      any = true;
    }
    if (any) s.gt_masks = std::move(masks);
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError(c.clip_id, e.what());
  }
  return s;
}

inline Corpus load_clips(const CorpusManifest& m) {
  Corpus corpus{m.setting, m.split, {}};
  for (const auto& c : m.clips) corpus.clips.push_back(load_clip(c, m.setting, m.split));
  return corpus;
}

/// Writes a corpus in the on-disk layout and returns its manifest (also
/// saved as manifest.json next to the clip folders).
inline CorpusManifest write_corpus(const Corpus& corpus, const fs::path& root) {
  const fs::path dir = root / to_string(corpus.setting) / to_string(corpus.split);
  fs::create_directories(dir);
  CorpusManifest m{root, corpus.setting, corpus.split, 0, {}};
  for (const auto& s : corpus.clips) {
    const int t_count = s.num_frames(), h = s.height(), w = s.width();
    m.frames_per_clip = t_count;
    const fs::path cd = dir / s.clip_id;
    fs::create_directories(cd / "frames");
    ClipDescriptor c;
    c.clip_id = s.clip_id;
    c.supervised = s.supervised;
    for (int t = 0; t < t_count; ++t) {
      io::Image8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
      for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < h * w; ++i)
          img.pixels[static_cast<std::size_t>(i * 3 + ch)] = to_byte(s.frames[static_cast<std::size_t>((t * 3 + ch) * h * w + i)]);
      const fs::path fp = cd / "frames" / (std::to_string(t) + ".png");
      io::write_png(fp, img);
      c.frames.push_back(fp);
    }
    io::PcmAudio pcm{s.sample_rate, {}};
    pcm.samples.reserve(s.waveform.size());
    for (double x : s.waveform) pcm.samples.push_back(to_pcm(x));
    c.audio = cd / "audio.wav";
    io::write_wav(c.audio, pcm);
    for (int t = 0; t < t_count; ++t) {
      if (!s.gt_masks || !s.gt_available[static_cast<std::size_t>(t)]) {
        c.masks.emplace_back(std::nullopt);
        continue;
      }
      fs::create_directories(cd / "masks");
      io::Image8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
      for (int i = 0; i < h * w; ++i)
        img.pixels[static_cast<std::size_t>(i)] = (*s.gt_masks)[static_cast<std::size_t>(t * h * w + i)] > 0.5 ? 255 : 0;
      const fs::path mp = cd / "masks" / (std::to_string(t) + ".png");
      io::write_png(mp, img);
      c.masks.emplace_back(mp);
    }
    m.clips.push_back(std::move(c));
  }
  std::ofstream(dir / "manifest.json") << m.to_json().dump(2) << '\n';
  return m;
}

// ---------------------------------------------------------------------------
// Transforms

/// Bilinear frames, nearest-neighbour masks (masks stay binary).
inline ClipSample resize_clip(const ClipSample& sample, int height, int width) {
  if (height <= 0 || width <= 0 || height % 32 || width % 32)
    throw ArgumentError("resize_clip: target " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be positive and divisible by 32");
  ClipSample out = sample;
  out.frames = resize_bilinear(sample.frames, height, width);
  if (sample.gt_masks) out.gt_masks = resize_nearest(*sample.gt_masks, height, width);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
  int n_clips = 16;
  int n_shapes = 1;
  int height = 64;
  int width = 64;
  int frames = kDefaultFrames;
  double motion_px_per_frame = 2.0;
  std::vector<double> tone_frequencies{500.0, 1000.0, 2000.0, 4000.0};  // one per shape class
  std::uint64_t seed = 0;
  Setting setting = Setting::S4;
  Split split = Split::Train;
  double silent_fraction = 0.0;  // probability that a clip has no sounding shape
  int sample_rate = kDefaultSampleRate;
  double noise_floor_db = -40.0;

  bool operator==(const SynthConfig&) const = default;

  void validate() const {
    if (n_clips < 1) throw ArgumentError("synth: n_clips must be >= 1");
    if (n_shapes < 1 || n_shapes > 3) throw ArgumentError("synth: n_shapes must be in 1..3");
    if (setting == Setting::S4 && n_shapes != 1) throw ArgumentError("synth: S4 corpora have exactly one shape");
    if (height <= 0 || width <= 0 || height % 32 || width % 32)
      throw ArgumentError("synth: H and W must be positive multiples of 32");
    if (frames < 2) throw ArgumentError("synth: at least 2 frames");
    if (static_cast<int>(tone_frequencies.size()) < n_shapes)
      throw ArgumentError("synth: need at least n_shapes tone classes");
    for (double f : tone_frequencies)
      if (!(f > 0 && f < sample_rate / 2.0)) throw ArgumentError("synth: tone frequency outside (0, Nyquist)");
    if (!(silent_fraction >= 0 && silent_fraction <= 1)) throw ArgumentError("synth: silent_fraction in [0,1]");
    if (sample_rate <= 0) throw ArgumentError("synth: sample_rate must be positive");
  }
};

/// One rendered shape track; exposed so tests can re-render independently.
struct ShapeTrack {
  int shape_class = 0;
  bool square = false;
  double radius = 0;
  std::array<double, 3> color{};
  std::vector<std::pair<double, double>> centers;  // (row, col) per frame
  bool sounding = false;
};

/// Pixel-centre inside test shared by renderer and tests.
inline bool shape_covers(const ShapeTrack& s, int frame, int row, int col) {
  const auto [cy, cx] = s.centers[static_cast<std::size_t>(frame)];
  const double dy = row + 0.5 - cy, dx = col + 0.5 - cx;
  if (s.square) return std::abs(dy) <= s.radius && std::abs(dx) <= s.radius;
  return dy * dy + dx * dx <= s.radius * s.radius;
}

inline constexpr std::array<std::array<double, 3>, 4> kShapePalette{{
    {0.95, 0.20, 0.15},
    {0.15, 0.85, 0.25},
    {0.20, 0.35, 0.95},
    {0.95, 0.85, 0.15},
}};

namespace detail {

/// Position of a point moving at constant speed inside [lo, hi], reflected at the borders.
inline double reflect(double p, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double x = std::fmod(p - lo, 2 * span);
  if (x < 0) x += 2 * span;
  return lo + (x <= span ? x : 2 * span - x);
}

}  // namespace detail

struct SyntheticClip {
  ClipSample sample;
  std::vector<ShapeTrack> shapes;  // in draw order (later shapes occlude earlier ones)
};

inline SyntheticClip generate_synthetic_clip(const SynthConfig& cfg, int index, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int H = cfg.height, W = cfg.width, T = cfg.frames;
  const double scale = std::min(H, W) / 64.0;

  SyntheticClip out;
  const int n_classes = static_cast<int>(cfg.tone_frequencies.size());
  std::vector<int> classes(static_cast<std::size_t>(n_classes));
  std::iota(classes.begin(), classes.end(), 0);
  for (int i = n_classes - 1; i > 0; --i) std::swap(classes[static_cast<std::size_t>(i)], classes[rng() % static_cast<std::uint64_t>(i + 1)]);

  const bool silent = u01(rng) < cfg.silent_fraction;
  for (int k = 0; k < cfg.n_shapes; ++k) {
    ShapeTrack s;
    s.shape_class = classes[static_cast<std::size_t>(k)];
    s.square = s.shape_class % 2 == 1;
    s.color = kShapePalette[static_cast<std::size_t>(s.shape_class) % kShapePalette.size()];
    s.radius = (9.0 + 4.0 * u01(rng)) * scale;
    const double y0 = s.radius + u01(rng) * (H - 2 * s.radius);
    const double x0 = s.radius + u01(rng) * (W - 2 * s.radius);
    const double angle = 2 * std::numbers::pi * u01(rng);
    const double vy = cfg.motion_px_per_frame * std::sin(angle), vx = cfg.motion_px_per_frame * std::cos(angle);
    for (int t = 0; t < T; ++t)
      s.centers.emplace_back(detail::reflect(y0 + vy * t, s.radius, H - s.radius),
                             detail::reflect(x0 + vx * t, s.radius, W - s.radius));
    out.shapes.push_back(std::move(s));
  }
  if (!silent) {
    if (cfg.setting == Setting::S4) {
      out.shapes[0].sounding = true;
    } else {
      bool any = false;
      for (auto& s : out.shapes) any |= (s.sounding = u01(rng) < 0.5);
      if (!any) out.shapes[rng() % out.shapes.size()].sounding = true;
    }
  }

  ClipSample& c = out.sample;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%04d", index);  // zero-padded so directory order is generation order
  c.clip_id = id;
  c.setting = cfg.setting;
  c.split = cfg.split;
  c.sample_rate = cfg.sample_rate;
  c.frames = Tensor({T, 3, H, W});
  Tensor masks({T, H, W});
  std::array<double, 3> bg{};
  for (double& v : bg) v = 0.05 + 0.2 * u01(rng);
  for (int t = 0; t < T; ++t)
    for (int r = 0; r < H; ++r)
      for (int col = 0; col < W; ++col) {
        const ShapeTrack* top = nullptr;
        for (const auto& s : out.shapes)
          if (shape_covers(s, t, r, col)) top = &s;
        const auto& rgb = top ? top->color : bg;
        for (int ch = 0; ch < 3; ++ch) {
          const double v = std::clamp(rgb[static_cast<std::size_t>(ch)] + 0.02 * gauss(rng), 0.0, 1.0);
          c.frames[static_cast<std::size_t>(((t * 3 + ch) * H + r) * W + col)] = from_byte(to_byte(v));
        }
        masks[static_cast<std::size_t>((t * H + r) * W + col)] = (top && top->sounding) ? 1.0 : 0.0;
      }
  c.gt_masks = std::move(masks);
  c.gt_available.assign(static_cast<std::size_t>(T), true);
  c.supervised = supervision_pattern(cfg.setting, cfg.split, T);

  // Audio: class tones of the sounding shapes over a Gaussian noise floor.
  const auto n_samples = static_cast<std::size_t>(cfg.sample_rate) * static_cast<std::size_t>(T);
  const double noise_std = std::pow(10.0, cfg.noise_floor_db / 20.0);
  const auto n_sounding = std::count_if(out.shapes.begin(), out.shapes.end(), [](const ShapeTrack& s) { return s.sounding; });
  std::vector<std::pair<double, double>> tones;  // (frequency, phase)
  for (const auto& s : out.shapes)
    if (s.sounding) tones.emplace_back(cfg.tone_frequencies[static_cast<std::size_t>(s.shape_class)], 2 * std::numbers::pi * u01(rng));
  const double amp = n_sounding ? 0.5 / static_cast<double>(n_sounding) : 0.0;
  c.waveform.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    double x = noise_std * gauss(rng);
    for (const auto& [f, ph] : tones) x += amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / cfg.sample_rate + ph);
    c.waveform[i] = from_pcm(to_pcm(x));
  }
  return out;
}

/// Deterministic function of cfg (including cfg.seed).
inline Corpus generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Corpus corpus{cfg.setting, cfg.split, {}};
  for (int i = 0; i < cfg.n_clips; ++i) corpus.clips.push_back(generate_synthetic_clip(cfg, i, rng).sample);
  return corpus;
}

}  // namespace avsbg
