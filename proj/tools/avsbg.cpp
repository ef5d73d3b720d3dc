// avsbg command-line driver: synth, train, eval, infer, gradcheck, ablate.
//
// Exit codes: 0 success, 2 argument/config error, 3 numerical failure.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "avsbg/config.hpp"
#include "avsbg/gradcheck.hpp"
#include "avsbg/trainer.hpp"

using namespace avsbg;
using nlohmann::json;

namespace {

constexpr int kExitArgument = 2;
constexpr int kExitNumerical = 3;

// Options that map onto RunConfigFile keys. Only flags the user actually
// passed are layered over the file and environment.
class KeyedOptions {
 public:
  void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    opts_.emplace_back(key, app->add_option(flag, text_[key], help));
  }
  void toggle(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value, const std::string& help) {
    toggles_.emplace_back(key, value, app->add_flag(flag, help));
  }
  void config_file(CLI::App* app) { app->add_option("--config", file_, "key = value run configuration file")->check(CLI::ExistingFile); }

  RunConfigFile resolve() const {
    RunConfigFile cfg = file_.empty() ? RunConfigFile{} : RunConfigFile::load(file_);
    cfg.apply_env();
    RunConfigFile cli;
    for (const auto& [key, opt] : opts_)
      if (opt->count()) cli.set(key, text_.at(key));
    for (const auto& [key, value, opt] : toggles_)
      if (opt->count()) cli.set(key, value);
    cfg.merge(cli);
    return cfg;
  }

 private:
  std::map<std::string, std::string> text_;
  std::vector<std::pair<std::string, CLI::Option*>> opts_;
  std::vector<std::tuple<std::string, std::string, CLI::Option*>> toggles_;
  std::string file_;
};

void add_training_options(CLI::App* app, KeyedOptions& k) {
  k.config_file(app);
  k.option(app, "--setting", "setting", "s4 or ms3");
  k.option(app, "--lr", "lr", "Adam learning rate");
  k.option(app, "--batch-size", "batch_size", "clips per step");
  k.option(app, "--epochs", "epochs", "passes over the corpus");
  k.option(app, "--max-steps", "max_steps", "step cap (0 = none)");
  k.option(app, "--lambda", "lambda", "KL weight");
  k.option(app, "--eta", "eta", "consistency weight");
  k.option(app, "--height", "height", "training height (multiple of 32)");
  k.option(app, "--width", "width", "training width (multiple of 32)");
  k.option(app, "--seed", "seed", "init and shuffle seed");
  k.option(app, "--init", "init_checkpoint", "initialise from this checkpoint");
  k.option(app, "--visual-channels", "visual_channels", "four comma-separated widths");
  k.option(app, "--audio-channels", "audio_channels", "three comma-separated widths");
  k.option(app, "--decoder-channels", "decoder_channels", "decoder width");
  k.option(app, "--motion-levels", "motion_levels", "pyramid levels (1-4) with motion attention, e.g. 3,4");
  k.toggle(app, "--no-motion", "enable_motion", "false", "disable motion attention");
  k.toggle(app, "--no-bg", "enable_bg", "false", "disable the consistency term");
  k.toggle(app, "--no-audio", "enable_audio", "false", "disable audio fusion and KL");
  k.toggle(app, "--freeze-encoders", "freeze_encoders", "true", "keep visual/audio encoders fixed");
}

void write_json(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

void write_run_manifest(const fs::path& dir, const std::string& command, const RunConfigFile& cfg, const json& extra) {
  json j{{"command", command}, {"config", cfg.values()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_json(dir / "run_manifest.json", j);
}

Corpus read_corpus(const fs::path& root, Setting setting, Split split) {
  int frames = kDefaultFrames;
  const fs::path manifest = root / to_string(setting) / to_string(split) / "manifest.json";
  if (fs::is_regular_file(manifest)) frames = json::parse(std::ifstream(manifest)).at("frames_per_clip").get<int>();
  return load_clips(load_corpus(root, setting, split, frames));
}

bool fully_annotated(const Corpus& c) {
  return std::all_of(c.clips.begin(), c.clips.end(), [](const ClipSample& s) { return s.has_full_gt(); });
}

void prepare_run_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ArgumentError(dir.string() + " exists and is not a directory");
  if (fs::is_directory(dir) && !fs::is_empty(dir) && !force)
    throw ArgumentError("output directory " + dir.string() + " is not empty (use --force)");
  fs::create_directories(dir);
}

Trainer trainer_from_checkpoint(const fs::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  TrainConfig tc = ckpt.train;
  tc.init_checkpoint.clear();
  Trainer t(tc, ckpt.model);
  t.load_weights(ckpt);
  return t;
}

io::Image8 gray_png(const Tensor& plane, int h, int w, bool binarize) {
  io::Image8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
  for (int i = 0; i < h * w; ++i) {
    const double v = plane[static_cast<std::size_t>(i)];
    img.pixels[static_cast<std::size_t>(i)] = binarize ? (v > kBinarizeThreshold ? 255 : 0) : to_byte(v);
  }
  return img;
}

// Frame with the predicted mask boundary drawn in red.
io::Image8 overlay_png(const ClipSample& clip, int t, const Tensor& probs) {
  const int h = clip.height(), w = clip.width();
  io::Image8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
  auto fg = [&](int r, int c) {
    return r >= 0 && r < h && c >= 0 && c < w && probs.at(t, r, c) > kBinarizeThreshold;
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto px = static_cast<std::size_t>((r * w + c) * 3);
      const bool edge = fg(r, c) && !(fg(r - 1, c) && fg(r + 1, c) && fg(r, c - 1) && fg(r, c + 1));
      for (int ch = 0; ch < 3; ++ch)
        img.pixels[px + static_cast<std::size_t>(ch)] = edge ? (ch == 0 ? 255 : 0) : to_byte(clip.frames.at(t, ch, r, c));
    }
  return img;
}

int cmd_synth(const RunConfigFile& cfg, const fs::path& out, Split split, bool force) {
  SynthConfig sc = cfg.synth_config();
  sc.split = split;
  sc.validate();
  // one root holds several settings and splits; only the target split must be empty
  const fs::path split_dir = out / to_string(sc.setting) / to_string(split);
  prepare_run_dir(split_dir, force);
  const Corpus corpus = generate_synthetic(sc);
  const CorpusManifest m = write_corpus(corpus, out);
  write_run_manifest(split_dir, "synth", RunConfigFile::from(sc), {{"split", to_string(split)}});
  std::size_t sounding = 0;
  for (const auto& c : corpus.clips)
    if (c.gt_masks && c.gt_masks->sum() > 0) ++sounding;
  std::cout << "wrote " << m.clips.size() << " " << to_string(sc.setting) << "/" << to_string(split) << " clips ("
            << sc.frames << " frames, " << sc.height << "x" << sc.width << ", " << sounding << " with a sounding object) to "
            << split_dir.string() << "\n";
  return 0;
}

int cmd_train(const RunConfigFile& cfg, const fs::path& data, Split split, const fs::path& out, bool force) {
  const TrainConfig tc = cfg.train_config();
  ModelConfig mc;
  cfg.apply(mc);
  tc.validate();
  const Corpus corpus = read_corpus(data, tc.setting, split);
  prepare_run_dir(out, force);
  Trainer trainer(tc, mc);
  const bool scored = fully_annotated(corpus);
  json summary{{"setting", to_string(tc.setting)}, {"clips", corpus.clips.size()}};
  if (!tc.init_checkpoint.empty()) summary["init_checkpoint"] = tc.init_checkpoint;
  if (scored) {
    const MetricsReport step0 = trainer.evaluate(corpus);
    write_json(out / "step0_metrics.json", step0.to_json());
    summary["step0"] = step0.to_json(false);
  }
  std::ofstream log(out / "train_log.jsonl");
  const TrainResult res = trainer.run(corpus, &log);
  res.checkpoint.save(out / "checkpoint.ckpt");
  summary["steps"] = trainer.step();
  summary["final_loss"] = res.final_loss();
  if (scored) {
    const MetricsReport final_metrics = trainer.evaluate(corpus);
    write_json(out / "metrics.json", final_metrics.to_json());
    summary["final"] = final_metrics.to_json(false);
  }
  write_run_manifest(out, "train", RunConfigFile::from(tc), {{"data", data.string()}, {"summary", summary}});
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, Split split, const fs::path& out, bool per_frame) {
  Trainer t = trainer_from_checkpoint(ckpt);
  const Corpus corpus = read_corpus(data, t.config().setting, split);
  const MetricsReport r = t.evaluate(corpus);
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(out / "metrics.json", r.to_json());
    write_run_manifest(out, "eval", RunConfigFile::from(t.config()), {{"checkpoint", ckpt.string()}, {"data", data.string()}});
  }
  std::cout << r.to_json(per_frame).dump(2) << "\n";
  return 0;
}

int cmd_infer(const fs::path& ckpt, const fs::path& data, Split split, const std::string& clip_id, const fs::path& out,
              bool overlay, bool force) {
  Trainer t = trainer_from_checkpoint(ckpt);
  const Corpus corpus = read_corpus(data, t.config().setting, split);
  prepare_run_dir(out, force);
  int written = 0;
  for (const auto& raw : corpus.clips) {
    if (!clip_id.empty() && raw.clip_id != clip_id) continue;
    const ClipSample clip = raw.height() == t.config().height && raw.width() == t.config().width
                                ? raw
                                : resize_clip(raw, t.config().height, t.config().width);
    const Tensor probs = t.predict(clip, t.config().switches());
    const int h = clip.height(), w = clip.width();
    const fs::path dir = out / clip.clip_id;
    fs::create_directories(dir);
    for (int f = 0; f < clip.num_frames(); ++f) {
      const Tensor plane = probs.slice0(f, 1);
      io::write_png(dir / ("mask_" + std::to_string(f) + ".png"), gray_png(plane, h, w, true));
      io::write_png(dir / ("prob_" + std::to_string(f) + ".png"), gray_png(plane, h, w, false));
      if (overlay) io::write_png(dir / ("overlay_" + std::to_string(f) + ".png"), overlay_png(clip, f, probs));
      ++written;
    }
  }
  if (!clip_id.empty() && written == 0) throw ArgumentError("no clip named '" + clip_id + "'");
  write_run_manifest(out, "infer", RunConfigFile::from(t.config()),
                     {{"checkpoint", ckpt.string()}, {"data", data.string()}, {"frames_written", written}});
  std::cout << "wrote masks for " << written << " frames to " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(const GradCheckOptions& opt, const std::string& fault, const fs::path& out) {
  if (!(opt.tolerance > 0) || !(opt.step > 0)) throw ArgumentError("--eps and --step must be positive");
  if (opt.samples_per_tensor < 1) throw ArgumentError("--samples must be >= 1");
  const auto& terms = GradCheckFixture::terms();
  if (!fault.empty() && std::find(terms.begin(), terms.end(), fault) == terms.end() && fault != "total")
    throw ArgumentError("unknown fault term '" + fault + "'");
  testing::armed_fault() = fault;
  const GradCheckFixture fx(opt.seed);
  const GradCheckReport r = fx.run(opt);
  testing::armed_fault().clear();
  json j{{"tolerance", opt.tolerance}, {"step", opt.step}, {"seed", opt.seed}, {"terms", json::object()}};
  for (const auto& term : r.terms()) {
    const bool ok = r.worst(term) <= opt.tolerance;
    std::printf("%-12s max rel err %.3e  %s\n", term.c_str(), r.worst(term), ok ? "PASS" : "FAIL");
    j["terms"][term] = {{"max_rel_error", r.worst(term)}, {"pass", ok}};
  }
  j["pass"] = r.passed();
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(out / "gradcheck.json", j);
  }
  if (!r.passed()) {
    std::string names;
    for (const auto& f : r.failing_terms()) names += (names.empty() ? "" : ", ") + f;
    std::cerr << "gradient check failed for: " << names << "\n";
    return kExitNumerical;
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto comma = std::min(s.find(',', pos), s.size());
    const std::string item = detail::trim(std::string_view(s).substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

int cmd_ablate(const RunConfigFile& cfg, const fs::path& data, Split split, const fs::path& eval_data, const std::string& switches,
               const std::string& seeds, const fs::path& out, bool force) {
  const TrainConfig base = cfg.train_config();
  ModelConfig mc;
  cfg.apply(mc);
  base.validate();
  const Corpus train_corpus = read_corpus(data, base.setting, split);
  const Corpus eval_corpus = eval_data.empty() ? train_corpus : read_corpus(eval_data, base.setting, split);
  std::vector<std::uint64_t> seed_list;
  for (const auto& s : split_list(seeds)) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ArgumentError("bad seed '" + s + "'");
    seed_list.push_back(v);
  }
  if (seed_list.empty()) seed_list.push_back(base.seed);
  prepare_run_dir(out, force);

  AblationReport mean;
  json per_seed = json::array();
  for (std::uint64_t seed : seed_list) {
    TrainConfig tc = base;
    tc.seed = seed;
    const AblationReport r = ablate(tc, train_corpus, eval_corpus, split_list(switches), mc);
    per_seed.push_back({{"seed", seed}, {"report", r.to_json()}});
    if (mean.rows.empty()) {
      mean = r;
      for (auto& row : mean.rows) row.metrics.per_frame.clear();
    } else {
      for (std::size_t i = 0; i < r.rows.size(); ++i) {
        mean.rows[i].metrics.miou += r.rows[i].metrics.miou;
        mean.rows[i].metrics.fscore += r.rows[i].metrics.fscore;
        mean.rows[i].final_loss += r.rows[i].final_loss;
      }
    }
  }
  const double n = static_cast<double>(seed_list.size());
  for (auto& row : mean.rows) {
    row.metrics.miou /= n;
    row.metrics.fscore /= n;
    row.final_loss /= n;
  }
  write_json(out / "ablation.json", {{"mean", mean.to_json()}, {"per_seed", per_seed}});
  std::ofstream(out / "ablation.txt") << mean.table();
  write_run_manifest(out, "ablate", RunConfigFile::from(base), {{"data", data.string()}, {"switches", switches}, {"seeds", seed_list}});
  std::cout << mean.table();
  return 0;
}

Split split_from(const std::string& s) { return parse_split(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual segmentation with bidirectional generation"};
  app.require_subcommand(1);

  // synth
  KeyedOptions synth_keys;
  std::string synth_out, synth_split = "train";
  bool synth_force = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_keys.config_file(synth);
  synth_keys.option(synth, "--setting", "setting", "s4 or ms3");
  synth_keys.option(synth, "--clips", "clips", "number of clips");
  synth_keys.option(synth, "--shapes", "shapes", "shapes per clip (1..3)");
  synth_keys.option(synth, "--seed", "seed", "generator seed");
  synth_keys.option(synth, "--height", "height", "frame height");
  synth_keys.option(synth, "--width", "width", "frame width");
  synth_keys.option(synth, "--frames", "frames", "frames per clip");
  synth_keys.option(synth, "--motion-px", "motion_px", "shape speed in pixels per frame");
  synth_keys.option(synth, "--silent-fraction", "silent_fraction", "probability of a silent clip");
  synth_keys.option(synth, "--sample-rate", "sample_rate", "audio sample rate");
  synth->add_option("--out", synth_out, "corpus root")->required();
  synth->add_option("--split", synth_split, "train, val or test");
  synth->add_flag("--force", synth_force, "allow writing into a non-empty directory");

  // train
  KeyedOptions train_keys;
  std::string train_data, train_out, train_split = "train";
  bool train_force = false;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_training_options(train_cmd, train_keys);
  train_cmd->add_option("--data", train_data, "corpus root")->required();
  train_cmd->add_option("--split", train_split, "corpus split");
  train_cmd->add_option("--out", train_out, "run directory")->required();
  train_cmd->add_flag("--force", train_force, "allow a non-empty run directory");

  // eval
  std::string eval_ckpt, eval_data, eval_out, eval_split = "train";
  bool eval_frames = false;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a corpus");
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "corpus root")->required();
  eval_cmd->add_option("--split", eval_split, "corpus split");
  eval_cmd->add_option("--out", eval_out, "optional run directory for metrics.json");
  eval_cmd->add_flag("--per-frame", eval_frames, "include per-frame scores");

  // infer
  std::string infer_ckpt, infer_data, infer_out, infer_clip, infer_split = "train";
  bool infer_overlay = false, infer_force = false;
  auto* infer_cmd = app.add_subcommand("infer", "write per-frame mask and probability PNGs");
  infer_cmd->add_option("--ckpt", infer_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--data", infer_data, "corpus root")->required();
  infer_cmd->add_option("--split", infer_split, "corpus split");
  infer_cmd->add_option("--clip", infer_clip, "only this clip id");
  infer_cmd->add_option("--out", infer_out, "run directory")->required();
  infer_cmd->add_flag("--overlay", infer_overlay, "also write contour overlays");
  infer_cmd->add_flag("--force", infer_force, "allow a non-empty run directory");

  // gradcheck
  GradCheckOptions gc;
  std::string gc_fault, gc_out;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every loss term");
  gc_cmd->add_option("--eps", gc.tolerance, "relative error tolerance")->capture_default_str();
  gc_cmd->add_option("--step", gc.step, "finite-difference step")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "fixture seed")->capture_default_str();
  gc_cmd->add_option("--samples", gc.samples_per_tensor, "entries sampled per tensor")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc_fault, "flip the gradient sign of this term (self-test)");
  gc_cmd->add_option("--out", gc_out, "optional run directory");

  // ablate
  KeyedOptions ablate_keys;
  std::string ab_data, ab_eval, ab_out, ab_switches, ab_seeds, ab_split = "train";
  bool ab_force = false;
  auto* ab_cmd = app.add_subcommand("ablate", "train every on/off combination of the given switches");
  add_training_options(ab_cmd, ablate_keys);
  ab_cmd->add_option("--data", ab_data, "training corpus root")->required();
  ab_cmd->add_option("--eval-data", ab_eval, "evaluation corpus root (default: training corpus)");
  ab_cmd->add_option("--split", ab_split, "corpus split");
  ab_cmd->add_option("--switches", ab_switches, "comma list from audio,motion,bg");
  ab_cmd->add_option("--seeds", ab_seeds, "comma list of seeds; results are averaged");
  ab_cmd->add_option("--out", ab_out, "run directory")->required();
  ab_cmd->add_flag("--force", ab_force, "allow a non-empty run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitArgument;
  }

  try {
    if (*synth) return cmd_synth(synth_keys.resolve(), synth_out, split_from(synth_split), synth_force);
    if (*train_cmd) return cmd_train(train_keys.resolve(), train_data, split_from(train_split), train_out, train_force);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, split_from(eval_split), eval_out, eval_frames);
    if (*infer_cmd)
      return cmd_infer(infer_ckpt, infer_data, split_from(infer_split), infer_clip, infer_out, infer_overlay, infer_force);
    if (*gc_cmd) return cmd_gradcheck(gc, gc_fault, gc_out);
    if (*ab_cmd)
      return cmd_ablate(ablate_keys.resolve(), ab_data, split_from(ab_split), ab_eval, ab_switches, ab_seeds, ab_out, ab_force);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure in " << e.term() << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {  // ArgumentError
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgument;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
