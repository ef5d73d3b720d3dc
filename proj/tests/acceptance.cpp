// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>

#include "avsbg/gradcheck.hpp"
#include "avsbg/trainer.hpp"
#include "oracles.hpp"

using namespace avsbg;
using nlohmann::json;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kOracleTolerance = 1e-6;
constexpr int kOracleInstances = 100;
constexpr double kLn2Tolerance = 1e-9;
constexpr double kArbitraryScaleTolerance = 1e-15;
constexpr double kLearnMiou = 0.90;
constexpr int kLearnSteps = 300;
constexpr double kAblationMargin = 0.02;
constexpr double kDeterminismTolerance = 1e-6;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::mt19937_64& rng() {
  static std::mt19937_64 r(2024);
  return r;
}

SynthConfig synth(Setting s, int clips, std::uint64_t seed) {
  SynthConfig c;
  c.setting = s;
  c.n_clips = clips;
  c.n_shapes = s == Setting::MS3 ? 2 : 1;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------

Outcome shape_chain() {
  Outcome o;
  ModelConfig mc;
  mc.height = mc.width = 224;
  ParamStore store(0);
  const auto vw = VisualEncoderWeights::create(store, mc.backbone);
  const auto fw = FusionWeights::create(store, mc.backbone);
  const auto mw = MotionWeights::create(store);
  const auto pw = ProjectionWeights::create(store);
  const Tensor frames = oracle::random_tensor({2, 3, 224, 224}, rng(), 0, 1);
  NoGradGuard g;
  const FeaturePyramid pyr = encode_visual(Var::constant(frames), vw);
  const int want[] = {56, 28, 14, 7};
  std::string sizes;
  for (std::size_t i = 0; i < 4; ++i) {
    const Var& l = pyr.levels[i];
    o.require(l.dim(2) == want[i] && l.dim(3) == want[i], "level " + std::to_string(i + 1) + " size");
    sizes += (i ? "," : "") + std::to_string(l.dim(2));
  }
  o.note("levels (" + sizes + ")^2");
  const auto fused = fuse_pyramid(pyr, Var(), fw, false);
  const auto mot = motion_pyramid(fused, mw, false);
  const Var masked = build_masked_feature(mot.zhat[3], Var::constant(Tensor({2, 224, 224}, 1.0)), MaskSource::GroundTruth, pw);
  o.require(masked.shape() == Shape{2, kMaskedChannels, 7, 7}, "masked feature shape " + shape_str(masked.shape()));
  const Var rec = reconstruct_audio(masked, pw);
  o.require(rec.shape() == Shape{2, kAudioDim}, "reconstructed audio shape");
  o.note("projection input " + shape_str(masked.shape()) + " -> " + shape_str(rec.shape()));
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  GradCheckOptions opt;
  opt.tolerance = kGradTolerance;
  const GradCheckFixture fx(0);
  const GradCheckReport r = fx.run(opt);
  for (const char* term : {"bce", "kl", "consistency", "total"}) {
    const double w = r.worst(term);
    o.require(w < kGradTolerance && w >= 0, std::string(term) + " rel err " + fmt("%.2e", w));
    o.note(std::string(term) + " " + fmt("%.2e", w));
  }
  o.note(std::to_string(r.entries.size()) + " entries, T=" + std::to_string(fx.clip.num_frames()) + ", " +
         std::to_string(fx.config.height) + "x" + std::to_string(fx.config.width));
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  double worst_corr = 0, worst_cost = 0, worst_kl = 0, worst_iou = 0, worst_f = 0;
  for (int i = 0; i < kOracleInstances; ++i) {
    const int t = 1 + i % 3, c = 2 + i % 7, h = 1 + i % 4, w = 1 + (i / 4) % 4;
    const Tensor f = oracle::random_tensor({t, c, h, w}, rng());
    const Tensor a = oracle::random_tensor({t, c}, rng());
    worst_corr = std::max(worst_corr, oracle::max_rel_err(channel_correlation(Var::constant(f), Var::constant(a)).value(),
                                                          oracle::channel_correlation(f, a)));
    const Tensor x = oracle::random_tensor({c, h, w}, rng()), y = oracle::random_tensor({c, h, w}, rng());
    worst_cost = std::max(worst_cost, oracle::max_rel_err(cost_volume(x, y), oracle::cost_volume(x, y)));

    const int kt = 2 + i % 3, kc = 3 + i % 5, side = 32 << (i % 2);
    FusedPyramid fp;
    std::vector<Tensor> levels;
    for (std::size_t l = 0; l < 4; ++l) {
      levels.push_back(oracle::random_tensor({kt, kc, side >> (l + 2), side >> (l + 2)}, rng()));
      fp.z[l] = Var::constant(levels.back());
    }
    const Tensor probs = oracle::random_tensor({kt, side, side}, rng(), 0, 1);
    const Tensor audio = oracle::random_tensor({kt, kc}, rng());
    const double lambda = 0.5;
    worst_kl = std::max(worst_kl, oracle::rel_err(kl_alignment(Var::constant(probs), fp, Var::constant(audio), lambda).value()[0],
                                                  lambda * oracle::kl_alignment(probs, levels, audio)));

    const Tensor p = oracle::random_tensor({3, 5 + i % 4, 6}, rng(), 0, 1);
    const Tensor g = oracle::random_mask(p.shape(), rng(), 0.1 + 0.008 * i);
    worst_iou = std::max(worst_iou, oracle::rel_err(iou(p, g), oracle::iou(p, g)));
    worst_f = std::max(worst_f, oracle::rel_err(fscore(count_pixels(p.values(), g.values())), oracle::fscore(oracle::count(p, g))));
  }
  const std::pair<const char*, double> all[] = {
      {"channel_correlation", worst_corr}, {"cost_volume", worst_cost}, {"kl_alignment", worst_kl}, {"iou", worst_iou}, {"fscore", worst_f}};
  for (const auto& [name, w] : all) {
    o.require(w < kOracleTolerance, std::string(name) + " " + fmt("%.2e", w));
    o.note(std::string(name) + " " + fmt("%.1e", w));
  }
  o.note(std::to_string(kOracleInstances) + " instances each");
  return o;
}

Outcome loss_identities() {
  Outcome o;
  const Tensor a = oracle::random_tensor({5, 128}, rng());
  o.require(consistency_loss(Var::constant(a), Var::constant(a), 1.0).value()[0] == 0.0, "consistency(A,A) == 0");

  // power-of-two row scales are exact in binary floating point
  Tensor pow2 = a, arbitrary = a;
  std::uniform_real_distribution<double> u(0.01, 100.0);
  for (int t = 0; t < 5; ++t) {
    const double s2 = std::ldexp(1.0, t * 3 - 6), s = u(rng());
    for (int k = 0; k < 128; ++k) {
      pow2.at(t, k) *= s2;
      arbitrary.at(t, k) *= s;
    }
  }
  const Tensor b = oracle::random_tensor({5, 128}, rng());
  const double base = consistency_loss(Var::constant(a), Var::constant(b), 1.0).value()[0];
  o.require(consistency_loss(Var::constant(pow2), Var::constant(b), 1.0).value()[0] == base, "scale invariance (2^k rows)");
  const double drift = std::abs(consistency_loss(Var::constant(arbitrary), Var::constant(b), 1.0).value()[0] - base);
  o.require(drift <= kArbitraryScaleTolerance, "scale invariance (arbitrary rows) drift " + fmt("%.1e", drift));
  o.note("arbitrary-scale drift " + fmt("%.1e", drift));

  FusedPyramid fp;
  for (std::size_t l = 0; l < 4; ++l) fp.z[l] = Var::constant(oracle::random_tensor({2, 8, 8 >> l, 8 >> l}, rng()));
  const Var kl = kl_alignment(Var::constant(oracle::random_tensor({2, 32, 32}, rng(), 0, 1)), fp,
                              Var::constant(oracle::random_tensor({2, 8}, rng())), 0.0);
  o.require(kl.value()[0] == 0.0, "lambda=0 gives kl exactly 0");

  const Var z = Var::constant(oracle::random_tensor({5, 128, 4, 4}, rng()));
  o.require(motion_attend(z, Var::constant(Tensor({128, 128})), Var::constant(Tensor({128}))).value() == z.value(),
            "P=0 motion_attend identity");

  BackboneConfig bc;
  bc.visual_channels = {8, 8, 16, 16};
  ParamStore store(1);
  const auto fw = FusionWeights::create(store, bc);
  FeaturePyramid pyr;
  for (std::size_t l = 0; l < 4; ++l)
    pyr.levels[l] = Var::constant(oracle::random_tensor({2, bc.visual_channels[l], 16 >> l, 16 >> l}, rng()));
  const auto off = fuse_pyramid(pyr, Var(), fw, false);
  bool same = true;
  for (std::size_t l = 0; l < 4; ++l) same = same && off.z[l].value() == off.aligned[l].value();
  o.require(same, "audio disabled gives Z_i == F'_i");
  return o;
}

Outcome metric_constants() {
  Outcome o;
  double worst = 0;
  int exact = 0, total = 0;
  for (int i = 0; i <= 1000; ++i) {
    const double p = i / 1000.0;
    const double f = fbeta(p, p, 0.3);
    worst = std::max(worst, std::abs(f - p));
    exact += f == p;
    ++total;
  }
  o.require(worst == 0.0, "F(p,p) == p, max deviation " + fmt("%.1e", worst));
  o.note("F(p,p)==p on " + std::to_string(exact) + "/" + std::to_string(total) + " grid points");

  const Tensor y = oracle::random_mask({5, 16, 16}, rng());
  const double b1 = bce_loss(Tensor({5, 16, 16}, 0.5), y, std::vector<bool>(5, true));
  const double b2 = bce_with_logits(Var::constant(Tensor({5, 16, 16})), y, std::vector<bool>(5, true)).value()[0];
  o.require(std::abs(b1 - std::numbers::ln2) <= kLn2Tolerance && std::abs(b2 - std::numbers::ln2) <= kLn2Tolerance, "BCE(0.5) == ln 2");
  o.note("BCE(0.5) - ln2 = " + fmt("%.1e", b1 - std::numbers::ln2));

  o.require(iou(Tensor({1, 8, 8}), Tensor({1, 8, 8})) == 1.0, "empty/empty IoU == 1");
  return o;
}

Outcome learnability() {
  Outcome o;
  const Corpus corpus = generate_synthetic(synth(Setting::S4, 16, 0));
  TrainConfig tc = TrainConfig::for_setting(Setting::S4);
  tc.max_steps = kLearnSteps;
  tc.epochs = (kLearnSteps * tc.batch_size + 15) / 16;
  Trainer t(tc);
  const TrainResult r = t.run(corpus);
  // S4 training clips only supervise frame 0; score every frame against the full masks
  const Corpus scored = generate_synthetic([] {
    SynthConfig s = synth(Setting::S4, 16, 0);
    s.split = Split::Test;
    return s;
  }());
  for (std::size_t i = 0; i < scored.clips.size(); ++i)
    o.require(scored.clips[i].frames == corpus.clips[i].frames, "scoring copy matches training clip " + std::to_string(i));
  const MetricsReport m = t.evaluate(scored);
  o.require(m.miou >= kLearnMiou, "mIoU " + fmt("%.4f", m.miou) + " < " + fmt("%.2f", kLearnMiou));
  o.note("mIoU " + fmt("%.4f", m.miou) + ", F " + fmt("%.4f", m.fscore) + " after " + std::to_string(r.log.size()) +
         " steps (lr 1e-4, batch 8, 16 clips, 64x64), final loss " + fmt("%.4f", r.final_loss()));
  return o;
}

Outcome ablation_direction() {
  Outcome o;
  const Corpus corpus = generate_synthetic(synth(Setting::MS3, 32, 0));
  struct Variant {
    const char* name;
    bool motion, bg;
  };
  const Variant variants[] = {{"full", true, true}, {"-motion", false, true}, {"-bg", true, false}};
  double mean[3] = {0, 0, 0};
  const std::uint64_t seeds[] = {0, 1, 2};
  for (std::size_t v = 0; v < 3; ++v) {
    for (std::uint64_t seed : seeds) {
      TrainConfig tc = TrainConfig::for_setting(Setting::MS3);
      tc.seed = seed;
      tc.enable_motion = variants[v].motion;
      tc.enable_bg = variants[v].bg;
      Trainer t(tc);
      t.run(corpus);
      mean[v] += t.evaluate(corpus).miou / 3.0;
    }
    o.note(std::string(variants[v].name) + " " + fmt("%.4f", mean[v]));
  }
  o.require(mean[0] >= mean[1] - kAblationMargin, "motion non-inferiority");
  o.require(mean[0] >= mean[2] - kAblationMargin, "bg non-inferiority");
  o.note("3 seeds, 32 clips, 30 epochs");
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = "'" AVSBG_CLI_PATH "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(std::ifstream(p)); }

Outcome transfer_protocol() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "avsbg_acceptance_transfer";
  fs::remove_all(dir);
  const std::string d = dir.string();
  o.require(run_cli("synth --setting s4 --clips 8 --seed 1 --out " + d + "/data") == 0, "synth s4");
  o.require(run_cli("synth --setting ms3 --clips 8 --seed 2 --out " + d + "/data") == 0, "synth ms3");
  o.require(run_cli("train --setting s4 --data " + d + "/data --out " + d + "/s4 --max-steps 20") == 0, "train s4");
  const std::string s4ckpt = d + "/s4/checkpoint.ckpt";
  o.require(run_cli("train --setting ms3 --data " + d + "/data --out " + d + "/ms3_init --max-steps 4 --init " + s4ckpt) == 0,
            "train ms3 --init s4.ckpt");
  o.require(run_cli("train --setting ms3 --data " + d + "/data --out " + d + "/ms3_rand --max-steps 4") == 0, "train ms3 random init");
  if (!o.pass) return o;
  // the S4 checkpoint scored directly on the MS3 corpus
  const Checkpoint s4 = Checkpoint::load(s4ckpt);
  Trainer direct(s4.train, s4.model);
  direct.load_weights(s4);
  const MetricsReport s4_on_ms3 = direct.evaluate(load_clips(load_corpus(dir / "data", Setting::MS3, Split::Train)));

  const json init0 = read_json(dir / "ms3_init" / "step0_metrics.json");
  const json rand0 = read_json(dir / "ms3_rand" / "step0_metrics.json");
  o.require(init0 == s4_on_ms3.to_json(), "step-0 metrics equal the S4 checkpoint's own predictions (all weights loaded)");
  o.require(init0 != rand0, "step-0 evaluation differs from random init");
  o.require(fs::exists(dir / "ms3_init" / "checkpoint.ckpt") && fs::exists(dir / "ms3_init" / "metrics.json"), "run completed");
  o.note("step-0 mIoU init " + fmt("%.4f", init0["miou"].get<double>()) + " vs random " + fmt("%.4f", rand0["miou"].get<double>()));
  fs::remove_all(dir);
  return o;
}

Outcome determinism() {
  Outcome o;
  const Corpus corpus = generate_synthetic(synth(Setting::MS3, 8, 3));
  TrainConfig tc = TrainConfig::for_setting(Setting::MS3);
  tc.max_steps = 12;
  tc.lr = 1e-3;  // enough movement that the round-tripped report is not all background
  tc.seed = 7;
  Trainer a(tc), b(tc);
  const double la = a.run(corpus).final_loss(), lb = b.run(corpus).final_loss();
  o.require(std::abs(la - lb) <= kDeterminismTolerance, "final loss " + fmt("%.17g", la) + " vs " + fmt("%.17g", lb));
  o.note("final loss |diff| " + fmt("%.1e", std::abs(la - lb)));

  const fs::path path = fs::temp_directory_path() / "avsbg_acceptance_roundtrip.ckpt";
  a.checkpoint().save(path);
  const Checkpoint back = Checkpoint::load(path);
  fs::remove(path);
  Trainer restored(back.train, back.model);
  restored.load_weights(back);
  const MetricsReport ra = a.evaluate(corpus), rb = restored.evaluate(corpus);
  bool identical = ra.miou == rb.miou && ra.fscore == rb.fscore && ra.per_frame.size() == rb.per_frame.size() &&
                   ra.totals.tp == rb.totals.tp && ra.totals.fp == rb.totals.fp && ra.totals.fn == rb.totals.fn;
  for (std::size_t i = 0; identical && i < ra.per_frame.size(); ++i)
    identical = ra.per_frame[i].iou == rb.per_frame[i].iou && ra.per_frame[i].precision == rb.per_frame[i].precision &&
                ra.per_frame[i].recall == rb.per_frame[i].recall && ra.per_frame[i].clip_id == rb.per_frame[i].clip_id;
  o.require(identical && ra.to_json().dump() == rb.to_json().dump(), "MetricsReport bit-identical after round trip");
  o.require(rb.totals.tp > 0, "round-trip report has foreground predictions");
  o.note("round-trip mIoU " + fmt("%.6f", rb.miou) + ", tp " + std::to_string(rb.totals.tp));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "shape chain at 224x224", 1.0, shape_chain},
      {2, "gradient suite", 120.0, gradient_suite},
      {3, "oracle equivalence", 60.0, oracle_equivalence},
      {4, "loss identities", 10.0, loss_identities},
      {5, "metric constants", 1.0, metric_constants},
      {6, "desk-scale learnability (S4)", 900.0, learnability},
      {7, "ablation direction (MS3)", 2700.0, ablation_direction},
      {8, "transfer protocol (S4 -> MS3)", 300.0, transfer_protocol},
      {9, "determinism and persistence", 300.0, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_s) o.require(false, "time " + fmt("%.1f", secs) + " s over budget " + fmt("%.0f", c.budget_s) + " s");
    failed += !o.pass;
    std::printf("[%s] %d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
