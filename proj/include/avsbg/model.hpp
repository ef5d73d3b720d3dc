#pragma once

// Full network: encoders -> fusion -> motion attention -> decoder, plus the
// visual-to-audio projection used by the consistency term.

#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avsbg/audio_frontend.hpp"
#include "avsbg/backbone.hpp"
#include "avsbg/datamodel.hpp"
#include "avsbg/fusion.hpp"
#include "avsbg/motion.hpp"
#include "avsbg/objective.hpp"
#include "avsbg/projection.hpp"
#include "avsbg/seghead.hpp"

namespace avsbg {

struct ModelConfig {
  int height = 64;
  int width = 64;
  BackboneConfig backbone;
  int decoder_channels = kFusedChannels;
  int projection_hidden = kAudioDim;
  std::array<bool, kPyramidLevels> motion_levels{true, true, true, true};
  std::uint64_t init_seed = 0;

  void validate() const {
    check_pyramid_input(height, width);
    for (int c : backbone.visual_channels)
      if (c < 1) throw ArgumentError("visual channels must be positive");
    for (int c : backbone.audio_channels)
      if (c < 1) throw ArgumentError("audio channels must be positive");
    if (decoder_channels < 1 || projection_hidden < 1) throw ArgumentError("decoder/projection widths must be positive");
  }

  nlohmann::json to_json() const {
    return {{"height", height},
            {"width", width},
            {"visual_channels", backbone.visual_channels},
            {"audio_channels", backbone.audio_channels},
            {"decoder_channels", decoder_channels},
            {"projection_hidden", projection_hidden},
            {"motion_levels", motion_levels},
            {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.height = j.at("height");
    c.width = j.at("width");
    c.backbone.visual_channels = j.at("visual_channels");
    c.backbone.audio_channels = j.at("audio_channels");
    c.decoder_channels = j.at("decoder_channels");
    c.projection_hidden = j.at("projection_hidden");
    c.motion_levels = j.at("motion_levels");
    c.init_seed = j.at("init_seed");
    return c;
  }

  /// Architecture fields that differ (init_seed is not architectural).
  std::string architecture_diff(const ModelConfig& other) const {
    nlohmann::json a = to_json(), b = other.to_json();
    a.erase("init_seed");
    b.erase("init_seed");
    std::ostringstream os;
    for (auto it = a.begin(); it != a.end(); ++it)
      if (b[it.key()] != it.value()) os << "\n  " << it.key() << ": " << it.value().dump() << " vs " << b[it.key()].dump();
    return os.str();
  }
};

/// Ablation switches; everything on is the full model.
struct Switches {
  bool audio = true;   // off: fusion is the identity residual and the KL term is dropped
  bool motion = true;  // off: motion projections stay at zero (attention is the identity)
  bool bg = true;      // off: no consistency term

  std::string label() const {
    return std::string(audio ? "+audio" : "-audio") + (motion ? " +motion" : " -motion") + (bg ? " +bg" : " -bg");
  }
};

struct ObjectiveConfig {
  Setting setting = Setting::S4;
  double lambda = 0.0;
  double eta = 1.0;
  Switches switches;
};

struct ForwardResult {
  FeaturePyramid visual;
  Var audio;  // A [T,128]; undefined if no consumer needs it
  FusedPyramid fused;
  MotionPyramid motion;
  MaskPrediction mask;
};

struct LossResult {
  Var total;
  LossBreakdown breakdown;
  ForwardResult forward;
  Var reconstructed;  // Ã; undefined when BG is off
};

class AvsModel {
 public:
  explicit AvsModel(ModelConfig cfg) : cfg_(std::move(cfg)), params_(cfg_.init_seed) {
    cfg_.validate();
    visual_ = VisualEncoderWeights::create(params_, cfg_.backbone);
    audio_ = AudioEncoderWeights::create(params_, cfg_.backbone);
    fusion_ = FusionWeights::create(params_, cfg_.backbone);
    motion_ = MotionWeights::create(params_);
    projection_ = ProjectionWeights::create(params_, cfg_.projection_hidden);
    decoder_ = DecoderWeights::create(params_, cfg_.decoder_channels);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  const MotionWeights& motion_weights() const noexcept { return motion_; }
  const ProjectionWeights& projection_weights() const noexcept { return projection_; }

  /// Per-frame log-mel segments for a clip.
  static Tensor mel_segments(const ClipSample& clip) {
    return audio::melspectrogram(clip.waveform, clip.sample_rate, clip.num_frames()).segments;
  }

  ForwardResult forward(const Tensor& frames, const Tensor& mel, const Switches& sw, bool need_audio) const {
    if (frames.dim(2) != cfg_.height || frames.dim(3) != cfg_.width)
      throw ArgumentError("model expects " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) +
                          " frames, got " + shape_str(frames.shape()));
    if (mel.dim(0) != frames.dim(0)) throw ArgumentError("mel segment count does not match frame count");
    ForwardResult r;
    r.visual = encode_visual(Var::constant(frames), visual_);
    if (sw.audio || need_audio) r.audio = encode_audio(mel, audio_);
    r.fused = fuse_pyramid(r.visual, r.audio, fusion_, sw.audio);
    r.motion = motion_pyramid(r.fused, motion_, sw.motion, cfg_.motion_levels);
    r.mask = decode(r.motion, decoder_, cfg_.height, cfg_.width);
    return r;
  }

  /// Ã from the coarsest motion level and the setting's mask source.
  Var reconstruct(const ForwardResult& fwd, Setting setting, const std::optional<Tensor>& gt) const {
    const MaskChoice choice = select_mask_source(setting, fwd.mask.probs, gt);
    return reconstruct_audio(build_masked_feature(fwd.motion.zhat[3], choice.mask, choice.source, projection_), projection_);
  }

  LossResult loss(const ClipSample& clip, const Tensor& mel, const ObjectiveConfig& obj) const {
    if (!clip.gt_masks) throw ArgumentError("loss: clip '" + clip.clip_id + "' has no masks");
    const bool use_kl = obj.switches.audio && obj.lambda > 0.0;
    LossResult out;
    out.forward = forward(clip.frames, mel, obj.switches, obj.switches.bg || use_kl);
    const ForwardResult& f = out.forward;

    const Var bce = bce_with_logits(f.mask.logits, *clip.gt_masks, clip.supervised);
    Var total = bce;
    double kl_raw = 0.0, cons_raw = 0.0;
    if (use_kl) {
      const Var kl = kl_alignment(f.mask.probs, f.fused, f.audio, obj.lambda);
      kl_raw = kl.value()[0] / obj.lambda;
      total = add(total, kl);
    }
    if (obj.switches.bg) {
      out.reconstructed = reconstruct(f, obj.setting, clip.gt_masks);
      const Var cons = consistency_loss(f.audio, out.reconstructed, obj.eta);
      cons_raw = obj.eta != 0.0 ? cons.value()[0] / obj.eta : 0.0;
      total = add(total, cons);
    }
    out.total = total;
    out.breakdown = total_loss(bce.value()[0], kl_raw, cons_raw, use_kl ? obj.lambda : 0.0, obj.switches.bg ? obj.eta : 0.0);
    out.breakdown.total = total.value()[0];
    return out;
  }

  /// Foreground probabilities [T,H,W] without building a graph.
  Tensor predict(const ClipSample& clip, const Switches& sw, const Tensor* mel = nullptr) const {
    NoGradGuard guard;
    const Tensor segs = mel ? *mel : mel_segments(clip);
    return forward(clip.frames, segs, sw, false).mask.probs.value();
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  VisualEncoderWeights visual_;
  AudioEncoderWeights audio_;
  FusionWeights fusion_;
  MotionWeights motion_;
  ProjectionWeights projection_;
  DecoderWeights decoder_;
};

}  // namespace avsbg
