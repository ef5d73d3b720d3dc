#pragma once

// mIoU (per-frame IoU averaged over all evaluated frames) and the
// beta-weighted F-score from pixel counts pooled over the whole corpus.

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsbg/datamodel.hpp"

namespace avsbg {

inline constexpr double kBinarizeThreshold = 0.5;
inline constexpr double kFBetaSquared = 0.3;

struct PixelCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

/// Counts over one or more binary planes (values > 0.5 are foreground).
inline PixelCounts count_pixels(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw ArgumentError("count_pixels: size mismatch");
  PixelCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > kBinarizeThreshold, g = gt[i] > kBinarizeThreshold;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// |pred ∩ gt| / |pred ∪ gt|; two empty masks score 1.
inline double iou(std::span<const double> pred, std::span<const double> gt) {
  const PixelCounts c = count_pixels(pred, gt);
  const std::uint64_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

inline double iou(const Tensor& pred, const Tensor& gt) {
  pred.check_same(gt, "iou");
  return iou(pred.values(), gt.values());
}

/// F_beta from precision and recall; 0 when the denominator vanishes.
/// Written as r + r(p - r) / (beta^2 p + r), which equals
/// (1 + beta^2) p r / (beta^2 p + r) and gives exactly p when p == r.
inline double fbeta(double precision, double recall, double beta_sq = kFBetaSquared) {
  const double den = beta_sq * precision + recall;
  return den <= 0 ? 0.0 : recall + recall * (precision - recall) / den;
}

inline double fscore(const PixelCounts& c, double beta_sq = kFBetaSquared) {
  const double precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  return fbeta(precision, recall, beta_sq);
}

/// Pooled F-score over paired prediction/ground-truth masks.
inline double fscore(std::span<const Tensor> preds, std::span<const Tensor> gts, double beta_sq = kFBetaSquared) {
  if (preds.size() != gts.size()) throw ArgumentError("fscore: prediction/gt count mismatch");
  PixelCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    preds[i].check_same(gts[i], "fscore");
    c += count_pixels(preds[i].values(), gts[i].values());
  }
  return fscore(c, beta_sq);
}

struct FrameScore {
  std::string clip_id;
  int frame = 0;
  double iou = 0, precision = 0, recall = 0;
};

struct MetricsReport {
  double miou = 0;
  double fscore = 0;
  std::vector<FrameScore> per_frame;
  double threshold = kBinarizeThreshold;
  double beta_sq = kFBetaSquared;
  PixelCounts totals;

  nlohmann::json to_json(bool with_frames = true) const {
    nlohmann::json j{{"miou", miou},          {"fscore", fscore}, {"threshold", threshold},
                     {"beta_sq", beta_sq},    {"frames", per_frame.size()},
                     {"tp", totals.tp},       {"fp", totals.fp},  {"fn", totals.fn}};
    if (with_frames) {
      j["per_frame"] = nlohmann::json::array();
      for (const auto& f : per_frame)
        j["per_frame"].push_back(
            {{"clip_id", f.clip_id}, {"t", f.frame}, {"iou", f.iou}, {"precision", f.precision}, {"recall", f.recall}});
    }
    return j;
  }
};

/// Returns per-frame foreground probabilities [T,H,W] for a clip.
using MaskPredictor = std::function<Tensor(const ClipSample&)>;

/// Runs `predict` on every clip and scores every frame against its mask.
inline MetricsReport evaluate_corpus(const MaskPredictor& predict, const Corpus& corpus) {
  MetricsReport r;
  double iou_sum = 0.0;
  for (const auto& clip : corpus.clips) {
    if (!clip.has_full_gt()) throw ArgumentError("evaluate_corpus: clip '" + clip.clip_id + "' lacks ground truth for some frames");
    const Tensor probs = predict(clip);
    probs.check_same(*clip.gt_masks, "evaluate_corpus");
    const int frames = clip.num_frames();
    const std::size_t plane = probs.size() / static_cast<std::size_t>(frames);
    for (int t = 0; t < frames; ++t) {
      const auto p = probs.values().subspan(t * plane, plane);
      const auto g = clip.gt_masks->values().subspan(t * plane, plane);
      const PixelCounts c = count_pixels(p, g);
      r.totals += c;
      FrameScore fs{clip.clip_id, t, 0, 0, 0};
      const std::uint64_t uni = c.tp + c.fp + c.fn;
      fs.iou = uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
      fs.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
      fs.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
      iou_sum += fs.iou;
      r.per_frame.push_back(std::move(fs));
    }
  }
  r.miou = r.per_frame.empty() ? 0.0 : iou_sum / static_cast<double>(r.per_frame.size());
  r.fscore = fscore(r.totals, r.beta_sq);
  return r;
}

}  // namespace avsbg
