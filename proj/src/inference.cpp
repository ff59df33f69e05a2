#include "zutis/inference.hpp"

#include <algorithm>
#include <cmath>

#include "zutis/curation.hpp"
#include "zutis/error.hpp"
#include "zutis/evaluation.hpp"
#include "zutis/losses.hpp"

namespace zutis {

void InferenceConfig::validate() const {
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) throw ArgumentError("binarize threshold must be in (0,1)");
  if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
  if (!(nms_iou_threshold > 0.0 && nms_iou_threshold <= 1.0)) throw ArgumentError("NMS IoU threshold must be in (0,1]");
  if (max_long_side < 1) throw ArgumentError("max_long_side must be positive");
}

Image fit_long_side(const Image& image, int max_long_side) {
  const int longest = std::max(image.height(), image.width());
  if (longest <= max_long_side) return image;
  const double s = static_cast<double>(max_long_side) / longest;
  const int h = std::max(1, static_cast<int>(std::lround(image.height() * s)));
  const int w = std::max(1, static_cast<int>(std::lround(image.width() * s)));
  return resize_bilinear(image, h, w);
}

LabelMap upsample_argmax(const ProbMap& probs, int out_h, int out_w) {
  const auto ty = ag::bilinear_taps(probs.h, out_h);
  const auto tx = ag::bilinear_taps(probs.w, out_w);
  const auto c = probs.probs.cols();
  LabelMap out(out_h, out_w, 0);
  Eigen::VectorXf v(c);
  auto row = [&](int y, int x) { return probs.probs.row(static_cast<Eigen::Index>(y) * probs.w + x); };
  for (int y = 0; y < out_h; ++y) {
    const float fy = ty.frac[y];
    for (int x = 0; x < out_w; ++x) {
      const float fx = tx.frac[x];
      v = ((1 - fy) * ((1 - fx) * row(ty.lo[y], tx.lo[x]) + fx * row(ty.lo[y], tx.hi[x])) +
           fy * ((1 - fx) * row(ty.hi[y], tx.lo[x]) + fx * row(ty.hi[y], tx.hi[x])))
              .transpose();
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < c; ++k) {
        if (v(k) > v(best)) best = k;
      }
      out(y, x) = static_cast<int>(best);
    }
  }
  return out;
}

std::optional<Eigen::VectorXf> average_mask_embedding(const Matrix& projected, std::span<const float> mask, double t) {
  if (static_cast<Eigen::Index>(mask.size()) != projected.rows()) {
    throw ArgumentError("average_mask_embedding: mask size differs from the projected field");
  }
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(projected.cols());
  long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > t) {
      acc += projected.row(static_cast<Eigen::Index>(i)).transpose().cast<double>();
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  const double norm = acc.norm();
  if (norm == 0.0) return std::nullopt;
  return Eigen::VectorXf((acc / norm).cast<float>());
}

Classification classify_mask(const Eigen::VectorXf& embedding, const TextBank& bank) {
  if (bank.size() == 0) throw ArgumentError("classify_mask: empty text bank");
  if (embedding.size() != bank.dim()) throw ArgumentError("classify_mask: embedding width differs from the bank");
  Classification c;
  c.logits = bank.embeddings() * embedding;
  for (Eigen::Index k = 1; k < c.logits.size(); ++k) {
    if (c.logits(k) > c.logits(c.category)) c.category = static_cast<int>(k);
  }
  return c;
}

double confidence_score(std::span<const float> mask, std::span<const std::uint8_t> region, const Eigen::VectorXf& logits,
                        double tau) {
  if (mask.size() != region.size()) throw ArgumentError("confidence_score: mask and region sizes differ");
  if (logits.size() == 0) throw ArgumentError("confidence_score: no logits");
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (region[i]) {
      sum += mask[i];
      ++n;
    }
  }
  if (n == 0) throw ArgumentError("confidence_score: empty region");
  return sum / static_cast<double>(n) * sigmoid<double>(tau * static_cast<double>(logits.maxCoeff()));
}

std::string to_string(MaskRestore m) { return m == MaskRestore::kNearest ? "nearest" : "bilinear"; }

MaskRestore parse_mask_restore(std::string_view s) {
  if (s == "nearest") return MaskRestore::kNearest;
  if (s == "bilinear") return MaskRestore::kBilinear;
  throw ArgumentError("unknown mask restore mode '" + std::string(s) + "'");
}

BinaryMask restore_soft_mask(std::span<const float> mask, int h, int w, int out_h, int out_w, double t) {
  if (static_cast<long>(mask.size()) != static_cast<long>(h) * w) throw ArgumentError("restore_soft_mask: size mismatch");
  const auto ty = ag::bilinear_taps(h, out_h);
  const auto tx = ag::bilinear_taps(w, out_w);
  auto at = [&](int y, int x) { return mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)]; };
  BinaryMask out(out_h, out_w, 0);
  for (int y = 0; y < out_h; ++y) {
    const float fy = ty.frac[y];
    for (int x = 0; x < out_w; ++x) {
      const float fx = tx.frac[x];
      const float v = (1 - fy) * ((1 - fx) * at(ty.lo[y], tx.lo[x]) + fx * at(ty.lo[y], tx.hi[x])) +
                      fy * ((1 - fx) * at(ty.hi[y], tx.lo[x]) + fx * at(ty.hi[y], tx.hi[x]));
      out(y, x) = v > t;
    }
  }
  return out;
}

std::vector<InstancePrediction> mask_nms(std::vector<InstancePrediction> preds, double iou_threshold) {
  std::vector<InstancePrediction> kept;
  for (auto& p : preds) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const InstancePrediction& k) { return binary_iou(k.mask, p.mask) >= iou_threshold; });
    if (!suppressed) kept.push_back(std::move(p));
  }
  return kept;
}

namespace {

struct Forward {
  Image input;
  Matrix projected;
  MaskProposalSet proposals;
  ProbMap probs;
};

Forward run_forward(const Image& image, const Segmenter& model, const TextBank& bank, const InferenceConfig& cfg,
                    bool need_proposals, std::string_view locator) {
  if (image.empty()) throw ArgumentError("predict: empty image");
  cfg.validate();
  ag::NoGradGuard guard;
  Forward f;
  f.input = fit_long_side(image, cfg.max_long_side);
  const DenseFeatures feats = extract_dense_features(f.input, model.encoder(), locator);
  const Var projected = project_semantic(feats, model.projection());
  f.probs = semantic_probabilities(projected, bank, feats.h, feats.w);
  f.projected = projected.value();
  if (need_proposals) f.proposals = propose_masks(feats, model.decoder(), model.config().stop_gradient);
  return f;
}

std::vector<InstancePrediction> instances_from(const Forward& f, const TextBank& bank, const InferenceConfig& cfg,
                                               int out_h, int out_w) {
  const auto& P = f.proposals;
  const auto n = static_cast<std::size_t>(P.h) * P.w;
  std::vector<InstancePrediction> preds;
  std::vector<float> row(n);
  for (int l = 0; l < P.size(); ++l) {
    for (std::size_t i = 0; i < n; ++i) row[i] = P.masks(l, static_cast<Eigen::Index>(i));
    BinaryMask region(P.h, P.w, 0);
    long area = 0;
    for (std::size_t i = 0; i < n; ++i) {
      region[i] = row[i] > cfg.binarize_threshold;
      area += region[i];
    }
    if (area == 0) continue;
    const auto emb = average_mask_embedding(f.projected, row, cfg.binarize_threshold);
    if (!emb) continue;
    const Classification c = classify_mask(*emb, bank);
    const double conf = confidence_score(row, region.values(), c.logits, cfg.temperature);
    if (conf < cfg.score_floor) continue;
    BinaryMask mask = cfg.mask_restore == MaskRestore::kNearest
                          ? resize_nearest(region, out_h, out_w)
                          : restore_soft_mask(row, P.h, P.w, out_h, out_w, cfg.binarize_threshold);
    if (count_foreground(mask) == 0) continue;
    preds.push_back({std::move(mask), c.category, conf});
  }
  std::stable_sort(preds.begin(), preds.end(),
                   [](const InstancePrediction& a, const InstancePrediction& b) { return a.confidence > b.confidence; });
  if (cfg.nms) preds = mask_nms(std::move(preds), cfg.nms_iou_threshold);
  return preds;
}

}  // namespace

SemanticPrediction predict_semantic(const Image& image, const Segmenter& model, const TextBank& bank,
                                    const InferenceConfig& cfg, std::string_view locator) {
  const Forward f = run_forward(image, model, bank, cfg, false, locator);
  return {upsample_argmax(f.probs, image.height(), image.width()), f.input.height(), f.input.width()};
}

std::vector<InstancePrediction> predict_instances(const Image& image, const Segmenter& model, const TextBank& bank,
                                                  const InferenceConfig& cfg, std::string_view locator) {
  const Forward f = run_forward(image, model, bank, cfg, true, locator);
  return instances_from(f, bank, cfg, image.height(), image.width());
}

JointPrediction predict(const Image& image, const Segmenter& model, const TextBank& bank, const InferenceConfig& cfg,
                        std::string_view locator) {
  const Forward f = run_forward(image, model, bank, cfg, true, locator);
  JointPrediction j;
  j.semantic = {upsample_argmax(f.probs, image.height(), image.width()), f.input.height(), f.input.width()};
  j.instances = instances_from(f, bank, cfg, image.height(), image.width());
  return j;
}

}  // namespace zutis
