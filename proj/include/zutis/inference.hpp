#pragma once

#include <optional>
#include <string>
#include <span>
#include <string_view>
#include <vector>

#include "zutis/grid.hpp"
#include "zutis/model.hpp"

namespace zutis {

enum class MaskRestore { kNearest, kBilinear };

struct InferenceConfig {
  double binarize_threshold = 0.5;  // region is m > t
  double temperature = 5.0;
  double nms_iou_threshold = 0.5;
  bool nms = true;
  int max_long_side = 1024;
  double score_floor = 0.0;
  // Nearest upsamples the binarized proposal; bilinear upsamples the soft
  // mask and re-thresholds it at the output resolution.
  MaskRestore mask_restore = MaskRestore::kNearest;

  /// Throws ArgumentError when a field is out of range.
  void validate() const;
  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

struct SemanticPrediction {
  LabelMap labels;  // original resolution
  int forward_h = 0, forward_w = 0;
};

struct InstancePrediction {
  BinaryMask mask;
  int category = 0;
  double confidence = 0.0;
};

/// Image fed to the network: downscaled (aspect preserved) when its long
/// side exceeds `max_long_side`, otherwise unchanged.
Image fit_long_side(const Image& image, int max_long_side);

SemanticPrediction predict_semantic(const Image& image, const Segmenter& model, const TextBank& bank,
                                    const InferenceConfig& cfg = {}, std::string_view locator = {});

/// Bilinear upsampling of a probability map followed by per-pixel argmax
/// (lowest index on ties).
LabelMap upsample_argmax(const ProbMap& probs, int out_h, int out_w);

/// L2-normalized mean of projected rows where mask > t; nullopt when no
/// location clears the threshold.
std::optional<Eigen::VectorXf> average_mask_embedding(const Matrix& projected, std::span<const float> mask, double t);

struct Classification {
  int category = 0;
  Eigen::VectorXf logits;
};

Classification classify_mask(const Eigen::VectorXf& embedding, const TextBank& bank);

/// mean(mask over region) * max_c sigmoid(tau * logit_c).
double confidence_score(std::span<const float> mask, std::span<const std::uint8_t> region,
                        const Eigen::VectorXf& logits, double tau);

std::string to_string(MaskRestore m);
MaskRestore parse_mask_restore(std::string_view s);

/// Soft mask (h x w, row-major) bilinearly resized to out_h x out_w and
/// binarized with m > t.
BinaryMask restore_soft_mask(std::span<const float> mask, int h, int w, int out_h, int out_w, double t);

/// Greedy, category-agnostic. Input order is the priority order (callers
/// sort by confidence); suppresses anything with IoU >= threshold against a
/// kept mask.
std::vector<InstancePrediction> mask_nms(std::vector<InstancePrediction> preds, double iou_threshold);

std::vector<InstancePrediction> predict_instances(const Image& image, const Segmenter& model, const TextBank& bank,
                                                  const InferenceConfig& cfg = {}, std::string_view locator = {});

/// Both heads from one forward pass.
struct JointPrediction {
  SemanticPrediction semantic;
  std::vector<InstancePrediction> instances;
};

JointPrediction predict(const Image& image, const Segmenter& model, const TextBank& bank,
                        const InferenceConfig& cfg = {}, std::string_view locator = {});

}  // namespace zutis
