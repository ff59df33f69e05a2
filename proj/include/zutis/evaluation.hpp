#pragma once

#include <span>
#include <string>
#include <vector>

#include "zutis/grid.hpp"

namespace zutis {

/// |a & b| / |a | b|; 0 when both are empty.
double binary_iou(const BinaryMask& a, const BinaryMask& b);

struct SemanticEvalResult {
  std::vector<double> iou;     // per class; 0 where absent
  std::vector<bool> present;   // class occurs in a prediction or ground truth
  double miou = 0.0;           // mean over present classes
};

/// Dataset-aggregated intersections and unions per class.
SemanticEvalResult compute_miou(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truths,
                                int num_classes);

enum class ApMode { kClassAware, kClassAgnostic };

struct EvalInstance {
  int image = 0;  // image index, shared between predictions and ground truth
  BinaryMask mask;
  int category = 0;
  double score = 1.0;  // ignored for ground truth
};

struct PrCurve {
  int category = 0;  // -1 in class-agnostic mode
  double iou_threshold = 0.0;
  std::vector<double> precision;  // at the 101 recall points
};

struct DetectionEvalResult {
  ApMode mode = ApMode::kClassAware;
  bool defined = false;  // false when there is no ground truth at all
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<double> thresholds;
  std::vector<double> per_threshold;
  std::vector<PrCurve> curves;
};

inline constexpr int kMaxDetectionsPerImage = 100;

std::vector<double> coco_iou_thresholds();

/// COCO-style mask AP: per threshold and category, score-descending greedy
/// matching (stable on input order) to the unmatched ground truth of highest
/// IoU (lowest index on ties) with IoU >= threshold, then 101-point
/// interpolated precision. Categories without ground truth are skipped.
DetectionEvalResult compute_mask_ap(std::span<const EvalInstance> predictions,
                                    std::span<const EvalInstance> ground_truths, ApMode mode,
                                    std::span<const double> iou_thresholds = {});

std::string to_string(ApMode mode);
ApMode parse_ap_mode(std::string_view s);

}  // namespace zutis
