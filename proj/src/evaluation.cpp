#include "zutis/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "zutis/error.hpp"

namespace zutis {

double binary_iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ArgumentError("binary_iou: mask shapes differ");
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SemanticEvalResult compute_miou(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truths,
                                int num_classes) {
  if (num_classes < 1) throw ArgumentError("compute_miou: no classes");
  if (predictions.size() != ground_truths.size()) throw ArgumentError("compute_miou: prediction and ground-truth counts differ");
  std::vector<long> inter(static_cast<std::size_t>(num_classes), 0), uni(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const auto& p = predictions[k];
    const auto& g = ground_truths[k];
    if (!p.same_shape(g)) throw ArgumentError("compute_miou: label map shapes differ at image " + std::to_string(k));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const int a = p[i], b = g[i];
      if (a < 0 || a >= num_classes || b < 0 || b >= num_classes) {
        throw DataError("compute_miou: label outside [0, " + std::to_string(num_classes - 1) + "]");
      }
      if (a == b) {
        ++inter[static_cast<std::size_t>(a)];
        ++uni[static_cast<std::size_t>(a)];
      } else {
        ++uni[static_cast<std::size_t>(a)];
        ++uni[static_cast<std::size_t>(b)];
      }
    }
  }
  SemanticEvalResult r;
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto u = uni[static_cast<std::size_t>(c)];
    r.present.push_back(u > 0);
    r.iou.push_back(u > 0 ? static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(u) : 0.0);
    if (u > 0) {
      sum += r.iou.back();
      ++present;
    }
  }
  r.miou = present > 0 ? sum / present : 0.0;
  return r;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  // Exact decimal thresholds: 0.5 + 0.05 * 2 would land just above 0.6.
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

namespace {

// Detections kept after the per-image cap, in global score order.
std::vector<std::size_t> ranked_detections(std::span<const EvalInstance> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::map<int, int> per_image;
  std::vector<std::size_t> kept;
  for (auto i : order) {
    if (per_image[preds[i].image]++ < kMaxDetectionsPerImage) kept.push_back(i);
  }
  return kept;
}

std::vector<double> interpolated_precision(const std::vector<bool>& tp, long num_gt) {
  const std::size_t n = tp.size();
  std::vector<double> prec(n), rec(n);
  long ctp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ctp += tp[i];
    prec[i] = static_cast<double>(ctp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(ctp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  std::vector<double> out(101, 0.0);
  for (int r = 0; r <= 100; ++r) {
    const double target = r / 100.0;
    const auto it = std::lower_bound(rec.begin(), rec.end(), target);
    if (it != rec.end()) out[static_cast<std::size_t>(r)] = prec[static_cast<std::size_t>(it - rec.begin())];
  }
  return out;
}

}  // namespace

DetectionEvalResult compute_mask_ap(std::span<const EvalInstance> predictions,
                                    std::span<const EvalInstance> ground_truths, ApMode mode,
                                    std::span<const double> iou_thresholds) {
  DetectionEvalResult res;
  res.mode = mode;
  res.thresholds = iou_thresholds.empty() ? coco_iou_thresholds()
                                          : std::vector<double>(iou_thresholds.begin(), iou_thresholds.end());
  const bool aware = mode == ApMode::kClassAware;
  auto cat_of = [&](const EvalInstance& e) { return aware ? e.category : -1; };

  std::set<int> categories;
  for (const auto& g : ground_truths) categories.insert(cat_of(g));
  res.defined = !categories.empty();
  res.per_threshold.assign(res.thresholds.size(), 0.0);
  if (!res.defined) return res;

  const auto ranked = ranked_detections(predictions);
  for (std::size_t ti = 0; ti < res.thresholds.size(); ++ti) {
    const double thr = res.thresholds[ti];
    double sum = 0.0;
    for (int cat : categories) {
      std::map<int, std::vector<std::size_t>> gts_by_image;
      long num_gt = 0;
      for (std::size_t g = 0; g < ground_truths.size(); ++g) {
        if (cat_of(ground_truths[g]) == cat) {
          gts_by_image[ground_truths[g].image].push_back(g);
          ++num_gt;
        }
      }
      std::set<std::size_t> matched;
      std::vector<bool> tp;
      for (auto d : ranked) {
        const auto& det = predictions[d];
        if (cat_of(det) != cat) continue;
        double best = -1.0;
        std::size_t best_g = 0;
        auto it = gts_by_image.find(det.image);
        if (it != gts_by_image.end()) {
          for (auto g : it->second) {
            if (matched.count(g)) continue;
            const double iou = binary_iou(det.mask, ground_truths[g].mask);
            if (iou >= thr && iou > best) {
              best = iou;
              best_g = g;
            }
          }
        }
        if (best >= 0.0) matched.insert(best_g);
        tp.push_back(best >= 0.0);
      }
      auto prec = interpolated_precision(tp, num_gt);
      sum += std::accumulate(prec.begin(), prec.end(), 0.0) / 101.0;
      res.curves.push_back({cat, thr, std::move(prec)});
    }
    res.per_threshold[ti] = sum / static_cast<double>(categories.size());
  }
  res.ap = std::accumulate(res.per_threshold.begin(), res.per_threshold.end(), 0.0) /
           static_cast<double>(res.per_threshold.size());
  for (std::size_t ti = 0; ti < res.thresholds.size(); ++ti) {
    if (std::abs(res.thresholds[ti] - 0.5) < 1e-9) res.ap50 = res.per_threshold[ti];
    if (std::abs(res.thresholds[ti] - 0.75) < 1e-9) res.ap75 = res.per_threshold[ti];
  }
  return res;
}

std::string to_string(ApMode mode) { return mode == ApMode::kClassAware ? "class-aware" : "class-agnostic"; }

ApMode parse_ap_mode(std::string_view s) {
  if (s == "class-aware") return ApMode::kClassAware;
  if (s == "class-agnostic") return ApMode::kClassAgnostic;
  throw ArgumentError("unknown evaluation mode '" + std::string(s) + "'");
}

}  // namespace zutis
