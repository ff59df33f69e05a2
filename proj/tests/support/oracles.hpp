#pragma once

// From-definition metric evaluators used as test oracles. They share no code
// with the library: IoU is counted pixel by pixel, mIoU goes through a full
// confusion matrix and interpolated precision is a suffix maximum over ranks
// with integer recall comparisons.

#include <algorithm>
#include <numeric>
#include <vector>

#include "zutis/evaluation.hpp"
#include "zutis/rng.hpp"

namespace zutis::test {

inline double oracle_iou(const BinaryMask& a, const BinaryMask& b) {
  long both = 0, either = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      both += a(y, x) && b(y, x);
      either += a(y, x) || b(y, x);
    }
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

struct OracleMiou {
  std::vector<double> iou;
  std::vector<bool> present;
  double miou = 0.0;
};

inline OracleMiou oracle_miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int classes) {
  std::vector<std::vector<long>> conf(static_cast<std::size_t>(classes), std::vector<long>(static_cast<std::size_t>(classes)));
  for (std::size_t k = 0; k < preds.size(); ++k)
    for (int y = 0; y < gts[k].height(); ++y)
      for (int x = 0; x < gts[k].width(); ++x) ++conf[static_cast<std::size_t>(gts[k](y, x))][static_cast<std::size_t>(preds[k](y, x))];
  OracleMiou r;
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < classes; ++c) {
    long row = 0, col = 0;
    for (int o = 0; o < classes; ++o) {
      row += conf[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
      col += conf[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
    }
    const long diag = conf[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const long denom = row + col - diag;
    r.present.push_back(denom > 0);
    r.iou.push_back(denom > 0 ? static_cast<double>(diag) / static_cast<double>(denom) : 0.0);
    if (denom > 0) {
      sum += r.iou.back();
      ++n;
    }
  }
  r.miou = n ? sum / n : 0.0;
  return r;
}

/// AP of one category at one IoU threshold; category -1 pools everything.
inline double oracle_ap_at(const std::vector<EvalInstance>& preds, const std::vector<EvalInstance>& gts, int category,
                           double threshold) {
  auto wanted = [&](const EvalInstance& e) { return category < 0 || e.category == category; };
  std::vector<std::size_t> dets;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (wanted(preds[i])) dets.push_back(i);
  std::sort(dets.begin(), dets.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
    return a < b;
  });
  long num_gt = 0;
  for (const auto& g : gts) num_gt += wanted(g);
  std::vector<bool> used(gts.size(), false);
  std::vector<long> cum_tp;
  long tp = 0;
  for (auto d : dets) {
    long best_g = -1;
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!wanted(gts[g]) || used[g] || gts[g].image != preds[d].image) continue;
      const double iou = oracle_iou(preds[d].mask, gts[g].mask);
      if (iou >= threshold && (best_g < 0 || iou > best)) {
        best = iou;
        best_g = static_cast<long>(g);
      }
    }
    if (best_g >= 0) {
      used[static_cast<std::size_t>(best_g)] = true;
      ++tp;
    }
    cum_tp.push_back(tp);
  }
  double total = 0.0;
  for (long r = 0; r <= 100; ++r) {
    double p = 0.0;
    for (std::size_t i = 0; i < cum_tp.size(); ++i) {
      if (100 * cum_tp[i] >= r * num_gt) p = std::max(p, static_cast<double>(cum_tp[i]) / static_cast<double>(i + 1));
    }
    total += p;
  }
  return total / 101.0;
}

struct OracleAp {
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
  std::vector<double> per_threshold;
};

inline OracleAp oracle_mask_ap(const std::vector<EvalInstance>& preds, const std::vector<EvalInstance>& gts, bool class_aware) {
  std::vector<int> cats;
  for (const auto& g : gts) {
    const int c = class_aware ? g.category : -1;
    if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
  }
  OracleAp r;
  for (int t = 50; t <= 95; t += 5) {
    double sum = 0.0;
    for (int c : cats) sum += oracle_ap_at(preds, gts, c, t / 100.0);
    r.per_threshold.push_back(cats.empty() ? 0.0 : sum / static_cast<double>(cats.size()));
  }
  r.ap = std::accumulate(r.per_threshold.begin(), r.per_threshold.end(), 0.0) / 10.0;
  r.ap50 = r.per_threshold[0];
  r.ap75 = r.per_threshold[5];
  return r;
}

/// Tiny randomized scene: rectangles as ground truth, jittered copies and
/// strays as predictions, scores on a coarse grid so ties occur.
struct TinyScene {
  std::vector<EvalInstance> preds, gts;
};

inline BinaryMask random_rect(Rng& rng, int h, int w) {
  BinaryMask m(h, w);
  const int y0 = uniform_int(rng, 0, h - 2), x0 = uniform_int(rng, 0, w - 2);
  const int y1 = uniform_int(rng, y0 + 1, h), x1 = uniform_int(rng, x0 + 1, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = 1;
  return m;
}

inline TinyScene random_tiny_scene(Rng& rng) {
  constexpr int kSize = 8;
  TinyScene s;
  const int images = uniform_int(rng, 1, 4), classes = uniform_int(rng, 1, 4);
  for (int im = 0; im < images; ++im) {
    const int n = uniform_int(rng, 0, 4);
    for (int i = 0; i < n; ++i) {
      EvalInstance g{im, random_rect(rng, kSize, kSize), uniform_int(rng, 0, classes - 1), 1.0};
      s.gts.push_back(g);
      const int copies = uniform_int(rng, 0, 2);
      for (int c = 0; c < copies; ++c) {
        EvalInstance p = g;
        for (int flips = uniform_int(rng, 0, 6); flips > 0; --flips) {
          auto& v = p.mask(uniform_int(rng, 0, kSize - 1), uniform_int(rng, 0, kSize - 1));
          v = !v;
        }
        if (bernoulli(rng, 0.3)) p.category = uniform_int(rng, 0, classes - 1);
        p.score = uniform_int(rng, 0, 10) / 10.0;
        s.preds.push_back(p);
      }
    }
    for (int extra = uniform_int(rng, 0, 2); extra > 0; --extra) {
      s.preds.push_back({im, random_rect(rng, kSize, kSize), uniform_int(rng, 0, classes - 1), uniform_int(rng, 0, 10) / 10.0});
    }
  }
  return s;
}

}  // namespace zutis::test
