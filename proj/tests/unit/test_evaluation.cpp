#include <doctest.h>

#include <algorithm>

#include "zutis/error.hpp"
#include "zutis/evaluation.hpp"
#include "oracles.hpp"

using namespace zutis;
using namespace zutis::test;

namespace {

BinaryMask mask_from(int h, int w, std::initializer_list<int> on) {
  BinaryMask m(h, w);
  for (int i : on) m[static_cast<std::size_t>(i)] = 1;
  return m;
}

LabelMap labels(int h, int w, std::initializer_list<int> v) {
  LabelMap m(h, w);
  std::copy(v.begin(), v.end(), m.storage().begin());
  return m;
}

DetectionEvalResult ap(const std::vector<EvalInstance>& p, const std::vector<EvalInstance>& g, ApMode mode = ApMode::kClassAware) {
  return compute_mask_ap(p, g, mode);
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("binary iou examples") {
    const BinaryMask a = mask_from(2, 2, {0, 1}), b = mask_from(2, 2, {0, 2});
    CHECK(binary_iou(a, a) == 1.0);
    CHECK(binary_iou(mask_from(2, 2, {0}), mask_from(2, 2, {3})) == 0.0);
    CHECK(binary_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(binary_iou(BinaryMask(2, 2), BinaryMask(2, 2)) == 0.0);
    CHECK_THROWS_AS(binary_iou(a, BinaryMask(3, 2)), ArgumentError);
  }

  TEST_CASE("miou examples") {
    const std::vector<LabelMap> gt{labels(2, 2, {0, 1, 0, 1})};
    const std::vector<LabelMap> pred{labels(2, 2, {0, 0, 0, 0})};
    const auto r = compute_miou(pred, gt, 2);
    CHECK(r.iou[0] == doctest::Approx(0.5));
    CHECK(r.iou[1] == 0.0);
    CHECK(r.miou == doctest::Approx(0.25));
    CHECK(compute_miou(gt, gt, 2).miou == 1.0);
    const auto absent = compute_miou(gt, gt, 4);
    CHECK(absent.present == std::vector<bool>{true, true, false, false});
    CHECK(absent.miou == 1.0);
    CHECK_THROWS_AS(compute_miou(gt, std::vector<LabelMap>{labels(2, 2, {0, 2, 0, 0})}, 2), DataError);
  }

  TEST_CASE("miou matches a confusion-matrix oracle") {
    Rng rng = make_rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const int classes = uniform_int(rng, 1, 5);
      std::vector<LabelMap> p, g;
      for (int im = uniform_int(rng, 1, 4); im > 0; --im) {
        const int h = uniform_int(rng, 1, 6), w = uniform_int(rng, 1, 6);
        LabelMap a(h, w), b(h, w);
        for (std::size_t i = 0; i < a.size(); ++i) {
          a[i] = uniform_int(rng, 0, classes - 1);
          b[i] = bernoulli(rng, 0.6) ? a[i] : uniform_int(rng, 0, classes - 1);
        }
        p.push_back(a);
        g.push_back(b);
      }
      const auto r = compute_miou(p, g, classes);
      const auto o = oracle_miou(p, g, classes);
      CHECK(r.miou == doctest::Approx(o.miou).epsilon(1e-9));
      CHECK(r.present == o.present);
      for (int c = 0; c < classes; ++c) CHECK(r.iou[static_cast<std::size_t>(c)] == doctest::Approx(o.iou[static_cast<std::size_t>(c)]).epsilon(1e-9));
    }
  }

  TEST_CASE("ap examples") {
    const BinaryMask g = mask_from(1, 5, {0, 1, 2, 3, 4});
    const std::vector<EvalInstance> gts{{0, g, 1}};
    const auto perfect = ap({{0, g, 1, 0.9}}, gts);
    CHECK(perfect.defined);
    CHECK(perfect.ap == doctest::Approx(1.0));
    CHECK(perfect.ap50 == doctest::Approx(1.0));
    CHECK(perfect.ap75 == doctest::Approx(1.0));

    const auto straddle = ap({{0, mask_from(1, 5, {0, 1, 2}), 1, 0.9}}, gts);  // IoU 0.6
    CHECK(straddle.ap50 == doctest::Approx(1.0));
    CHECK(straddle.ap75 == 0.0);
    CHECK(straddle.ap == doctest::Approx(0.3));

    const auto wrong_class = ap({{0, g, 2, 0.9}}, gts);
    CHECK(wrong_class.ap50 == 0.0);
    CHECK(ap({{0, g, 2, 0.9}}, gts, ApMode::kClassAgnostic).ap50 == doctest::Approx(1.0));

    const auto none = ap({{0, g, 1, 0.9}}, {});
    CHECK_FALSE(none.defined);
  }

  TEST_CASE("ap matches the from-definition oracle on tiny scenes") {
    Rng rng = make_rng(2);
    int defined = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const TinyScene s = random_tiny_scene(rng);
      for (ApMode mode : {ApMode::kClassAware, ApMode::kClassAgnostic}) {
        const auto r = compute_mask_ap(s.preds, s.gts, mode);
        if (s.gts.empty()) {
          CHECK_FALSE(r.defined);
          continue;
        }
        ++defined;
        const auto o = oracle_mask_ap(s.preds, s.gts, mode == ApMode::kClassAware);
        CHECK(r.ap == doctest::Approx(o.ap).epsilon(1e-6));
        CHECK(r.ap50 == doctest::Approx(o.ap50).epsilon(1e-6));
        CHECK(r.ap75 == doctest::Approx(o.ap75).epsilon(1e-6));
        for (std::size_t t = 0; t < 10; ++t) CHECK(r.per_threshold[t] == doctest::Approx(o.per_threshold[t]).epsilon(1e-6));
      }
    }
    CHECK(defined > 300);
  }

  TEST_CASE("ap invariants") {
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      TinyScene s = random_tiny_scene(rng);
      if (s.gts.empty()) continue;
      // Distinct scores so that reordering the list cannot change the ranking.
      for (std::size_t i = 0; i < s.preds.size(); ++i) s.preds[i].score = uniform(rng);
      for (ApMode mode : {ApMode::kClassAware, ApMode::kClassAgnostic}) {
        const auto r = compute_mask_ap(s.preds, s.gts, mode);
        for (std::size_t t = 1; t < r.per_threshold.size(); ++t) CHECK(r.per_threshold[t] <= r.per_threshold[t - 1] + 1e-12);
        CHECK(r.ap <= *std::max_element(r.per_threshold.begin(), r.per_threshold.end()) + 1e-12);
        CHECK(r.ap >= 0.0);
        CHECK(r.ap50 <= 1.0);

        auto shuffled = s.preds;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto q = compute_mask_ap(shuffled, s.gts, mode);
        CHECK(q.ap == r.ap);
        CHECK(q.ap50 == r.ap50);

        std::vector<EvalInstance> self = s.gts;
        CHECK(compute_mask_ap(self, s.gts, mode).ap == doctest::Approx(1.0));
      }
    }
  }

  TEST_CASE("duplicates are penalized") {
    const BinaryMask a = mask_from(2, 2, {0}), b = mask_from(2, 2, {3});
    const std::vector<EvalInstance> gts{{0, a, 1}, {0, b, 1}};
    // One gt found, one missed: recall slack remains.
    const std::vector<EvalInstance> once{{0, a, 1, 0.9}};
    const std::vector<EvalInstance> twice{{0, a, 1, 0.9}, {0, a, 1, 0.8}, {0, b, 1, 0.7}};
    const std::vector<EvalInstance> clean{{0, a, 1, 0.9}, {0, b, 1, 0.7}};
    CHECK(ap(twice, gts).ap50 < ap(clean, gts).ap50);
    CHECK(ap(clean, gts).ap50 == doctest::Approx(1.0));
    CHECK(ap(once, gts).ap50 == doctest::Approx(51.0 / 101.0));
  }

  TEST_CASE("detections beyond the per-image cap are ignored") {
    const BinaryMask g = mask_from(1, 2, {0});
    std::vector<EvalInstance> preds;
    for (int i = 0; i < kMaxDetectionsPerImage; ++i) preds.push_back({0, mask_from(1, 2, {1}), 1, 0.9});
    preds.push_back({0, g, 1, 0.1});
    CHECK(ap(preds, {{0, g, 1}}).ap50 == 0.0);
    preds.pop_back();
    preds.push_back({1, g, 1, 0.1});
    CHECK(ap(preds, {{1, g, 1}}).ap50 > 0.0);
  }

  TEST_CASE("mode names") {
    CHECK(parse_ap_mode(to_string(ApMode::kClassAgnostic)) == ApMode::kClassAgnostic);
    CHECK(parse_ap_mode("class-aware") == ApMode::kClassAware);
    CHECK_THROWS_AS(parse_ap_mode("both"), ArgumentError);
  }
}
