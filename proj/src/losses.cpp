#include "zutis/losses.hpp"

#include <vector>

namespace zutis {
namespace {

std::pair<std::vector<double>, std::vector<double>> to_double(const SoftMask& pred, const BinaryMask& target) {
  if (!pred.same_shape(target)) throw ArgumentError("mask loss: prediction and target shapes differ");
  std::vector<double> p(pred.values().begin(), pred.values().end());
  std::vector<double> t(target.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (target[i] > 1) throw ArgumentError("mask loss: target is not binary");
    t[i] = target[i];
  }
  return {std::move(p), std::move(t)};
}

}  // namespace

double dice_loss(const SoftMask& pred, const BinaryMask& target, double eps) {
  const auto [p, t] = to_double(pred, target);
  return dice_loss<double>(p, t, eps);
}

double bce_mask_loss(const SoftMask& pred, const BinaryMask& target) {
  const auto [p, t] = to_double(pred, target);
  return bce_mask_loss<double>(p, t);
}

}  // namespace zutis
