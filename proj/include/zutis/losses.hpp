#pragma once

// Mask and semantic losses as plain kernels over flat pixel arrays. The
// training graph wraps these; tests exercise them directly in double.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>

#include "zutis/error.hpp"
#include "zutis/grid.hpp"

namespace zutis {

inline constexpr double kDiceSmoothing = 1.0;
inline constexpr double kBceClamp = 1e-7;

namespace detail {
template <typename T>
void check_same_size(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ArgumentError("mask loss: prediction and target sizes differ");
}
}  // namespace detail

/// Soft dice loss 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps).
template <std::floating_point T>
T dice_loss(std::span<const T> pred, std::span<const T> target, T eps = T(kDiceSmoothing)) {
  detail::check_same_size(pred, target);
  T inter = 0, sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * target[i];
    sum += pred[i] + target[i];
  }
  if (sum + eps == T(0)) return T(0);
  return T(1) - (T(2) * inter + eps) / (sum + eps);
}

/// Gradient of dice_loss with respect to pred, written into grad.
template <std::floating_point T>
T dice_loss_grad(std::span<const T> pred, std::span<const T> target, std::span<T> grad,
                 T eps = T(kDiceSmoothing)) {
  detail::check_same_size(pred, target);
  T inter = 0, sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * target[i];
    sum += pred[i] + target[i];
  }
  const T den = sum + eps;
  if (den == T(0)) {
    std::fill(grad.begin(), grad.end(), T(0));
    return T(0);
  }
  const T num = T(2) * inter + eps;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    grad[i] = -(T(2) * target[i] * den - num) / (den * den);
  }
  return T(1) - num / den;
}

/// Mean binary cross-entropy on probabilities, clamped to [1e-7, 1-1e-7].
template <std::floating_point T>
T bce_mask_loss(std::span<const T> pred, std::span<const T> target) {
  detail::check_same_size(pred, target);
  if (pred.empty()) return T(0);
  const T lo = T(kBceClamp), hi = T(1) - T(kBceClamp);
  T acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T p = std::clamp(pred[i], lo, hi);
    acc -= target[i] * std::log(p) + (T(1) - target[i]) * std::log(T(1) - p);
  }
  return acc / static_cast<T>(pred.size());
}

template <std::floating_point T>
T bce_mask_loss_grad(std::span<const T> pred, std::span<const T> target, std::span<T> grad) {
  detail::check_same_size(pred, target);
  const T lo = T(kBceClamp), hi = T(1) - T(kBceClamp);
  const T n = static_cast<T>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < lo || pred[i] > hi) {
      grad[i] = 0;
      continue;
    }
    const T p = pred[i];
    grad[i] = (-(target[i] / p) + (T(1) - target[i]) / (T(1) - p)) / n;
  }
  return bce_mask_loss(pred, target);
}

/// Numerically stable mean BCE taking logits; gradient is (sigmoid(x) - t) / n.
template <std::floating_point T>
T bce_with_logits(std::span<const T> logits, std::span<const T> target) {
  detail::check_same_size(logits, target);
  if (logits.empty()) return T(0);
  T acc = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T x = logits[i];
    acc += std::max(x, T(0)) - x * target[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return acc / static_cast<T>(logits.size());
}

template <std::floating_point T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

/// Mean negative log-probability of the target class. probs is row-major
/// (pixels x classes).
template <std::floating_point T>
T semantic_ce_loss(std::span<const T> probs, std::span<const int> targets, int num_classes) {
  if (num_classes <= 0) throw ArgumentError("semantic_ce_loss: no classes");
  if (probs.size() != targets.size() * static_cast<std::size_t>(num_classes)) {
    throw ArgumentError("semantic_ce_loss: probability map does not match target size");
  }
  if (targets.empty()) return T(0);
  T acc = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    if (t < 0 || t >= num_classes) throw ArgumentError("semantic_ce_loss: target index out of range");
    const T p = probs[i * num_classes + t];
    acc -= std::log(std::max(p, std::numeric_limits<T>::min()));
  }
  return acc / static_cast<T>(targets.size());
}

// Grid conveniences used by matching and tests.
double dice_loss(const SoftMask& pred, const BinaryMask& target, double eps = kDiceSmoothing);
double bce_mask_loss(const SoftMask& pred, const BinaryMask& target);

}  // namespace zutis
