#pragma once

// Minimal reverse-mode automatic differentiation over row-major float
// matrices. Every op builds a node holding its value and a closure that
// pushes the node's gradient into its inputs. Graphs are rebuilt for each
// forward pass and freed when the last Var referencing them goes away.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace zutis::ag {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  bool has_grad() const { return grad.size() != 0; }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Gradient, or an empty matrix when nothing reached this node.
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool defined() const { return static_cast<bool>(node_); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  void zero_grad() const { node_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf without gradient tracking.
Var constant(Matrix value);
/// Trainable leaf; gradients accumulate across backward passes until zero_grad().
Var parameter(Matrix value);

bool grad_enabled();

/// Disables graph recording in scope; ops return constants.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates an op node. `backward` is only retained when some input needs a gradient.
Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a 1x1 root.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_bt(const Var& a, const Var& b);
/// x * w^T + bias, with w: out x in and bias: 1 x out.
Var linear(const Var& x, const Var& w, const Var& bias);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var relu(const Var& a);
/// Row-wise layer normalization with learned gain/shift (1 x cols each).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
Var l2_normalize_rows(const Var& x, float eps = 1e-12f);
/// Copies the value and cuts every gradient path through it.
Var detach(const Var& x);
/// Bilinear resize of a (h*w) x C location-major field, half-pixel centers
/// (corners not aligned).
Var resize_bilinear(const Var& x, int h, int w, int out_h, int out_w);
/// Scaled dot-product attention, `heads` equal column splits.
Var multihead_attention(const Var& q, const Var& k, const Var& v, int heads);
/// Weighted sum of 1x1 scalars.
Var weighted_sum(std::span<const Var> terms, std::span<const float> weights);

/// Per-axis interpolation taps for half-pixel bilinear resampling.
struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<float> frac;
};
AxisTaps bilinear_taps(int in, int out);

}  // namespace zutis::ag
