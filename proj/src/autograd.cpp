#include "zutis/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "zutis/error.hpp"

namespace zutis::ag {
namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
  if (!cond) throw ArgumentError(what);
}

}  // namespace

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  require(root.rows() == 1 && root.cols() == 1, "backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

namespace {

inline Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& a = in(n, 0);
    Node& b = in(n, 1);
    if (a.requires_grad) a.accumulate(n.grad * b.value.transpose());
    if (b.requires_grad) b.accumulate(a.value.transpose() * n.grad);
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_bt: inner dimensions differ");
  Matrix out = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& a = in(n, 0);
    Node& b = in(n, 1);
    if (a.requires_grad) a.accumulate(n.grad * b.value);
    if (b.requires_grad) b.accumulate(n.grad.transpose() * a.value);
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require(x.cols() == w.cols(), "linear: input width differs from weight");
  require(bias.rows() == 1 && bias.cols() == w.rows(), "linear: bias shape");
  Matrix out = x.value() * w.value().transpose();
  out.rowwise() += bias.value().row(0);
  return make_op(std::move(out), {x, w, bias}, [](Node& n) {
    Node& x = in(n, 0);
    Node& w = in(n, 1);
    Node& b = in(n, 2);
    if (x.requires_grad) x.accumulate(n.grad * w.value);
    if (w.requires_grad) w.accumulate(n.grad.transpose() * x.value);
    if (b.requires_grad) b.accumulate(n.grad.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix out = a.value() + b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.inputs) {
      if (p->requires_grad) p->accumulate(n.grad);
    }
  });
}

Var scale(const Var& a, float s) {
  Matrix out = a.value() * s;
  return make_op(std::move(out), {a}, [s](Node& n) { in(n, 0).accumulate(n.grad * s); });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0f);
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& a = in(n, 0);
    a.accumulate((a.value.array() > 0.0f).select(n.grad, 0.0f).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const auto cols = x.cols();
  require(gamma.cols() == cols && beta.cols() == cols && gamma.rows() == 1 && beta.rows() == 1,
          "layer_norm: parameter shape");
  auto xhat = std::make_shared<Matrix>(x.rows(), cols);
  auto inv_std = std::make_shared<Eigen::VectorXf>(x.rows());
  Matrix out(x.rows(), cols);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.value().row(r);
    const float mean = row.mean();
    const float var = (row.array() - mean).square().mean();
    const float is = 1.0f / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (row.array() - mean) * is;
    out.row(r) = xhat->row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return make_op(std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& n) {
    Node& x = in(n, 0);
    Node& g = in(n, 1);
    Node& b = in(n, 2);
    if (g.requires_grad) g.accumulate(n.grad.cwiseProduct(*xhat).colwise().sum());
    if (b.requires_grad) b.accumulate(n.grad.colwise().sum());
    if (x.requires_grad) {
      const float c = static_cast<float>(xhat->cols());
      Matrix dx(xhat->rows(), xhat->cols());
      for (Eigen::Index r = 0; r < dx.rows(); ++r) {
        RowVector dxhat = n.grad.row(r).cwiseProduct(g.value.row(0));
        const float mean_d = dxhat.sum() / c;
        const float mean_dx = dxhat.dot(xhat->row(r)) / c;
        dx.row(r) = (*inv_std)(r) *
                    (dxhat.array() - mean_d - xhat->row(r).array() * mean_dx).matrix();
      }
      x.accumulate(dx);
    }
  });
}

Var l2_normalize_rows(const Var& x, float eps) {
  auto norms = std::make_shared<Eigen::VectorXf>(x.value().rowwise().norm());
  Matrix out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) /= std::max((*norms)(r), eps);
  return make_op(out, {x}, [norms, eps, y = out](Node& n) {
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const float nr = std::max((*norms)(r), eps);
      const float proj = n.grad.row(r).dot(y.row(r));
      dx.row(r) = (n.grad.row(r) - proj * y.row(r)) / nr;
    }
    in(n, 0).accumulate(dx);
  });
}

Var detach(const Var& x) { return constant(x.value()); }

AxisTaps bilinear_taps(int in_size, int out_size) {
  AxisTaps t;
  t.lo.resize(out_size);
  t.hi.resize(out_size);
  t.frac.resize(out_size);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 1) lo = in_size - 1;
    const int hi = std::min(lo + 1, in_size - 1);
    t.lo[o] = lo;
    t.hi[o] = hi;
    t.frac[o] = static_cast<float>(src - lo);
  }
  return t;
}

Var resize_bilinear(const Var& x, int h, int w, int out_h, int out_w) {
  require(h >= 1 && w >= 1 && out_h >= 1 && out_w >= 1, "resize_bilinear: empty grid");
  require(x.rows() == static_cast<Eigen::Index>(h) * w, "resize_bilinear: row count != h*w");
  auto ty = std::make_shared<AxisTaps>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<AxisTaps>(bilinear_taps(w, out_w));
  const auto& xv = x.value();
  Matrix out(static_cast<Eigen::Index>(out_h) * out_w, x.cols());
  for (int oy = 0; oy < out_h; ++oy) {
    const float fy = ty->frac[oy];
    const int y0 = ty->lo[oy], y1 = ty->hi[oy];
    for (int ox = 0; ox < out_w; ++ox) {
      const float fx = tx->frac[ox];
      const int x0 = tx->lo[ox], x1 = tx->hi[ox];
      out.row(static_cast<Eigen::Index>(oy) * out_w + ox) =
          (1 - fy) * ((1 - fx) * xv.row(y0 * w + x0) + fx * xv.row(y0 * w + x1)) +
          fy * ((1 - fx) * xv.row(y1 * w + x0) + fx * xv.row(y1 * w + x1));
    }
  }
  return make_op(std::move(out), {x}, [ty, tx, h, w, out_h, out_w](Node& n) {
    Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(h) * w, n.grad.cols());
    for (int oy = 0; oy < out_h; ++oy) {
      const float fy = ty->frac[oy];
      const int y0 = ty->lo[oy], y1 = ty->hi[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const float fx = tx->frac[ox];
        const int x0 = tx->lo[ox], x1 = tx->hi[ox];
        auto g = n.grad.row(static_cast<Eigen::Index>(oy) * out_w + ox);
        dx.row(y0 * w + x0) += (1 - fy) * (1 - fx) * g;
        dx.row(y0 * w + x1) += (1 - fy) * fx * g;
        dx.row(y1 * w + x0) += fy * (1 - fx) * g;
        dx.row(y1 * w + x1) += fy * fx * g;
      }
    }
    in(n, 0).accumulate(dx);
  });
}

Var multihead_attention(const Var& q, const Var& k, const Var& v, int heads) {
  const auto d = q.cols();
  require(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  require(k.cols() == d && v.cols() == d && k.rows() == v.rows(), "attention: shape mismatch");
  const auto dh = d / heads;
  const float s = 1.0f / std::sqrt(static_cast<float>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    Matrix logits = (q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose()) * s;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      auto row = logits.row(r);
      row.array() -= row.maxCoeff();
      row = row.array().exp().matrix();
      row /= row.sum();
    }
    out.middleCols(h * dh, dh) = logits * v.value().middleCols(h * dh, dh);
    (*probs)[h] = std::move(logits);
  }
  return make_op(std::move(out), {q, k, v}, [probs, heads, dh, s](Node& n) {
    Node& q = in(n, 0);
    Node& k = in(n, 1);
    Node& v = in(n, 2);
    Matrix dq, dk, dv;
    if (q.requires_grad) dq = Matrix::Zero(q.value.rows(), q.value.cols());
    if (k.requires_grad) dk = Matrix::Zero(k.value.rows(), k.value.cols());
    if (v.requires_grad) dv = Matrix::Zero(v.value.rows(), v.value.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = (*probs)[h];
      auto dout = n.grad.middleCols(h * dh, dh);
      if (v.requires_grad) dv.middleCols(h * dh, dh) = a.transpose() * dout;
      if (!q.requires_grad && !k.requires_grad) continue;
      Matrix da = dout * v.value.middleCols(h * dh, dh).transpose();
      Eigen::VectorXf dots = (da.cwiseProduct(a)).rowwise().sum();
      Matrix ds = a.cwiseProduct((da.colwise() - dots));
      ds *= s;
      if (q.requires_grad) dq.middleCols(h * dh, dh) = ds * k.value.middleCols(h * dh, dh);
      if (k.requires_grad) dk.middleCols(h * dh, dh) = ds.transpose() * q.value.middleCols(h * dh, dh);
    }
    if (q.requires_grad) q.accumulate(dq);
    if (k.requires_grad) k.accumulate(dk);
    if (v.requires_grad) v.accumulate(dv);
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const float> weights) {
  require(terms.size() == weights.size(), "weighted_sum: size mismatch");
  Matrix out = Matrix::Zero(1, 1);
  std::vector<Var> inputs(terms.begin(), terms.end());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].rows() == 1 && terms[i].cols() == 1, "weighted_sum: terms must be scalars");
    out(0, 0) += weights[i] * terms[i].value()(0, 0);
  }
  std::vector<float> w(weights.begin(), weights.end());
  return make_op(std::move(out), std::move(inputs), [w](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (n.inputs[i]->requires_grad) n.inputs[i]->accumulate(n.grad * w[i]);
    }
  });
}

}  // namespace zutis::ag
