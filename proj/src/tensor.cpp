#include "vmtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vmtl {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::size_t shape_count(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

void ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
}

// Records the op node when any input requires gradients. `parents` lists the
// differentiable inputs in the order the backprop closure expects.
Tensor make_op(const char* op, Shape shape, std::vector<double> values,
               std::vector<NodePtr> parents,
               std::function<void(const TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool rg = false;
  for (const auto& p : parents)
    if (p->requires_grad) rg = true;
  n->requires_grad = rg;
  if (rg) {
    n->op = op;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(n);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatchError(op, a.shape(), b.shape());
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ' ';
    os << s[i];
  }
  os << ']';
  return os.str();
}

ShapeMismatchError::ShapeMismatchError(std::string op, Shape lhs, Shape rhs)
    : std::invalid_argument(op + ": shape mismatch " + shape_str(lhs) +
                            " vs " + shape_str(rhs)),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_count(shape);
  return wrap(make_leaf(std::move(shape), std::vector<double>(n, 0.0),
                        requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_count(shape);
  return wrap(make_leaf(std::move(shape), std::vector<double>(n, value),
                        requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_count(shape) != values.size())
    throw std::invalid_argument("tensor: value count " +
                                std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  return wrap(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return from(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return from({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  return ndim() == 2 ? shape()[0] : (ndim() == 1 ? 1 : shape().at(0));
}

std::size_t Tensor::cols() const {
  return ndim() == 2 ? shape()[1] : shape().at(0);
}

double Tensor::value() const {
  if (size() != 1)
    throw std::invalid_argument("tensor: value() on non-scalar " +
                                shape_str(shape()));
  return node_->values[0];
}

double Tensor::at(std::size_t i) const { return node_->values.at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
  return node_->values.at(i * shape().at(1) + j);
}

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() { return node_->values; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
  return wrap(make_leaf(node_->shape, node_->values, requires_grad));
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Graph Graph::build(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  std::unordered_set<TensorNode*> seen;
  // iterative post-order: parents appear before dependents
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument(
        "backward: loss must be a scalar tensor, got " +
        (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
  if (!loss.requires_grad()) return;
  Graph g = Graph::build(loss);
  ensure_grad(*loss.node());
  loss.node()->grad[0] += 1.0;
  const auto& order = g.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) {
      ensure_grad(*n);
      n->backprop(*n);
    }
  }
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_vec = a.ndim() == 1;
  const bool b_vec = b.ndim() == 1;
  if (a.ndim() > 2 || b.ndim() > 2)
    throw ShapeMismatchError("matmul", a.shape(), b.shape());
  const std::size_t m = a_vec ? 1 : a.shape()[0];
  const std::size_t k = a_vec ? a.shape()[0] : a.shape()[1];
  const std::size_t k2 = b_vec ? b.shape()[0] : b.shape()[0];
  const std::size_t n = b_vec ? 1 : b.shape()[1];
  if (k != k2) throw ShapeMismatchError("matmul", a.shape(), b.shape());

  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }

  Shape out_shape;
  if (a_vec && b_vec)
    out_shape = {1};
  else if (a_vec)
    out_shape = {n};
  else if (b_vec)
    out_shape = {m};
  else
    out_shape = {m, n};

  return make_op(
      "matmul", std::move(out_shape), std::move(out), {a.node(), b.node()},
      [m, k, n](const TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
          ensure_grad(pa);
          // dA = G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j)
                acc += g[i * n + j] * pb.values[kk * n + j];
              pa.grad[i * k + kk] += acc;
            }
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          // dB = A^T * G
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < m; ++i) {
              const double aik = pa.values[i * k + kk];
              if (aik == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j)
                pb.grad[kk * n + j] += aik * g[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2)
    throw ShapeMismatchError("transpose", a.shape(), {});
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_op("transpose", {n, m}, std::move(out), {a.node()},
                 [m, n](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       p.grad[i * n + j] += self.grad[j * m + i];
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = a.values()[i] + b.values()[i];
    return make_op("add", a.shape(), std::move(out), {a.node(), b.node()},
                   [](const TensorNode& self) {
                     for (auto& p : self.parents) {
                       if (!p->requires_grad) continue;
                       ensure_grad(*p);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         p->grad[i] += self.grad[i];
                     }
                   });
  }
  // row broadcast: [m x n] + [n]
  if (a.ndim() == 2 && b.ndim() == 1 && a.shape()[1] == b.shape()[0]) {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out[i * n + j] = a.values()[i * n + j] + b.values()[j];
    return make_op("add", a.shape(), std::move(out), {a.node(), b.node()},
                   [m, n](const TensorNode& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       ensure_grad(pa);
                       for (std::size_t i = 0; i < m * n; ++i)
                         pa.grad[i] += self.grad[i];
                     }
                     if (pb.requires_grad) {
                       ensure_grad(pb);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           pb.grad[j] += self.grad[i * n + j];
                     }
                   });
  }
  throw ShapeMismatchError("add", a.shape(), b.shape());
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] - b.values()[i];
  return make_op("sub", a.shape(), std::move(out), {a.node(), b.node()},
                 [](const TensorNode& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   if (pa.requires_grad) {
                     ensure_grad(pa);
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pa.grad[i] += self.grad[i];
                   }
                   if (pb.requires_grad) {
                     ensure_grad(pb);
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pb.grad[i] -= self.grad[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = a.values()[i] * b.values()[i];
    return make_op("mul", a.shape(), std::move(out), {a.node(), b.node()},
                   [](const TensorNode& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       ensure_grad(pa);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pa.grad[i] += self.grad[i] * pb.values[i];
                     }
                     if (pb.requires_grad) {
                       ensure_grad(pb);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pb.grad[i] += self.grad[i] * pa.values[i];
                     }
                   });
  }
  // scalar broadcast: either operand of size 1
  if (a.size() == 1 || b.size() == 1) {
    const Tensor& s = a.size() == 1 ? a : b;
    const Tensor& t = a.size() == 1 ? b : a;
    std::vector<double> out(t.size());
    const double sv = s.values()[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * t.values()[i];
    return make_op("mul", t.shape(), std::move(out), {s.node(), t.node()},
                   [](const TensorNode& self) {
                     auto& ps = *self.parents[0];
                     auto& pt = *self.parents[1];
                     if (ps.requires_grad) {
                       ensure_grad(ps);
                       double acc = 0.0;
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         acc += self.grad[i] * pt.values[i];
                       ps.grad[0] += acc;
                     }
                     if (pt.requires_grad) {
                       ensure_grad(pt);
                       const double sv = ps.values[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pt.grad[i] += self.grad[i] * sv;
                     }
                   });
  }
  throw ShapeMismatchError("mul", a.shape(), b.shape());
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.values()[i];
  return make_op("scale", a.shape(), std::move(out), {a.node()},
                 [c](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += c * self.grad[i];
                 });
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  return make_op("add_const", a.shape(), std::move(out), {a.node()},
                 [](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i];
                 });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::exp(a.values()[i]);
  return make_op("exp", a.shape(), std::move(out), {a.node()},
                 [](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i] * self.values[i];
                 });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::log(a.values()[i]);
  return make_op("log", a.shape(), std::move(out), {a.node()},
                 [](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i] / p.values[i];
                 });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op("sum", {1}, {acc}, {a.node()},
                 [](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   const double g = self.grad[0];
                   for (std::size_t i = 0; i < p.grad.size(); ++i)
                     p.grad[i] += g;
                 });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const std::size_t n = a.size();
  return make_op("mean", {1}, {acc / static_cast<double>(n)}, {a.node()},
                 [n](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   const double g = self.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < p.grad.size(); ++i)
                     p.grad[i] += g;
                 });
}

Tensor rowwise_sum(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeMismatchError("rowwise_sum", a.shape(), {});
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a.values()[i * n + j];
  return make_op("rowwise_sum", {m}, std::move(out), {a.node()},
                 [m, n](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       p.grad[i * n + j] += self.grad[i];
                 });
}

Tensor rowwise_max_const(const Tensor& a) {
  if (a.ndim() != 2)
    throw ShapeMismatchError("rowwise_max_const", a.shape(), {});
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = a.values()[i * n];
    for (std::size_t j = 1; j < n; ++j)
      mx = std::max(mx, a.values()[i * n + j]);
    out[i] = mx;
  }
  return Tensor::from({m}, std::move(out));
}

Tensor sub_colvec(const Tensor& a, const Tensor& v) {
  if (a.ndim() != 2 || v.ndim() != 1 || a.shape()[0] != v.shape()[0])
    throw ShapeMismatchError("sub_colvec", a.shape(), v.shape());
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = a.values()[i * n + j] - v.values()[i];
  return make_op("sub_colvec", a.shape(), std::move(out),
                 {a.node(), v.node()}, [m, n](const TensorNode& self) {
                   auto& pa = *self.parents[0];
                   auto& pv = *self.parents[1];
                   if (pa.requires_grad) {
                     ensure_grad(pa);
                     for (std::size_t i = 0; i < m * n; ++i)
                       pa.grad[i] += self.grad[i];
                   }
                   if (pv.requires_grad) {
                     ensure_grad(pv);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         pv.grad[i] -= self.grad[i * n + j];
                   }
                 });
}

Tensor elu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = x > 0.0 ? x : std::expm1(x);
  }
  return make_op("elu", a.shape(), std::move(out), {a.node()},
                 [](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double d =
                         p.values[i] > 0.0 ? 1.0 : self.values[i] + 1.0;
                     p.grad[i] += self.grad[i] * d;
                   }
                 });
}

Tensor softmax(const Tensor& a) {
  if (a.ndim() == 0 || a.ndim() > 2)
    throw ShapeMismatchError("softmax", a.shape(), {});
  const std::size_t m = a.ndim() == 2 ? a.shape()[0] : 1;
  const std::size_t n = a.ndim() == 2 ? a.shape()[1] : a.shape()[0];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.values().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      denom += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
  }
  return make_op("softmax", a.shape(), std::move(out), {a.node()},
                 [m, n](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < m; ++i) {
                     const double* pr = self.values.data() + i * n;
                     const double* gr = self.grad.data() + i * n;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += gr[j] * pr[j];
                     for (std::size_t j = 0; j < n; ++j)
                       p.grad[i * n + j] += pr[j] * (gr[j] - dot);
                   }
                 });
}

Tensor dropout(const Tensor& a, const Tensor& mask, double p) {
  check_same_shape("dropout", a, mask);
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must lie in [0,1), got " +
                                std::to_string(p));
  if (mask.requires_grad())
    throw std::invalid_argument("dropout: mask must not require gradients");
  const double s = 1.0 / (1.0 - p);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * mask.values()[i] * s;
  return make_op("dropout", a.shape(), std::move(out),
                 {a.node(), mask.node()}, [s](const TensorNode& self) {
                   auto& pa = *self.parents[0];
                   auto& pm = *self.parents[1];
                   if (!pa.requires_grad) return;
                   ensure_grad(pa);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     pa.grad[i] += self.grad[i] * pm.values[i] * s;
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_rows: no parts given");
  const std::size_t nd = parts.front().ndim();
  std::vector<double> out;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  if (nd == 1) {
    for (const auto& t : parts) {
      if (t.ndim() != 1)
        throw ShapeMismatchError("concat_rows", parts.front().shape(),
                                 t.shape());
      offsets.push_back(off);
      off += t.size();
      out.insert(out.end(), t.values().begin(), t.values().end());
      parents.push_back(t.node());
    }
    return make_op("concat_rows", {off}, std::move(out), std::move(parents),
                   [offsets](const TensorNode& self) {
                     for (std::size_t k = 0; k < self.parents.size(); ++k) {
                       auto& p = *self.parents[k];
                       if (!p.requires_grad) continue;
                       ensure_grad(p);
                       for (std::size_t i = 0; i < p.values.size(); ++i)
                         p.grad[i] += self.grad[offsets[k] + i];
                     }
                   });
  }
  const std::size_t cols = parts.front().shape().at(1);
  std::size_t rows = 0;
  for (const auto& t : parts) {
    if (t.ndim() != 2 || t.shape()[1] != cols)
      throw ShapeMismatchError("concat_rows", parts.front().shape(),
                               t.shape());
    offsets.push_back(off);
    off += t.size();
    rows += t.shape()[0];
    out.insert(out.end(), t.values().begin(), t.values().end());
    parents.push_back(t.node());
  }
  return make_op("concat_rows", {rows, cols}, std::move(out),
                 std::move(parents), [offsets](const TensorNode& self) {
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     auto& p = *self.parents[k];
                     if (!p.requires_grad) continue;
                     ensure_grad(p);
                     for (std::size_t i = 0; i < p.values.size(); ++i)
                       p.grad[i] += self.grad[offsets[k] + i];
                   }
                 });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> flat_indices) {
  const std::size_t n = flat_indices.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (flat_indices[i] >= a.size())
      throw std::invalid_argument("gather: index " +
                                  std::to_string(flat_indices[i]) +
                                  " out of range for " + shape_str(a.shape()));
    out[i] = a.values()[flat_indices[i]];
  }
  return make_op("gather", {n}, std::move(out), {a.node()},
                 [idx = std::move(flat_indices)](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     p.grad[idx[i]] += self.grad[i];
                 });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, a.values()[i]));
  return make_op("clamp", a.shape(), std::move(out), {a.node()},
                 [lo, hi](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     if (p.values[i] > lo && p.values[i] < hi)
                       p.grad[i] += self.grad[i];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_count(shape) != a.size())
    throw ShapeMismatchError("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {a.node()},
                 [](const TensorNode& self) {
                   auto& p = *self.parents[0];
                   ensure_grad(p);
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i];
                 });
}

}  // namespace vmtl
