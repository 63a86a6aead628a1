#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vmtl {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Thrown by forward ops on incompatible operands; carries the operation name
// and both shapes.
class ShapeMismatchError : public std::invalid_argument {
 public:
  ShapeMismatchError(std::string op, Shape lhs, Shape rhs);
  const std::string& op() const { return op_; }
  const Shape& lhs() const { return lhs_; }
  const Shape& rhs() const { return rhs_; }

 private:
  std::string op_;
  Shape lhs_, rhs_;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  const char* op = nullptr;  // null for leaves
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(const TensorNode&)> backprop;

  std::size_t size() const { return values.size(); }
};

}  // namespace detail

// Dense tensor of 64-bit reals, row-major, with a define-by-run reverse-mode
// tape. Ops record graph nodes only when some input requires gradients, so
// evaluation over constants carries no tape overhead.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double value() const;  // scalar accessor
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  std::span<const double> values() const;
  std::span<double> mutable_values();  // leaf update (optimizer, init)

  bool requires_grad() const;
  std::span<const double> grad() const;  // empty if backward never reached it
  void zero_grad();

  // value copy detached from any recorded graph
  Tensor detach(bool requires_grad = false) const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> n);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Recorded-operation DAG in topological order (parents before dependents).
class Graph {
 public:
  static Graph build(const Tensor& root);
  std::size_t size() const { return order_.size(); }
  const std::vector<detail::TensorNode*>& order() const { return order_; }

 private:
  std::vector<detail::TensorNode*> order_;
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// loss. Gradients accumulate across calls; callers zero them between steps.
void backward(const Tensor& loss);

// ---- forward ops ----
// 2-D x 2-D matrix product; 1-D operands are promoted to a row (lhs) or a
// column (rhs) and the result squeezed back.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// elementwise; also broadcasts a length-n vector across the rows of [m x n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// elementwise; a size-1 operand broadcasts against the other
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor rowwise_sum(const Tensor& a);               // [m x n] -> [m]
Tensor rowwise_max_const(const Tensor& a);         // detached row maxima [m]
Tensor sub_colvec(const Tensor& a, const Tensor& v);  // a[i][j] - v[i]
Tensor elu(const Tensor& a);
// stabilized softmax over the last dimension (rows of a matrix, or a vector)
Tensor softmax(const Tensor& a);
// inverted dropout: keep-mask of 0/1 entries, retained values scaled by
// 1/(1-p); p == 0 with an all-ones mask is the identity
Tensor dropout(const Tensor& a, const Tensor& mask, double p);
// vertical stack of matrices with equal column counts, or concatenation of
// vectors/scalars into one vector
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather(const Tensor& a, std::vector<std::size_t> flat_indices);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace vmtl
