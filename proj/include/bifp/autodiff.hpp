// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of doubles.
//
// A Tape records every operation applied to Vars created from it. Leaf
// tensors enter either as constants (copied, never differentiated) or as
// parameters, which bind a caller-owned Tensor by reference: after
// Tape::backward the bound tensor's grad holds d(loss)/d(tensor).
//
// Gradient contract: backward overwrites the grad of every bound tensor
// reachable from the loss and leaves unreachable tensors untouched. A tape
// can be backpropagated once; a second call throws TapeError.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bifp::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Row/column counts of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }
  double& at(std::size_t row, std::size_t col) { return values_[row * cols() + col]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  const std::optional<std::vector<double>>& grad() const { return grad_; }
  void set_grad(std::vector<double> grad);
  void clear_grad() { grad_.reset(); }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Backward rule: given d(loss)/d(output), add contributions into
// d(loss)/d(input_k) for every input that needs a gradient (others are
// passed as empty spans).
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<std::span<double>> in_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Tensor value);
  // Binds `tensor` by reference. It must outlive the tape and must not be
  // reallocated while the tape is in use.
  Var parameter(Tensor& tensor);

  // Records a node computed from `inputs`. Used by the op library.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    bool needs_grad = false;
  };

  void check_owned(Var v, const char* what) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- op library -----------------------------------------------------------
// All ops throw ShapeError on non-conforming operands and NonFiniteError if
// the result is not finite.

// [n x k] * [k x m] -> [n x m]
Var matmul(Var a, Var b);
// [n x k] * [m x k]^T -> [n x m]
Var matmul_transposed(Var a, Var b);
// Same shape, or a [n x k] + b [k] (row broadcast).
Var add(Var a, Var b);
Var subtract(Var a, Var b);
// Elementwise product, same shapes.
Var multiply(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
// Mean over all elements of log(1 + exp(-label * logit)); labels in {-1, +1}.
Var logistic_loss(Var logits, Var labels);
// Mean over all elements -> scalar.
Var mean(Var a);
Var sum(Var a);
Var scale(Var a, double factor);
Var shift(Var a, double offset);
// Concatenate along the leading axis; trailing dims must agree. Rank-1
// inputs are concatenated end to end.
Var concat(std::span<const Var> parts);
Var reshape(Var a, Shape shape);
// weight * mask in the forward pass. The backward pass sends
// out_grad * mask to `weight` and out_grad * weight to `scores` (the mask is
// treated as identity in its scores).
Var straight_through_mask(Var weight, Var scores, Var mask);

}  // namespace bifp::ad
