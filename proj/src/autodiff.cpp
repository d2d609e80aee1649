// SPDX-License-Identifier: Apache-2.0

#include "bifp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include "bifp/error.hpp"

namespace bifp::ad {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << " x ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

bool finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
  }
  if (element_count(shape_) != values_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() needs a rank-2 tensor, got " + to_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() needs a rank-2 tensor, got " + to_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() needs a single element, got " + to_string(shape_));
  return values_[0];
}

void Tensor::set_grad(std::vector<double> grad) {
  if (grad.size() != values_.size()) {
    throw ShapeError("gradient length " + std::to_string(grad.size()) + " does not match " +
                     to_string(shape_));
  }
  grad_ = std::move(grad);
}

bool Tensor::all_finite() const { return finite(values_); }

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("use of a default-constructed Var");
  return tape_->value(*this);
}

void Tape::check_owned(Var v, const char* what) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw TapeError(std::string(what) + ": variable does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "value");
  return nodes_[v.id_].value;
}

bool Tape::needs_grad(Var v) const {
  check_owned(v, "needs_grad");
  return nodes_[v.id_].needs_grad;
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("non-finite input " + to_string(value.shape()));
  value.set_requires_grad(false);
  value.clear_grad();
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& tensor) {
  if (!tensor.all_finite()) throw NonFiniteError("non-finite parameter " + to_string(tensor.shape()));
  Tensor copy(tensor.shape(), std::vector<double>(tensor.values().begin(), tensor.values().end()));
  nodes_.push_back(Node{std::move(copy), {}, {}, &tensor, tensor.requires_grad()});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError("cannot record on a tape that has already been backpropagated");
  Node node;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in, "record");
    node.inputs.push_back(in.id_);
    node.needs_grad = node.needs_grad || nodes_[in.id_].needs_grad;
  }
  if (!value.all_finite()) throw NonFiniteError("operation produced a non-finite value");
  node.value = std::move(value);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  check_owned(loss, "backward");
  if (consumed_) throw TapeError("backward already ran on this tape; rebuild it");
  const auto& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw TapeError("backward needs a scalar loss, got " + to_string(root.value.shape()));
  }
  consumed_ = true;
  if (!root.needs_grad) return;

  std::vector<std::vector<double>> adjoint(loss.id_ + 1);
  adjoint[loss.id_].assign(1, 1.0);
  std::map<Tensor*, std::vector<double>> bound_grads;

  std::vector<std::span<double>> in_grads;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.needs_grad || adjoint[id].empty()) continue;
    if (node.bound) {
      auto [it, fresh] = bound_grads.try_emplace(node.bound, adjoint[id]);
      if (!fresh) {
        for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += adjoint[id][i];
      }
      continue;
    }
    in_grads.assign(node.inputs.size(), std::span<double>());
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto in = node.inputs[k];
      if (!nodes_[in].needs_grad) continue;
      if (adjoint[in].empty()) adjoint[in].assign(nodes_[in].value.size(), 0.0);
      in_grads[k] = adjoint[in];
    }
    node.backward(adjoint[id], in_grads);
    adjoint[id].clear();
    adjoint[id].shrink_to_fit();
  }

  for (auto& [tensor, grad] : bound_grads) {
    if (!finite(grad)) throw NonFiniteError("non-finite gradient for tensor " + to_string(tensor->shape()));
    tensor->set_grad(std::move(grad));
  }
}

// ---- ops ------------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (!a.tape()) throw TapeError("use of a default-constructed Var");
  return *a.tape();
}

Tape& common_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw TapeError("operands live on different tapes");
  return tape_of(a);
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

Tensor like(const Tensor& t, std::vector<double> values) { return Tensor(t.shape(), std::move(values)); }

}  // namespace

Var matmul(Var a, Var b) {
  auto& tape = common_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) mismatch("matmul", A.shape(), B.shape());
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * B[p * m + j];
    }
  return tape.record(Tensor({n, m}, std::move(out)), {a, b},
                     [a, b, n, k, m](std::span<const double> g, std::span<std::span<double>> in) {
                       const auto& A = a.value();
                       const auto& B = b.value();
                       if (!in[0].empty())
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * B[p * m + j];
                             in[0][i * k + p] += acc;
                           }
                       if (!in[1].empty())
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A[i * k + p];
                             if (aip == 0.0) continue;
                             for (std::size_t j = 0; j < m; ++j) in[1][p * m + j] += aip * g[i * m + j];
                           }
                     });
}

Var matmul_transposed(Var a, Var b) {
  auto& tape = common_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    mismatch("matmul_transposed", A.shape(), B.shape());
  }
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * m + j] = acc;
    }
  return tape.record(Tensor({n, m}, std::move(out)), {a, b},
                     [a, b, n, k, m](std::span<const double> g, std::span<std::span<double>> in) {
                       const auto& A = a.value();
                       const auto& B = b.value();
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j) {
                           const double gij = g[i * m + j];
                           if (gij == 0.0) continue;
                           if (!in[0].empty())
                             for (std::size_t p = 0; p < k; ++p) in[0][i * k + p] += gij * B[j * k + p];
                           if (!in[1].empty())
                             for (std::size_t p = 0; p < k; ++p) in[1][j * k + p] += gij * A[i * k + p];
                         }
                     });
}

Var add(Var a, Var b) {
  auto& tape = common_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() == B.shape()) {
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
    return tape.record(like(A, std::move(out)), {a, b},
                       [](std::span<const double> g, std::span<std::span<double>> in) {
                         for (auto& dst : in)
                           if (!dst.empty())
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       });
  }
  if (A.rank() == 2 && B.rank() == 1 && B.size() == A.cols()) {
    const std::size_t n = A.rows(), k = A.cols();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] = A[i * k + j] + B[j];
    return tape.record(like(A, std::move(out)), {a, b},
                       [n, k](std::span<const double> g, std::span<std::span<double>> in) {
                         if (!in[0].empty())
                           for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                         if (!in[1].empty())
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < k; ++j) in[1][j] += g[i * k + j];
                       });
  }
  mismatch("add", A.shape(), B.shape());
}

Var subtract(Var a, Var b) {
  auto& tape = common_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) mismatch("subtract", A.shape(), B.shape());
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return tape.record(like(A, std::move(out)), {a, b},
                     [](std::span<const double> g, std::span<std::span<double>> in) {
                       if (!in[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                       if (!in[1].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) in[1][i] -= g[i];
                     });
}

Var multiply(Var a, Var b) {
  auto& tape = common_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) mismatch("multiply", A.shape(), B.shape());
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return tape.record(like(A, std::move(out)), {a, b},
                     [a, b](std::span<const double> g, std::span<std::span<double>> in) {
                       const auto& A = a.value();
                       const auto& B = b.value();
                       if (!in[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * B[i];
                       if (!in[1].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * A[i];
                     });
}

Var relu(Var a) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
  return tape.record(like(A, std::move(out)), {a},
                     [a](std::span<const double> g, std::span<std::span<double>> in) {
                       const auto& A = a.value();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (A[i] > 0.0) in[0][i] += g[i];
                     });
}

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

Var sigmoid(Var a) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logistic(A[i]);
  auto result = tape.record(like(A, out), {a},
                            [out](std::span<const double> g, std::span<std::span<double>> in) {
                              for (std::size_t i = 0; i < g.size(); ++i)
                                in[0][i] += g[i] * out[i] * (1.0 - out[i]);
                            });
  return result;
}

Var logistic_loss(Var logits, Var labels) {
  auto& tape = common_tape(logits, labels);
  const auto& Z = logits.value();
  const auto& Y = labels.value();
  if (Z.shape() != Y.shape()) mismatch("logistic_loss", Z.shape(), Y.shape());
  const auto n = static_cast<double>(Z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) total += softplus(-Y[i] * Z[i]);
  return tape.record(Tensor::scalar(total / n), {logits, labels},
                     [logits, labels, n](std::span<const double> g, std::span<std::span<double>> in) {
                       const auto& Z = logits.value();
                       const auto& Y = labels.value();
                       for (std::size_t i = 0; i < Z.size(); ++i) {
                         // d/dz softplus(-y z) = -y * sigmoid(-y z)
                         const double s = logistic(-Y[i] * Z[i]);
                         if (!in[0].empty()) in[0][i] += g[0] * (-Y[i] * s) / n;
                         if (!in[1].empty()) in[1][i] += g[0] * (-Z[i] * s) / n;
                       }
                     });
}

Var sum(Var a) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  const double total = std::accumulate(A.values().begin(), A.values().end(), 0.0);
  return tape.record(Tensor::scalar(total), {a},
                     [](std::span<const double> g, std::span<std::span<double>> in) {
                       for (auto& v : in[0]) v += g[0];
                     });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.size());
  return scale(sum(a), 1.0 / n);
}

Var scale(Var a, double factor) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * factor;
  return tape.record(like(A, std::move(out)), {a},
                     [factor](std::span<const double> g, std::span<std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * factor;
                     });
}

Var shift(Var a, double offset) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + offset;
  return tape.record(like(A, std::move(out)), {a},
                     [](std::span<const double> g, std::span<std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                     });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  auto& tape = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw TapeError("concat: operands live on different tapes");
    const auto& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      mismatch("concat", first, s);
    }
    offsets.push_back(out.size());
    out_shape[0] += s[0];
    out.insert(out.end(), p.value().values().begin(), p.value().values().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(Tensor(out_shape, std::move(out)), std::move(inputs),
                     [offsets](std::span<const double> g, std::span<std::span<double>> in) {
                       for (std::size_t k = 0; k < in.size(); ++k)
                         for (std::size_t i = 0; i < in[k].size(); ++i) in[k][i] += g[offsets[k] + i];
                     });
}

Var reshape(Var a, Shape shape) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  if (element_count(shape) != A.size()) mismatch("reshape", A.shape(), shape);
  std::vector<double> out(A.values().begin(), A.values().end());
  return tape.record(Tensor(std::move(shape), std::move(out)), {a},
                     [](std::span<const double> g, std::span<std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                     });
}

Var straight_through_mask(Var weight, Var scores, Var mask) {
  auto& tape = common_tape(weight, scores);
  if (mask.tape() != &tape) throw TapeError("straight_through_mask: operands live on different tapes");
  const auto& W = weight.value();
  const auto& S = scores.value();
  const auto& M = mask.value();
  if (W.shape() != S.shape()) mismatch("straight_through_mask", W.shape(), S.shape());
  if (W.shape() != M.shape()) mismatch("straight_through_mask", W.shape(), M.shape());
  std::vector<double> out(W.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = W[i] * M[i];
  return tape.record(like(W, std::move(out)), {weight, scores, mask},
                     [weight, mask](std::span<const double> g, std::span<std::span<double>> in) {
                       const auto& W = weight.value();
                       const auto& M = mask.value();
                       if (!in[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * M[i];
                       if (!in[1].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * W[i];
                     });
}

}  // namespace bifp::ad
