#pragma once

// Dense 64-bit tensors with reverse-mode differentiation over an explicit tape.
//
// A Tape is created per forward pass and owns every intermediate value. Ops are
// free functions over `Var` handles; each records its adjoint on the tape of its
// operands. Nothing here is global, so independent generations can run their
// own tapes concurrently.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace tta::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows when viewed as a [leading x last] matrix.
  std::size_t rows() const noexcept;
  /// Extent of the last axis (1 for scalars).
  std::size_t cols() const noexcept;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Result of `Tape::backward`: gradient of the loss for every tape node.
class Gradients {
 public:
  /// Gradient w.r.t. `v`; zeros of v's shape when the loss does not depend on it.
  const Tensor& of(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  /// Accumulates the node's output gradient into its inputs. Entries of
  /// `input_grads` are null for inputs that do not require gradients.
  using Adjoint = std::function<void(const Tensor& out_grad, std::span<Tensor* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Record an op output. `adjoint` is dropped when no input requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint);

  /// Reverse sweep from a single-element loss; each node is visited once.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Adjoint adjoint;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable references: values stay valid as the tape grows
};

// ---- ops ------------------------------------------------------------------
// Elementwise ops require identical shapes, except `add` which also accepts a
// rank-1 `b` matching the last axis of `a` (bias add over the leading axes).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);

/// [m x k] * [k x n].
Var matmul(Var a, Var b);
/// Batched product over the leading axis: [g x m x k] * [g x k x n], or
/// [g x m x k] * [g x n x k]^T when `transpose_b`.
Var bmm(Var a, Var b, bool transpose_b = false);

/// Softmax over the last axis, stabilized by max subtraction.
Var softmax(Var a);
Var log_softmax(Var a);

/// Normalizes each row over the last axis, then applies gain and bias ([d] each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Rows of `table` [V x d] selected by `ids`.
Var embedding_lookup(Var table, std::span<const int> ids);
/// Rows of a rank-2 tensor selected by `rows`; repeats allowed.
Var gather_rows(Var x, std::span<const std::size_t> rows);

/// Mean negative log-probability of `targets` under softmax(logits) ([n x V]).
Var cross_entropy(Var logits, std::span<const int> targets);

Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);

/// [b*n x h*dh] -> [b*h x n x dh].
Var split_heads(Var x, std::size_t batch, std::size_t seq_len, std::size_t heads);
/// Inverse of split_heads.
Var merge_heads(Var x, std::size_t batch, std::size_t seq_len);

// ---- plain tensor helpers (no tape) ----------------------------------------

Tensor softmax_rows(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace tta::ad
