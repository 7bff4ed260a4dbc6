// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "packenc/tensor.hpp"

namespace packenc::ad {

class GradTape;

/// Handle to a value recorded on a GradTape. Cheap to copy; valid for the
/// lifetime of its tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  GradTape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class GradTape;
  Var(GradTape* tape, std::size_t id) : tape_(tape), id_(id) {}

  GradTape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the gradient flowing into a node and pushes contributions to its
/// parents through GradTape::accumulate.
using BackwardFn = std::function<void(GradTape&, const Tensor& grad_out)>;

/// Append-only record of a forward pass. In training mode each derived value
/// keeps a closure that propagates gradients to its parents; backward()
/// replays those closures once in reverse order. In inference mode nothing
/// but the values is kept.
class GradTape {
 public:
  enum class Mode { kTrain, kInference };

  explicit GradTape(Mode mode = Mode::kTrain) : mode_(mode) {}
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Mode mode() const noexcept { return mode_; }
  bool recording() const noexcept { return mode_ == Mode::kTrain; }

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records a derived value. `backward` runs only if some parent requires a
  /// gradient and the tape is in training mode.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);

  /// Reverse pass from a scalar loss. Throws if the loss is not scalar, was
  /// not produced on this tape, or the tape was already consumed.
  void backward(Var loss);
  bool consumed() const noexcept { return consumed_; }

  /// Gradient of the last backward pass w.r.t. `v`; zeros if none reached it.
  Tensor grad(Var v) const;
  /// Adds `g` into the gradient slot of `v` (no-op if `v` needs no gradient).
  void accumulate(Var v, const Tensor& g);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor grad;
    bool has_grad = false;
  };

  void check_owned(Var v) const;

  Mode mode_;
  bool consumed_ = false;
  std::deque<Node> nodes_;
};

// Differentiable primitives. All operands must live on the same tape.

Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a length-n vector to every row of an m x n matrix.
Var add_row_vector(Var x, Var bias);
/// Scales row i of an m x n matrix by w[i].
Var scale_rows(Var x, Var w);
/// Sum of weights[i] * terms[i]; every term shares one shape.
Var weighted_sum(Var weights, std::span<const Var> terms);

Var sum(Var a);
Var mean(Var a);
/// Column means of rows [begin, end) of a matrix, shape [1 x n].
Var mean_rows(Var x, std::size_t begin, std::size_t end);

Var silu(Var x);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
/// Per-row Euclidean norm. The zero row gets a zero subgradient.
Var l2_norm_rows(Var x);
/// Rows divided by their Euclidean norm.
Var normalize_rows(Var x);
/// Per-row layer normalization with affine gamma/beta of length n.
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

Var reshape(Var a, Shape shape);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// Matrix of `n_rows` rows where row rows[i] accumulates x[i].
Var scatter_add_rows(Var x, std::span<const std::size_t> rows, std::size_t n_rows);
/// Flat-index gather into a tensor of shape `shape`.
Var gather(Var x, std::span<const std::size_t> flat_index, Shape shape);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

/// Mean squared error over all elements.
Var mse(Var a, Var b);

}  // namespace packenc::ad
