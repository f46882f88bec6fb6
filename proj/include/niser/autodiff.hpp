// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph records every primitive application in execution order, so the
// tape is topologically sorted by construction. backward() walks it in
// reverse and accumulates gradients into every node that (transitively)
// depends on a leaf created with Graph::leaf().
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "niser/rng.hpp"
#include "niser/tensor.hpp"

namespace niser::ad {

class Graph;

/// Handle to a recorded tensor. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using Backprop = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Differentiable leaf (parameter or input under test).
  Var leaf(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }

  /// Gradient of the last backward() loss w.r.t. `v`. Leaves not reachable
  /// from the loss report zeros.
  const Tensor& grad(Var v) const;

  /// Reverse sweep from a single-element loss. Throws ShapeError otherwise.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Primitive-author interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_at(std::size_t id) const { return nodes_[id].grad; }
  /// Accumulation buffer for node `id`; allocated on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------
// Every primitive checks shapes and throws ShapeError naming both operands.

/// a[M x K] * b[K x N], or a * b^T when transpose_b (b is [N x K]).
Var matmul(Var a, Var b, bool transpose_b = false);
Var transpose(Var a);
/// Per-block products: a is [B*r x k], x is [B*k x n], result [B*r x n] with
/// block i equal to a_i * x_i.
Var block_matmul(Var a, Var x, std::size_t blocks);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// Adds a length-cols vector to every row.
Var add_row(Var a, Var bias);
/// [R x Ca] ++ [R x Cb] -> [R x (Ca+Cb)]
Var concat_cols(Var a, Var b);

Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);

/// Row-wise softmax. With a mask (one byte per element), masked-out entries
/// get probability 0; a row with no live entry throws DataError.
Var softmax_rows(Var a, const std::vector<std::uint8_t>* mask = nullptr);
Var log_softmax_rows(Var a);

/// Row-wise L2 normalisation. Rows with norm < 1e-12 throw NumericError.
Var l2_normalize_rows(Var a);

inline constexpr std::size_t kNoRow = static_cast<std::size_t>(-1);

/// Row gather. Indices equal to `pad` (or kNoRow) yield zero rows and receive
/// no gradient. Backward scatter-adds into the table.
Var gather_rows(Var table, std::vector<std::size_t> indices, std::size_t pad = kNoRow);

/// Train mode: Bernoulli keep-mask scaled by 1/(1-p). Otherwise identity.
Var dropout(Var a, double p, Rng& rng, bool train);

Var sum(Var a);
Var mean(Var a);
/// Sum of the entries whose mask byte is nonzero.
Var masked_sum(Var a, const std::vector<std::uint8_t>& mask);

/// result[r] = a[r, cols[r]]
Var pick(Var a, std::vector<std::size_t> cols);

Var reshape(Var a, Shape shape);
Var slice_rows(Var a, std::size_t begin, std::size_t end);

// ---- verification ---------------------------------------------------------

using LossBuilder = std::function<Var(Graph&, std::span<const Var> leaves)>;

/// Analytic gradients of the loss built by `build` at `leaves`.
std::vector<Tensor> gradients(const LossBuilder& build, const std::vector<Tensor>& leaves);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_leaf;  // max relative error per leaf tensor
};

/// Central differences (f(x+eps) - f(x-eps)) / (2 eps) for every coordinate of
/// every leaf, compared against backward(). Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_diff_check(const LossBuilder& build, std::vector<Tensor> leaves,
                                  double eps = 1e-5);

}  // namespace niser::ad
