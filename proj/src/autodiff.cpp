// SPDX-License-Identifier: Apache-2.0
#include "niser/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "niser/error.hpp"
#include "niser/simd/kernels.hpp"

namespace niser::ad {

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backprop) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
    n.grad = Tensor::zeros_like(n.value);
  }
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    // Never touched by the sweep: zero gradient.
    const_cast<Node&>(n).grad = Tensor::zeros_like(n.value);
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw UsageError("backward: loss belongs to another graph");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be a single element, got " +
                     shape_to_string(lv.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backprop || n.grad.size() == 0) continue;
    n.backprop(*this, i);
  }
}

namespace {

std::size_t rows_of(const Tensor& t) { return t.rows(); }
std::size_t cols_of(const Tensor& t) { return t.cols(); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                   shape_to_string(b.shape()));
}

// Unary elementwise op where the local derivative is a function of the
// output (sigmoid, tanh, exp).
template <typename Fwd, typename DerivFromOut>
Var unary_from_output(Var a, Fwd fwd, DerivFromOut deriv) {
  Graph& g = *a.graph();
  Tensor out = a.value();
  for (double& v : out.values()) v = fwd(v);
  const std::size_t ia = a.id();
  return g.record(std::move(out), {a}, [ia, deriv](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& y = gr.value_at(self);
    const Tensor& dy = gr.grad_at(self);
    Tensor& dx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * deriv(y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1];
  const std::size_t n = transpose_b ? bv.shape()[0] : bv.shape()[1];
  const std::size_t kb = transpose_b ? bv.shape()[1] : bv.shape()[0];
  if (k != kb) mismatch("matmul", av, bv);
  Tensor out(Shape{m, n});
  if (transpose_b) {
    simd::gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  } else {
    simd::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record(std::move(out), {a, b},
                           [ia, ib, m, k, n, transpose_b](Graph& g, std::size_t self) {
    const Tensor& dc = g.grad_at(self);
    const Tensor& A = g.value_at(ia);
    const Tensor& B = g.value_at(ib);
    if (!transpose_b) {
      if (g.requires_grad(ia)) simd::gemm_nt(dc.data(), B.data(), g.grad_buffer(ia).data(), m, n, k);
      if (g.requires_grad(ib)) simd::gemm_tn(A.data(), dc.data(), g.grad_buffer(ib).data(), k, m, n);
    } else {
      if (g.requires_grad(ia)) simd::gemm_nn(dc.data(), B.data(), g.grad_buffer(ia).data(), m, n, k);
      if (g.requires_grad(ib)) simd::gemm_tn(dc.data(), A.data(), g.grad_buffer(ib).data(), n, m, k);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  const std::size_t r = av.shape()[0], c = av.shape()[1];
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, r, c](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += dy.at(j, i);
  });
}

Var block_matmul(Var a, Var x, std::size_t blocks) {
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  require_rank2(av, "block_matmul");
  require_rank2(xv, "block_matmul");
  if (blocks == 0 || av.shape()[0] % blocks != 0 || xv.shape()[0] % blocks != 0) {
    mismatch("block_matmul", av, xv);
  }
  const std::size_t r = av.shape()[0] / blocks, k = av.shape()[1];
  if (xv.shape()[0] / blocks != k) mismatch("block_matmul", av, xv);
  const std::size_t n = xv.shape()[1];
  Tensor out(Shape{blocks * r, n});
  for (std::size_t b = 0; b < blocks; ++b) {
    simd::gemm_nn(av.data() + b * r * k, xv.data() + b * k * n, out.data() + b * r * n, r, k, n);
  }
  const std::size_t ia = a.id(), ix = x.id();
  return a.graph()->record(std::move(out), {a, x},
                           [ia, ix, blocks, r, k, n](Graph& g, std::size_t self) {
    const Tensor& dc = g.grad_at(self);
    const Tensor& A = g.value_at(ia);
    const Tensor& X = g.value_at(ix);
    for (std::size_t b = 0; b < blocks; ++b) {
      const double* dcb = dc.data() + b * r * n;
      if (g.requires_grad(ia)) {
        simd::gemm_nt(dcb, X.data() + b * k * n, g.grad_buffer(ia).data() + b * r * k, r, n, k);
      }
      if (g.requires_grad(ix)) {
        simd::gemm_tn(A.data() + b * r * k, dcb, g.grad_buffer(ix).data() + b * k * n, k, r, n);
      }
    }
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) mismatch("add", a.value(), b.value());
  Tensor out = a.value();
  simd::kernels().axpy(1.0, b.value().data(), out.data(), out.size());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    if (g.requires_grad(ia)) simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ia).data(), dy.size());
    if (g.requires_grad(ib)) simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ib).data(), dy.size());
  });
}

Var sub(Var a, Var b) {
  if (a.shape() != b.shape()) mismatch("sub", a.value(), b.value());
  Tensor out = a.value();
  simd::kernels().axpy(-1.0, b.value().data(), out.data(), out.size());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    if (g.requires_grad(ia)) simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ia).data(), dy.size());
    if (g.requires_grad(ib)) simd::kernels().axpy(-1.0, dy.data(), g.grad_buffer(ib).data(), dy.size());
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) mismatch("mul", a.value(), b.value());
  Tensor out(a.shape());
  simd::kernels().mul_acc(a.value().data(), b.value().data(), out.data(), out.size());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    if (g.requires_grad(ia)) {
      simd::kernels().mul_acc(dy.data(), g.value_at(ib).data(), g.grad_buffer(ia).data(), dy.size());
    }
    if (g.requires_grad(ib)) {
      simd::kernels().mul_acc(dy.data(), g.value_at(ia).data(), g.grad_buffer(ib).data(), dy.size());
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= c;
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, c](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    simd::kernels().axpy(c, dy.data(), g.grad_buffer(ia).data(), dy.size());
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v += c;
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ia).data(), dy.size());
  });
}

Var add_row(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != cols_of(av)) mismatch("add_row", av, bv);
  Tensor out = av;
  const std::size_t r = rows_of(av), c = cols_of(av);
  for (std::size_t i = 0; i < r; ++i) simd::kernels().axpy(1.0, bv.data(), out.data() + i * c, c);
  const std::size_t ia = a.id(), ib = bias.id();
  return a.graph()->record(std::move(out), {a, bias}, [ia, ib, r, c](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    if (g.requires_grad(ia)) simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ia).data(), dy.size());
    if (g.requires_grad(ib)) {
      Tensor& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i) simd::kernels().axpy(1.0, dy.data() + i * c, db.data(), c);
    }
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "concat_cols");
  require_rank2(bv, "concat_cols");
  if (av.shape()[0] != bv.shape()[0]) mismatch("concat_cols", av, bv);
  const std::size_t r = av.shape()[0], ca = av.shape()[1], cb = bv.shape()[1];
  Tensor out(Shape{r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(bv.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record(std::move(out), {a, b}, [ia, ib, r, ca, cb](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    const auto axpy = simd::kernels().axpy;
    if (g.requires_grad(ia)) {
      Tensor& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < r; ++i) axpy(1.0, dy.data() + i * (ca + cb), da.data() + i * ca, ca);
    }
    if (g.requires_grad(ib)) {
      Tensor& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i) {
        axpy(1.0, dy.data() + i * (ca + cb) + ca, db.data() + i * cb, cb);
      }
    }
  });
}

Var sigmoid(Var a) {
  return unary_from_output(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary_from_output(a, [](double x) { return std::tanh(x); },
                           [](double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary_from_output(a, [](double x) { return std::exp(x); }, [](double y) { return y; });
}

Var log(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::log(v);
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    const Tensor& x = g.value_at(ia);
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] / x[i];
  });
}

Var softmax_rows(Var a, const std::vector<std::uint8_t>* mask) {
  const Tensor& av = a.value();
  if (mask && mask->size() != av.size()) {
    throw ShapeError("softmax_rows: mask of " + std::to_string(mask->size()) +
                     " entries for tensor " + shape_to_string(av.shape()));
  }
  const std::size_t r = rows_of(av), c = cols_of(av);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i * c + j]) mx = std::max(mx, av.at(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DataError("softmax_rows: row " + std::to_string(i) + " has no unmasked entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask && !(*mask)[i * c + j]) continue;
      out.at(i, j) = std::exp(av.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, r, c](Graph& g, std::size_t self) {
    const Tensor& y = g.value_at(self);
    const Tensor& dy = g.grad_at(self);
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      const double inner = simd::kernels().dot(y.data() + i * c, dy.data() + i * c, c);
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += y.at(i, j) * (dy.at(i, j) - inner);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t r = rows_of(av), c = cols_of(av);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(av.at(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) - lse;
  }
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, r, c](Graph& g, std::size_t self) {
    const Tensor& y = g.value_at(self);
    const Tensor& dy = g.grad_at(self);
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += dy.at(i, j);
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += dy.at(i, j) - std::exp(y.at(i, j)) * total;
    }
  });
}

Var l2_normalize_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t r = rows_of(av), c = cols_of(av);
  Tensor out(av.shape());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    norms[i] = std::sqrt(simd::kernels().sum_squares(av.data() + i * c, c));
    if (!(norms[i] >= 1e-12)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has norm " +
                         std::to_string(norms[i]) + " < 1e-12 (dead embedding)");
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = av.at(i, j) / norms[i];
  }
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a},
                           [ia, r, c, norms = std::move(norms)](Graph& g, std::size_t self) {
    const Tensor& y = g.value_at(self);
    const Tensor& dy = g.grad_at(self);
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      const double proj = simd::kernels().dot(y.data() + i * c, dy.data() + i * c, c);
      for (std::size_t j = 0; j < c; ++j) {
        dx.at(i, j) += (dy.at(i, j) - y.at(i, j) * proj) / norms[i];
      }
    }
  });
}

Var gather_rows(Var table, std::vector<std::size_t> indices, std::size_t pad) {
  const Tensor& tv = table.value();
  const std::size_t n = rows_of(tv), c = cols_of(tv);
  Tensor out(Shape{indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    if (idx == pad || idx == kNoRow) continue;
    if (idx >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for table " +
                       shape_to_string(tv.shape()));
    }
    std::copy_n(tv.data() + idx * c, c, out.data() + i * c);
  }
  const std::size_t it = table.id();
  return table.graph()->record(std::move(out), {table},
                               [it, c, pad, indices = std::move(indices)](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    Tensor& dt = g.grad_buffer(it);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::size_t idx = indices[i];
      if (idx == pad || idx == kNoRow) continue;
      simd::kernels().axpy(1.0, dy.data() + i * c, dt.data() + idx * c, c);
    }
  });
}

Var dropout(Var a, double p, Rng& rng, bool train) {
  if (!(p >= 0.0 && p < 1.0)) throw UsageError("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return a;
  const Tensor& av = a.value();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(av.size());
  for (double& m : mask) m = uniform01(rng) >= p ? keep_scale : 0.0;
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * mask[i];
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, mask = std::move(mask)](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    simd::kernels().mul_acc(dy.data(), mask.data(), g.grad_buffer(ia).data(), dy.size());
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.graph()->record(Tensor::scalar(s), {a}, [ia](Graph& g, std::size_t self) {
    const double d = g.grad_at(self)[0];
    for (double& v : g.grad_buffer(ia).values()) v += d;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var masked_sum(Var a, const std::vector<std::uint8_t>& mask) {
  const Tensor& av = a.value();
  if (mask.size() != av.size()) {
    throw ShapeError("masked_sum: mask of " + std::to_string(mask.size()) + " entries for tensor " +
                     shape_to_string(av.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) if (mask[i]) s += av[i];
  const std::size_t ia = a.id();
  return a.graph()->record(Tensor::scalar(s), {a}, [ia, mask](Graph& g, std::size_t self) {
    const double d = g.grad_at(self)[0];
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) if (mask[i]) dx[i] += d;
  });
}

Var pick(Var a, std::vector<std::size_t> cols) {
  const Tensor& av = a.value();
  const std::size_t r = rows_of(av), c = cols_of(av);
  if (cols.size() != r) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for tensor " +
                     shape_to_string(av.shape()));
  }
  Tensor out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    if (cols[i] >= c) throw ShapeError("pick: column " + std::to_string(cols[i]) + " out of range");
    out[i] = av.at(i, cols[i]);
  }
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, c, cols = std::move(cols)](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    Tensor& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < cols.size(); ++i) dx[i * c + cols[i]] += dy[i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ia).data(), dy.size());
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_rank2(av, "slice_rows");
  if (begin > end || end > av.shape()[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_to_string(av.shape()));
  }
  const std::size_t c = av.shape()[1];
  Tensor out(Shape{end - begin, c},
             std::vector<double>(av.data() + begin * c, av.data() + end * c));
  const std::size_t ia = a.id();
  return a.graph()->record(std::move(out), {a}, [ia, begin, c](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_at(self);
    simd::kernels().axpy(1.0, dy.data(), g.grad_buffer(ia).data() + begin * c, dy.size());
  });
}

std::vector<Tensor> gradients(const LossBuilder& build, const std::vector<Tensor>& leaves) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const Tensor& t : leaves) vars.push_back(g.leaf(t));
  const Var loss = build(g, vars);
  g.backward(loss);
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(g.grad(v));
  return out;
}

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>& leaves) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const Tensor& t : leaves) vars.push_back(g.constant(t));
  const Var loss = build(g, vars);
  if (loss.value().size() != 1) {
    throw ShapeError("finite_diff_check: loss must be a single element, got " +
                     shape_to_string(loss.shape()));
  }
  return loss.value()[0];
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& build, std::vector<Tensor> leaves, double eps) {
  const std::vector<Tensor> analytic = gradients(build, leaves);
  GradCheckReport report;
  report.per_leaf.assign(leaves.size(), 0.0);
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double saved = leaves[l][i];
      leaves[l][i] = saved + eps;
      const double up = evaluate(build, leaves);
      leaves[l][i] = saved - eps;
      const double down = evaluate(build, leaves);
      leaves[l][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      report.per_leaf[l] = std::max(report.per_leaf[l], rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, report.per_leaf[l]);
  }
  return report;
}

}  // namespace niser::ad
