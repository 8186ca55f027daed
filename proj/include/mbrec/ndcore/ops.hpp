#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mbrec/ndcore/array.hpp"
#include "mbrec/ndcore/parallel.hpp"
#include "mbrec/ndcore/sparse.hpp"
#include "mbrec/ndcore/tape.hpp"

// Differentiable operations over Tape variables. Every op computes its
// forward value eagerly and records a closure that accumulates adjoints.
namespace mbrec {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("variables live on different tapes");
  return *a.tape;
}

inline void require_rank2(const Array& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(a.shape()));
  }
}

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

constexpr std::size_t kRowBlock = 64;

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  detail::require_rank2(A, "matmul");
  detail::require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(A.shape()) +
                         " x " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Array C = Array::matrix(m, n);
  parallel_for(0, m, detail::kRowBlock, [&](std::size_t i) {
    real* c = &C(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const real aip = A(i, p);
      if (aip == 0) continue;
      const real* brow = &B(p, 0);
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
    }
  });
  return t.record(std::move(C), {a.id, b.id}, [m, k, n](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    const std::size_t ia = tp.inputs(self)[0], ib = tp.inputs(self)[1];
    if (tp.requires_grad(ia)) {
      const Array& Bv = tp.value(ib);
      Array& dA = tp.grad_buffer(ia);
      parallel_for(0, m, detail::kRowBlock, [&](std::size_t i) {
        for (std::size_t p = 0; p < k; ++p) {
          real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += G(i, j) * Bv(p, j);
          dA(i, p) += acc;
        }
      });
    }
    if (tp.requires_grad(ib)) {
      const Array& Av = tp.value(ia);
      Array& dB = tp.grad_buffer(ib);
      parallel_for(0, k, detail::kRowBlock, [&](std::size_t p) {
        real* db = &dB(p, 0);
        for (std::size_t i = 0; i < m; ++i) {
          const real aip = Av(i, p);
          if (aip == 0) continue;
          for (std::size_t j = 0; j < n; ++j) db[j] += aip * G(i, j);
        }
      });
    }
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  detail::require_rank2(A, "transpose");
  const std::size_t m = A.rows(), n = A.cols();
  Array out = Array::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  return t.record(std::move(out), {a.id}, [m, n](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& dA = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dA(i, j) += G(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  detail::require_same_shape(A, B, "add");
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return t.record(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t self) {
    for (std::size_t in : tp.inputs(self)) {
      if (!tp.requires_grad(in)) continue;
      const Array& G = tp.grad_buffer(self);
      Array& d = tp.grad_buffer(in);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  detail::require_same_shape(A, B, "sub");
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return t.record(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t self) {
    const std::size_t ia = tp.inputs(self)[0], ib = tp.inputs(self)[1];
    if (tp.requires_grad(ia)) {
      const Array& G = tp.grad_buffer(self);
      Array& d = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
    if (tp.requires_grad(ib)) {
      const Array& G = tp.grad_buffer(self);
      Array& d = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= G[i];
    }
  });
}

// Hadamard product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  detail::require_same_shape(A, B, "mul");
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.record(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t self) {
    const std::size_t ia = tp.inputs(self)[0], ib = tp.inputs(self)[1];
    if (tp.requires_grad(ia)) {
      const Array& G = tp.grad_buffer(self);
      const Array& Bv = tp.value(ib);
      Array& d = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * Bv[i];
    }
    if (tp.requires_grad(ib)) {
      const Array& G = tp.grad_buffer(self);
      const Array& Av = tp.value(ia);
      Array& d = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * Av[i];
    }
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var scale(Var a, real s) {
  Tape& t = *a.tape;
  Array out = t.value(a);
  for (real& x : out.data()) x *= s;
  return t.record(std::move(out), {a.id}, [s](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * G[i];
  });
}

inline Var add_scalar(Var a, real s) {
  Tape& t = *a.tape;
  Array out = t.value(a);
  for (real& x : out.data()) x += s;
  return t.record(std::move(out), {a.id}, [](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
  });
}

/// max(x, 0) elementwise. The subgradient at exactly 0 is 0.
inline Var relu(Var a) {
  Tape& t = *a.tape;
  Array out = t.value(a);
  for (real& x : out.data()) x = x > 0 ? x : real(0);
  return t.record(std::move(out), {a.id}, [](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Array& G = tp.grad_buffer(self);
    const Array& X = tp.value(in);
    Array& d = tp.grad_buffer(in);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (X[i] > 0) d[i] += G[i];
  });
}

// ---------------------------------------------------------------------------
// Row-wise (last axis) operations

// Adds a bias row (length = cols) to every row.
inline Var add_row(Var a, Var bias) {
  Tape& t = detail::same_tape(a, bias);
  const Array& A = t.value(a);
  const Array& b = t.value(bias);
  if (b.size() != A.cols()) {
    throw DimensionError("add_row: bias " + shape_string(b.shape()) + " does not fit rows of " +
                         shape_string(A.shape()));
  }
  Array out = A;
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  return t.record(std::move(out), {a.id, bias.id}, [rows, cols](Tape& tp, std::size_t self) {
    const std::size_t ia = tp.inputs(self)[0], ib = tp.inputs(self)[1];
    if (tp.requires_grad(ia)) {
      const Array& G = tp.grad_buffer(self);
      Array& d = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
    if (tp.requires_grad(ib)) {
      const Array& G = tp.grad_buffer(self);
      Array& d = tp.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) d[c] += G[r * cols + c];
    }
  });
}

// Multiplies row r of `a` by the scalar gate[r]; `gate` holds one value per row.
inline Var scale_rows(Var a, Var gate) {
  Tape& t = detail::same_tape(a, gate);
  const Array& A = t.value(a);
  const Array& g = t.value(gate);
  const std::size_t rows = A.rows(), cols = A.cols();
  if (g.size() != rows) {
    throw DimensionError("scale_rows: gate " + shape_string(g.shape()) + " does not match rows of " +
                         shape_string(A.shape()));
  }
  Array out = A;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= g[r];
  return t.record(std::move(out), {a.id, gate.id}, [rows, cols](Tape& tp, std::size_t self) {
    const std::size_t ia = tp.inputs(self)[0], ig = tp.inputs(self)[1];
    if (tp.requires_grad(ia)) {
      const Array& G = tp.grad_buffer(self);
      const Array& gv = tp.value(ig);
      Array& d = tp.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += G[r * cols + c] * gv[r];
    }
    if (tp.requires_grad(ig)) {
      const Array& G = tp.grad_buffer(self);
      const Array& Av = tp.value(ia);
      Array& d = tp.grad_buffer(ig);
      for (std::size_t r = 0; r < rows; ++r) {
        real acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += G[r * cols + c] * Av[r * cols + c];
        d[r] += acc;
      }
    }
  });
}

/// Softmax along the last axis, computed with max-subtraction.
inline Var softmax(Var a) {
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  if (cols == 0) throw DimensionError("softmax of empty input " + shape_string(A.shape()));
  Array out = A;
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<real> row = out.data().subspan(r * cols, cols);
    const real mx = *std::max_element(row.begin(), row.end());
    real total = 0;
    for (real& x : row) total += (x = std::exp(x - mx));
    for (real& x : row) x /= total;
  }
  return t.record(std::move(out), {a.id}, [rows, cols](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    const Array& Y = tp.value(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += G[r * cols + c] * Y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        d[r * cols + c] += Y[r * cols + c] * (G[r * cols + c] - dot);
    }
  });
}

/// Row-wise x / sqrt(|x|^2 + epsilon); a zero row stays zero.
inline Var l2_normalize(Var a, real epsilon) {
  if (!(epsilon > 0)) throw ContractError("l2_normalize requires epsilon > 0");
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Array out = A;
  std::vector<real> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += A[r * cols + c] * A[r * cols + c];
    norms[r] = std::sqrt(s + epsilon);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= norms[r];
  }
  return t.record(std::move(out), {a.id},
                  [rows, cols, norms = std::move(norms)](Tape& tp, std::size_t self) {
                    const std::size_t in = tp.inputs(self)[0];
                    const Array& G = tp.grad_buffer(self);
                    const Array& X = tp.value(in);
                    Array& d = tp.grad_buffer(in);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const real n = norms[r];
                      real xg = 0;
                      for (std::size_t c = 0; c < cols; ++c) xg += X[r * cols + c] * G[r * cols + c];
                      const real k = xg / (n * n * n);
                      for (std::size_t c = 0; c < cols; ++c)
                        d[r * cols + c] += G[r * cols + c] / n - X[r * cols + c] * k;
                    }
                  });
}

// Sum across the last axis; result is [rows x 1].
inline Var row_sum(Var a) {
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Array out = Array::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += A[r * cols + c];
    out[r] = s;
  }
  return t.record(std::move(out), {a.id}, [rows, cols](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += G[r];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Tape& t = *a.tape;
  real s = 0;
  for (real x : t.value(a).data()) s += x;
  return t.record(Array::scalar(s), {a.id}, [](Tape& tp, std::size_t self) {
    const real g = tp.grad_buffer(self)[0];
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (real& x : d.data()) x += g;
  });
}

inline Var sum_squares(Var a) {
  Tape& t = *a.tape;
  return t.record(Array::scalar(squared_norm(t.value(a))), {a.id}, [](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const real g = tp.grad_buffer(self)[0];
    const Array& X = tp.value(in);
    Array& d = tp.grad_buffer(in);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2 * g * X[i];
  });
}

// ---------------------------------------------------------------------------
// Structural

// Columns [begin, end) of every row, as a [rows x (end - begin)] matrix.
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(A.shape()));
  }
  const std::size_t w = end - begin;
  Array out = Array::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = A[r * cols + begin + c];
  return t.record(std::move(out), {a.id}, [rows, cols, begin, w](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) d[r * cols + begin + c] += G(r, c);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Tape& t = *parts[0].tape;
  const std::size_t rows = t.value(parts[0]).rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (Var p : parts) {
    detail::same_tape(parts[0], p);
    const Array& v = t.value(p);
    if (v.rows() != rows) {
      throw DimensionError("concat_cols: row count mismatch " + shape_string(t.value(parts[0]).shape()) +
                           " vs " + shape_string(v.shape()));
    }
    widths.push_back(v.cols());
    ids.push_back(p.id);
    total += v.cols();
  }
  Array out = Array::matrix(rows, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& v = t.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out(r, off + c) = v[r * widths[k] + c];
    off += widths[k];
  }
  return t.record(std::move(out), std::move(ids), [rows, total, widths](Tape& tp, std::size_t self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t in = tp.inputs(self)[k];
      if (tp.requires_grad(in)) {
        const Array& G = tp.grad_buffer(self);
        Array& d = tp.grad_buffer(in);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] += G[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

// Rows of `a` selected by `indices` (repeats allowed).
inline Var gather_rows(Var a, std::span<const index_t> indices) {
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Array out = Array::matrix(indices.size(), cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw ContractError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                          shape_string(A.shape()));
    }
    std::copy_n(&A[indices[r] * cols], cols, &out(r, 0));
  }
  std::vector<index_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {a.id}, [cols, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) d[idx[r] * cols + c] += G(r, c);
  });
}

/// Sparse neighbor aggregation: row r of the result is the sum (or mean, when
/// `mean` is set) of the rows of `a` listed in pattern row r. Rows with no
/// entries are zero.
inline Var spmm(std::shared_ptr<const SparsePattern> pattern, Var a, bool mean = false) {
  Tape& t = *a.tape;
  const Array& A = t.value(a);
  detail::require_rank2(A, "spmm");
  if (pattern->num_cols != A.rows()) {
    throw DimensionError("spmm: pattern has " + std::to_string(pattern->num_cols) +
                         " columns but operand is " + shape_string(A.shape()));
  }
  const std::size_t n = pattern->num_rows(), cols = A.cols();
  Array out = Array::matrix(n, cols);
  parallel_for(0, n, detail::kRowBlock, [&](std::size_t r) {
    const auto nb = pattern->row(r);
    real* o = &out(r, 0);
    for (index_t j : nb) {
      const real* src = &A(j, 0);
      for (std::size_t c = 0; c < cols; ++c) o[c] += src[c];
    }
    if (mean && !nb.empty()) {
      const real inv = real(1) / static_cast<real>(nb.size());
      for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
    }
  });
  return t.record(std::move(out), {a.id}, [pattern, cols, mean](Tape& tp, std::size_t self) {
    const Array& G = tp.grad_buffer(self);
    Array& d = tp.grad_buffer(tp.inputs(self)[0]);
    for (std::size_t r = 0; r < pattern->num_rows(); ++r) {
      const auto nb = pattern->row(r);
      const real w = mean && !nb.empty() ? real(1) / static_cast<real>(nb.size()) : real(1);
      const real* g = &G(r, 0);
      for (index_t j : nb) {
        real* dst = &d(j, 0);
        for (std::size_t c = 0; c < cols; ++c) dst[c] += w * g[c];
      }
    }
  });
}

}  // namespace mbrec
