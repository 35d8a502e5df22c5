#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "oadis/errors.hpp"
#include "oadis/rng.hpp"
#include "oadis/tensor.hpp"

namespace oadis {

enum class Axis { kRow, kCol };

namespace detail {

template <typename S>
bool want_grad(const TapeT<S>& tape, TensorT<S>a) {
  return tape.recording() && a.requires_grad();
}

template <typename S>
bool want_grad(const TapeT<S>& tape, TensorT<S>a, TensorT<S>b) {
  return tape.recording() && (a.requires_grad() || b.requires_grad());
}

template <typename S>
void check_same_shape(const char* op, TensorT<S>a, TensorT<S>b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename S>
void check_finite(const char* op, TensorT<S>a) {
  for (const S v : a.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + ": non-finite input value");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(TapeT<S>& tape, TensorT<S>a, TensorT<S>b) {
  detail::check_same_shape("add", a, b);
  auto out = TensorT<S>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
  if (detail::want_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape.push([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> sub(TapeT<S>& tape, TensorT<S>a, TensorT<S>b) {
  detail::check_same_shape("sub", a, b);
  auto out = TensorT<S>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) - b.at(i);
  if (detail::want_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape.push([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> mul(TapeT<S>& tape, TensorT<S>a, TensorT<S>b) {
  detail::check_same_shape("mul", a, b);
  auto out = TensorT<S>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (detail::want_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape.push([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> scale(TapeT<S>& tape, TensorT<S>a, S c) {
  auto out = TensorT<S>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * c;
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, c]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <typename S>
TensorT<S> negate(TapeT<S>& tape, TensorT<S>a) {
  return scale(tape, a, S(-1));
}

template <typename S>
TensorT<S> relu(TapeT<S>& tape, TensorT<S>a) {
  auto out = TensorT<S>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.at(i) = a.at(i) > S(0) ? a.at(i) : S(0);
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.at(i) > S(0)) ga[i] += g[i];
    });
  }
  return out;
}

// Inverted dropout: train scales kept entries by 1/(1-p), eval is identity.
template <typename S>
TensorT<S> dropout(TapeT<S>& tape, TensorT<S>a, S p, bool train,
                   Rng& rng) {
  if (!(p >= S(0) && p < S(1))) {
    throw ContractError("dropout: probability must be in [0,1), got " +
                        std::to_string(static_cast<double>(p)));
  }
  if (!train || p == S(0)) return a;
  const S keep_scale = S(1) / (S(1) - p);
  auto mask = std::make_shared<std::vector<S>>(a.numel());
  auto out = TensorT<S>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const bool keep = rng.uniform() >= static_cast<double>(p);
    (*mask)[i] = keep ? keep_scale : S(0);
    out.at(i) = a.at(i) * (*mask)[i];
  }
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, mask]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(TapeT<S>& tape, TensorT<S>a, TensorT<S>b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = TensorT<S>::zeros({m, n});
  const S* pa = a.data();
  const S* pb = b.data();
  S* pc = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const S av = pa[i * k + t];
      if (av == S(0)) continue;
      const S* brow = pb + t * n;
      S* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (detail::want_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape.push([a, b, out, m, k, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();  // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            S acc = 0;
            for (std::size_t j = 0; j < n; ++j)
              acc += g[i * n + j] * b.at(t, j);
            ga[i * k + t] += acc;
          }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();  // dB = A^T * G
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < n; ++j) {
            S acc = 0;
            for (std::size_t i = 0; i < m; ++i)
              acc += a.at(i, t) * g[i * n + j];
            gb[t * n + j] += acc;
          }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> matvec(TapeT<S>& tape, TensorT<S>a, TensorT<S>x) {
  if (a.rank() != 2 || x.rank() != 1 || a.cols() != x.numel()) {
    throw DimensionError("matvec: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(x.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols();
  auto out = TensorT<S>::zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    S acc = 0;
    const S* row = a.data() + i * k;
    for (std::size_t t = 0; t < k; ++t) acc += row[t] * x.at(t);
    out.at(i) = acc;
  }
  if (detail::want_grad(tape, a, x)) {
    out.set_requires_grad(true);
    tape.push([a, x, out, m, k]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) ga[i * k + t] += g[i] * x.at(t);
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) gx[t] += a.at(i, t) * g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> transpose(TapeT<S>& tape, TensorT<S>a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose: expected matrix, got " +
                         shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  auto out = TensorT<S>::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, m, n]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// X[m x n] + b[m] broadcast over columns.
template <typename S>
TensorT<S> add_col_bias(TapeT<S>& tape, TensorT<S>x,
                        TensorT<S>b) {
  if (x.rank() != 2 || b.rank() != 1 || b.numel() != x.rows()) {
    throw DimensionError("add_col_bias: incompatible shapes " +
                         shape_str(x.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  auto out = TensorT<S>::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + b.at(i);
  if (detail::want_grad(tape, x, b)) {
    out.set_requires_grad(true);
    tape.push([x, b, out, m, n]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[i] += g[i * n + j];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> dot(TapeT<S>& tape, TensorT<S>a, TensorT<S>b) {
  detail::check_same_shape("dot", a, b);
  S acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i) * b.at(i);
  auto out = TensorT<S>::scalar(acc);
  if (detail::want_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape.push([a, b, out]() mutable {
      const S g = out.grad()[0];
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * b.at(i);
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * a.at(i);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shaping
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum_all(TapeT<S>& tape, TensorT<S>a) {
  S acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i);
  auto out = TensorT<S>::scalar(acc);
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out]() mutable {
      const S g = out.grad()[0];
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename S>
TensorT<S> col_sum(TapeT<S>& tape, TensorT<S>a) {
  if (a.rank() != 2) {
    throw DimensionError("col_sum: expected matrix, got " +
                         shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  auto out = TensorT<S>::zeros({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j) += a.at(i, j);
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, m, n]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j];
    });
  }
  return out;
}

template <typename S>
TensorT<S> row_sum(TapeT<S>& tape, TensorT<S>a) {
  if (a.rank() != 2) {
    throw DimensionError("row_sum: expected matrix, got " +
                         shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  auto out = TensorT<S>::zeros({m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i) += a.at(i, j);
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, m, n]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
    });
  }
  return out;
}

// Mean over columns: [m x n] -> [m].
template <typename S>
TensorT<S> avgpool_cols(TapeT<S>& tape, TensorT<S>a) {
  if (a.rank() != 2) {
    throw DimensionError("avgpool_cols: expected matrix, got " +
                         shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  const S inv = S(1) / static_cast<S>(n);
  auto out = TensorT<S>::zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    S acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += a.at(i, j);
    out.at(i) = acc * inv;
  }
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, m, n, inv]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * inv;
    });
  }
  return out;
}

template <typename S>
TensorT<S> concat(TapeT<S>& tape, std::vector<TensorT<S>> parts) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != 1) {
      throw DimensionError("concat: expected vectors, got " +
                           shape_str(p.shape()));
    }
    total += p.numel();
    any_grad = any_grad || p.requires_grad();
  }
  auto out = TensorT<S>::zeros({total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.numel(); ++i) out.at(off + i) = p.at(i);
    off += p.numel();
  }
  if (tape.recording() && any_grad) {
    out.set_requires_grad(true);
    tape.push([parts, out]() mutable {
      const auto& g = out.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

// Stack K same-length vectors as the columns of a [d x K] matrix.
template <typename S>
TensorT<S> stack_cols(TapeT<S>& tape, std::vector<TensorT<S>> cols) {
  if (cols.empty()) throw ContractError("stack_cols: empty input list");
  const std::size_t d = cols[0].numel();
  bool any_grad = false;
  for (const auto& c : cols) {
    if (c.rank() != 1 || c.numel() != d) {
      throw DimensionError("stack_cols: column shape mismatch " +
                           shape_str(c.shape()));
    }
    any_grad = any_grad || c.requires_grad();
  }
  const std::size_t k = cols.size();
  auto out = TensorT<S>::zeros({d, k});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) out.at(i, j) = cols[j].at(i);
  if (tape.recording() && any_grad) {
    out.set_requires_grad(true);
    tape.push([cols, out, d, k]() mutable {
      const auto& g = out.grad();
      for (std::size_t j = 0; j < k; ++j) {
        if (!cols[j].requires_grad()) continue;
        auto& gc = cols[j].grad();
        for (std::size_t i = 0; i < d; ++i) gc[i] += g[i * k + j];
      }
    });
  }
  return out;
}

// Row lookup into an embedding table [V x d].
template <typename S>
TensorT<S> lookup_row(TapeT<S>& tape, TensorT<S>table,
                      std::size_t row) {
  if (table.rank() != 2) {
    throw DimensionError("lookup_row: expected matrix, got " +
                         shape_str(table.shape()));
  }
  if (row >= table.rows()) {
    throw VocabError("lookup_row: index " + std::to_string(row) +
                     " out of range for table " + shape_str(table.shape()));
  }
  const std::size_t d = table.cols();
  auto out = TensorT<S>::zeros({d});
  for (std::size_t i = 0; i < d; ++i) out.at(i) = table.at(row, i);
  if (detail::want_grad(tape, table)) {
    out.set_requires_grad(true);
    tape.push([table, out, row, d]() mutable {
      const auto& g = out.grad();
      auto& gt = table.grad();
      for (std::size_t i = 0; i < d; ++i) gt[row * d + i] += g[i];
    });
  }
  return out;
}

// Gather rows of a [V x d] table into the columns of a [d x K] matrix.
// Duplicate indices accumulate gradient as expected.
template <typename S>
TensorT<S> gather_cols(TapeT<S>& tape, TensorT<S>table,
                       std::vector<std::size_t> rows) {
  if (table.rank() != 2) {
    throw DimensionError("gather_cols: expected matrix, got " +
                         shape_str(table.shape()));
  }
  if (rows.empty()) throw ContractError("gather_cols: empty index list");
  for (std::size_t r : rows) {
    if (r >= table.rows()) {
      throw VocabError("gather_cols: index " + std::to_string(r) +
                       " out of range for table " + shape_str(table.shape()));
    }
  }
  const std::size_t d = table.cols(), k = rows.size();
  auto out = TensorT<S>::zeros({d, k});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) out.at(i, j) = table.at(rows[j], i);
  if (detail::want_grad(tape, table)) {
    out.set_requires_grad(true);
    tape.push([table, out, rows, d, k]() mutable {
      const auto& g = out.grad();
      auto& gt = table.grad();
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < d; ++i)
          gt[rows[j] * d + i] += g[i * k + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and softmax
// ---------------------------------------------------------------------------

inline constexpr double kNormEpsilon = 1e-8;

namespace detail {

template <typename S>
void l2_normalize_slice(const S* x, S* y, std::size_t len, std::size_t stride,
                        S& norm_out) {
  S sq = 0;
  for (std::size_t i = 0; i < len; ++i) sq += x[i * stride] * x[i * stride];
  const S norm = std::sqrt(sq);
  if (!(norm > static_cast<S>(kNormEpsilon))) {
    throw DegenerateVectorError(
        "l2_normalize: near-zero slice (norm=" +
        std::to_string(static_cast<double>(norm)) + ")");
  }
  for (std::size_t i = 0; i < len; ++i) y[i * stride] = x[i * stride] / norm;
  norm_out = norm;
}

}  // namespace detail

// Unit-normalizes a vector, or each column of a matrix. Near-zero slices are
// an error rather than being epsilon-padded.
template <typename S>
TensorT<S> l2_normalize(TapeT<S>& tape, TensorT<S>a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw DimensionError("l2_normalize: expected vector or matrix, got " +
                         shape_str(a.shape()));
  }
  auto out = TensorT<S>::zeros(a.shape());
  const std::size_t slices = a.rank() == 1 ? 1 : a.cols();
  const std::size_t len = a.rank() == 1 ? a.numel() : a.rows();
  const std::size_t stride = a.rank() == 1 ? 1 : a.cols();
  auto norms = std::make_shared<std::vector<S>>(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    detail::l2_normalize_slice(a.data() + s, out.data() + s, len, stride,
                               (*norms)[s]);
  }
  if (detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, norms, slices, len, stride]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t s = 0; s < slices; ++s) {
        S ydotg = 0;
        for (std::size_t i = 0; i < len; ++i)
          ydotg += out.at(i * stride + s) * g[i * stride + s];
        const S inv = S(1) / (*norms)[s];
        for (std::size_t i = 0; i < len; ++i) {
          ga[i * stride + s] +=
              (g[i * stride + s] - out.at(i * stride + s) * ydotg) * inv;
        }
      }
    });
  }
  return out;
}

// Softmax of lambda * x along rows or columns, max-stabilized. lambda = 0 is
// the uniform-output debug mode used by test utilities; training configs
// validate lambda > 0 before getting here.
template <typename S>
TensorT<S> scaled_softmax(TapeT<S>& tape, TensorT<S>a, Axis axis,
                          S lambda) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw DimensionError("scaled_softmax: expected vector or matrix, got " +
                         shape_str(a.shape()));
  }
  if (lambda < S(0)) {
    throw ContractError("scaled_softmax: negative temperature parameter");
  }
  detail::check_finite("scaled_softmax", a);
  auto out = TensorT<S>::zeros(a.shape());

  const bool row_wise = a.rank() == 1 || axis == Axis::kRow;
  const std::size_t slices =
      a.rank() == 1 ? 1 : (row_wise ? a.rows() : a.cols());
  const std::size_t len = a.rank() == 1 ? a.numel() : (row_wise ? a.cols() : a.rows());
  const std::size_t sstep = a.rank() == 1 ? 0 : (row_wise ? a.cols() : 1);
  const std::size_t estep = a.rank() == 1 ? 1 : (row_wise ? 1 : a.cols());

  for (std::size_t s = 0; s < slices; ++s) {
    const S* x = a.data() + s * sstep;
    S* y = out.data() + s * sstep;
    if (lambda == S(0)) {
      const S u = S(1) / static_cast<S>(len);
      for (std::size_t i = 0; i < len; ++i) y[i * estep] = u;
      continue;
    }
    S mx = x[0];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x[i * estep]);
    S denom = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const S e = std::exp(lambda * (x[i * estep] - mx));
      y[i * estep] = e;
      denom += e;
    }
    for (std::size_t i = 0; i < len; ++i) y[i * estep] /= denom;
  }

  if (lambda > S(0) && detail::want_grad(tape, a)) {
    out.set_requires_grad(true);
    tape.push([a, out, lambda, slices, len, sstep, estep]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t s = 0; s < slices; ++s) {
        S dotp = 0;
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = s * sstep + i * estep;
          dotp += out.at(idx) * g[idx];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = s * sstep + i * estep;
          ga[idx] += lambda * out.at(idx) * (g[idx] - dotp);
        }
      }
    });
  }
  return out;
}

// Cross entropy of a logits vector against a target index:
// logsumexp(logits) - logits[target].
template <typename S>
TensorT<S> cross_entropy_index(TapeT<S>& tape, TensorT<S>logits,
                               std::size_t target) {
  if (logits.rank() != 1) {
    throw DimensionError("cross_entropy: expected logits vector, got " +
                         shape_str(logits.shape()));
  }
  if (target >= logits.numel()) {
    throw ContractError("cross_entropy: target " + std::to_string(target) +
                        " not in anchor set of size " +
                        std::to_string(logits.numel()));
  }
  detail::check_finite("cross_entropy", logits);
  const std::size_t n = logits.numel();
  S mx = logits.at(0);
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits.at(i));
  S denom = 0;
  for (std::size_t i = 0; i < n; ++i) denom += std::exp(logits.at(i) - mx);
  const S lse = mx + std::log(denom);
  auto out = TensorT<S>::scalar(lse - logits.at(target));
  if (detail::want_grad(tape, logits)) {
    out.set_requires_grad(true);
    auto probs = std::make_shared<std::vector<S>>(n);
    for (std::size_t i = 0; i < n; ++i)
      (*probs)[i] = std::exp(logits.at(i) - lse);
    tape.push([logits, out, probs, target, n]() mutable {
      const S g = out.grad()[0];
      auto& gl = logits.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gl[i] += g * ((*probs)[i] - (i == target ? S(1) : S(0)));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct LinearT {
  TensorT<S> w;  // [out x in]
  TensorT<S> b;  // [out]
};

// y = W x + b for vector x, or W X + b per column for matrix X.
template <typename S>
TensorT<S> linear(TapeT<S>& tape, const LinearT<S>& l, TensorT<S>x) {
  if (x.rank() == 1) {
    return add(tape, matvec(tape, l.w, x), l.b);
  }
  return add_col_bias(tape, matmul(tape, l.w, x), l.b);
}

// Per-channel normalization over the spatial positions of one [n x P]
// feature map. Training runs at batch size 1, so the batch statistics are the
// per-image spatial statistics; inference normalizes with the same per-image
// statistics the layers trained against (running-buffer inference collapses
// under the per-image variation). The running buffers are still maintained in
// train mode and persist in checkpoints as diagnostics.
template <typename S>
struct BatchNormT {
  TensorT<S> gamma;  // [n]
  TensorT<S> beta;   // [n]
  std::vector<S> running_mean;
  std::vector<S> running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
};

template <typename S>
TensorT<S> batch_norm(TapeT<S>& tape, BatchNormT<S>& bn, TensorT<S> x,
                      bool train) {
  if (x.rank() != 2 || x.rows() != bn.gamma.numel()) {
    throw DimensionError("batch_norm: input " + shape_str(x.shape()) +
                         " does not match " +
                         std::to_string(bn.gamma.numel()) + " channels");
  }
  const std::size_t n = x.rows(), p = x.cols();
  auto out = TensorT<S>::zeros({n, p});

  auto mean = std::make_shared<std::vector<S>>(n);
  auto var = std::make_shared<std::vector<S>>(n);
  auto xhat = std::make_shared<std::vector<S>>(n * p);
  const S invp = S(1) / static_cast<S>(p);
  for (std::size_t c = 0; c < n; ++c) {
    S mu = 0;
    for (std::size_t j = 0; j < p; ++j) mu += x.at(c, j);
    mu *= invp;
    S v = 0;
    for (std::size_t j = 0; j < p; ++j) {
      const S d = x.at(c, j) - mu;
      v += d * d;
    }
    v *= invp;  // biased variance
    (*mean)[c] = mu;
    (*var)[c] = v;
    const S inv = S(1) / std::sqrt(v + bn.eps);
    for (std::size_t j = 0; j < p; ++j) {
      const S xh = (x.at(c, j) - mu) * inv;
      (*xhat)[c * p + j] = xh;
      out.at(c, j) = bn.gamma.at(c) * xh + bn.beta.at(c);
    }
    if (train) {
      bn.running_mean[c] =
          (S(1) - bn.momentum) * bn.running_mean[c] + bn.momentum * mu;
      bn.running_var[c] =
          (S(1) - bn.momentum) * bn.running_var[c] + bn.momentum * v;
    }
  }

  if (detail::want_grad(tape, x, bn.gamma) ||
      detail::want_grad(tape, x, bn.beta)) {
    out.set_requires_grad(true);
    auto gamma = bn.gamma;
    auto beta = bn.beta;
    const S eps = bn.eps;
    tape.push([x, gamma, beta, out, mean, var, xhat, eps, n, p, invp]() mutable {
      const auto& g = out.grad();
      for (std::size_t c = 0; c < n; ++c) {
        const S inv = S(1) / std::sqrt((*var)[c] + eps);
        S sum_g = 0, sum_gx = 0;
        for (std::size_t j = 0; j < p; ++j) {
          sum_g += g[c * p + j];
          sum_gx += g[c * p + j] * (*xhat)[c * p + j];
        }
        if (gamma.requires_grad()) gamma.grad()[c] += sum_gx;
        if (beta.requires_grad()) beta.grad()[c] += sum_g;
        if (x.requires_grad()) {
          auto& gx = x.grad();
          const S gm = gamma.at(c);
          for (std::size_t j = 0; j < p; ++j) {
            const S gh = g[c * p + j] * gm;
            gx[c * p + j] += inv * (gh - invp * sum_g * gm -
                                    (*xhat)[c * p + j] * invp * sum_gx * gm);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace oadis
