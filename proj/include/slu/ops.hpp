#pragma once

// Differentiable primitives over Tape. Shapes are checked eagerly; the only
// broadcast accepted anywhere is a bias row added to every row of a matrix.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "slu/tape.hpp"

namespace slu::nd {

namespace kernel {

// c[M×N] += a[M×K] · b[K×N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[M×N] += a[M×K] · b[N×K]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[K×N] += a[M×K]ᵀ · b[M×N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() > 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> same_shape(const Tensor<T>& like) {
  return Tensor<T>(like.shape());
}

}  // namespace detail

/// a[M×K] · b[K×N]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor<T> out({m, n});
  kernel::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id, m, k, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      kernel::gemm_nt(g.data(), t.value(b).data(), t.accumulator(a).data(), m, n, k);
    }
    if (t.requires_grad(b)) {
      kernel::gemm_tn(t.value(a).data(), g.data(), t.accumulator(b).data(), m, k, n);
    }
  });
}

/// a[M×K] · b[N×K]ᵀ, for weights stored out × in.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av, "matmul_nt");
  detail::require_matrix(bv, "matmul_nt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ: " + shape_str(av.shape()) +
                         " x " + shape_str(bv.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  kernel::gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id, m, k, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      kernel::gemm_nn(g.data(), t.value(b).data(), t.accumulator(a).data(), m, n, k);
    }
    if (t.requires_grad(b)) {
      kernel::gemm_tn(g.data(), t.value(a).data(), t.accumulator(b).data(), m, n, k);
    }
  });
}

/// Elementwise sum. b may also be a bias row (shape [N] or [1×N]) added to
/// every row of a[M×N].
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
      const auto& g = t.upstream(self);
      for (auto id : {a, b}) {
        if (!t.requires_grad(id)) continue;
        auto& acc = t.accumulator(id);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
      }
    });
  }
  const bool bias = av.rank() == 2 && (bv.rank() == 1 || (bv.rank() == 2 && bv.rows() == 1)) &&
                    bv.size() == av.cols();
  if (!bias) {
    throw DimensionError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out = av;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  }
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id, m, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      auto& acc = t.accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& acc = t.accumulator(b);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
      }
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_same(av, bv, "sub");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      auto& acc = t.accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& acc = t.accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
    }
  });
}

/// Hadamard product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_same(av, bv, "mul");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      auto& acc = t.accumulator(a);
      const auto& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto& acc = t.accumulator(b);
      const auto& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

/// scale * a + shift, elementwise with scalar constants.
template <typename T>
Var<T> affine(Var<T> a, T scale, T shift = T{0}) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = scale * v + shift;
  return a.tape->record(std::move(out), {a}, [a = a.id, scale](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += scale * g[i];
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  // Split by sign so exp never overflows.
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(self);
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(self);
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * (T{1} - y[i] * y[i]);
  });
}

/// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (auto v : a.value().values()) s += v;
  return a.tape->record(Tensor<T>::scalar(s), {a}, [a = a.id](Tape<T>& t, std::size_t self) {
    const T g = t.upstream(self)[0];
    auto& acc = t.accumulator(a);
    for (auto& v : acc.values()) v += g;
  });
}

/// Σ a ⊙ w for a constant weight tensor w of the same shape.
template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& w) {
  detail::require_same(a.value(), w, "weighted_sum");
  T s{0};
  const auto& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * w[i];
  return a.tape->record(Tensor<T>::scalar(s), {a}, [a = a.id, w](Tape<T>& t, std::size_t self) {
    const T g = t.upstream(self)[0];
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g * w[i];
  });
}

/// Rows [begin, end) of a matrix.
template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& av = a.value();
  detail::require_matrix(av, "slice_rows");
  if (begin >= end || end > av.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside shape " + shape_str(av.shape()));
  }
  const std::size_t n = av.cols();
  Tensor<T> out({end - begin, n});
  std::copy(av.data() + begin * n, av.data() + end * n, out.data());
  return a.tape->record(std::move(out), {a}, [a = a.id, begin, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[begin * n + i] += g[i];
  });
}

/// Columns [begin, end) of a matrix.
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& av = a.value();
  detail::require_matrix(av, "slice_cols");
  if (begin >= end || end > av.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside shape " + shape_str(av.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols(), w = end - begin;
  Tensor<T> out({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(av.data() + i * n + begin, av.data() + i * n + end, out.data() + i * w);
  }
  return a.tape->record(std::move(out), {a}, [a = a.id, begin, m, n, w](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) acc[i * n + begin + j] += g[i * w + j];
    }
  });
}

/// [a | b] for matrices with equal row counts.
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av, "concat_cols");
  detail::require_matrix(bv, "concat_cols");
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts differ: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), na = av.cols(), nb = bv.cols();
  Tensor<T> out({m, na + nb});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(av.data() + i * na, av.data() + (i + 1) * na, out.data() + i * (na + nb));
    std::copy(bv.data() + i * nb, bv.data() + (i + 1) * nb, out.data() + i * (na + nb) + na);
  }
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id, m, na, nb](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const std::size_t n = na + nb;
    if (t.requires_grad(a)) {
      auto& acc = t.accumulator(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) acc[i * na + j] += g[i * n + j];
    }
    if (t.requires_grad(b)) {
      auto& acc = t.accumulator(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) acc[i * nb + j] += g[i * n + na + j];
    }
  });
}

/// Vertical concatenation of matrices (or rows) with equal column counts.
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    detail::require_matrix(pv, "concat_rows");
    if (pv.cols() != n) {
      throw DimensionError("concat_rows: column counts differ: " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(pv.shape()));
    }
    ids.push_back(p.id);
    offsets.push_back(m * n);
    m += pv.rows();
  }
  Tensor<T> out({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    std::copy(pv.data(), pv.data() + pv.size(), out.data() + offsets[k]);
  }
  return parts[0].tape->record(std::move(out), parts, [ids, offsets](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& acc = t.accumulator(ids[k]);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[offsets[k] + i];
    }
  });
}

/// Rows of a selected by index (repeats allowed); gradients scatter-add back.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> index) {
  const auto& av = a.value();
  detail::require_matrix(av, "gather_rows");
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  const std::size_t n = av.cols();
  Tensor<T> out({index.size(), n});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(index[i]) + " outside shape " +
                           shape_str(av.shape()));
    }
    std::copy(av.data() + index[i] * n, av.data() + (index[i] + 1) * n, out.data() + i * n);
  }
  return a.tape->record(std::move(out), {a}, [a = a.id, index = std::move(index), n](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& acc = t.accumulator(a);
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (std::size_t j = 0; j < n; ++j) acc[index[i] * n + j] += g[i * n + j];
    }
  });
}

/// Column-wise maximum over rows, as a 1×N row. The gradient of each column
/// goes to the first row attaining the maximum.
template <typename T>
Var<T> max_pool_rows(Var<T> a) {
  const auto& av = a.value();
  detail::require_matrix(av, "max_pool_rows");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out({1, n});
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t j = 0; j < n; ++j) out[j] = av(0, j);
  for (std::size_t i = 1; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (av(i, j) > out[j]) {
        out[j] = av(i, j);
        arg[j] = i;
      }
    }
  }
  return a.tape->record(std::move(out), {a}, [a = a.id, arg = std::move(arg), n](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& acc = t.accumulator(a);
    for (std::size_t j = 0; j < n; ++j) acc[arg[j] * n + j] += g[j];
  });
}

/// Row-wise softmax of a plain tensor (no tape), max-subtracted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p({logits.rows(), logits.cols()});
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto out = p.row(i);
    T mx = in[0];
    for (auto v : in) mx = std::max(mx, v);
    T s{0};
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      s += out[j];
    }
    for (auto& v : out) v /= s;
  }
  return p;
}

template <typename T>
struct SoftmaxXent {
  Var<T> loss;      // scalar mean cross-entropy
  Tensor<T> probs;  // B×K posteriors
};

/// Mean softmax cross-entropy over the rows of logits[B×K].
template <typename T>
SoftmaxXent<T> softmax_xent(Var<T> logits, std::span<const std::size_t> labels) {
  const auto& lv = logits.value();
  detail::require_matrix(lv, "softmax_xent");
  const std::size_t b = lv.rows(), k = lv.cols();
  if (k < 2) throw DimensionError("softmax_xent: need at least 2 classes, got " + std::to_string(k));
  if (labels.size() != b) {
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  T loss{0};
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) {
      throw DimensionError("softmax_xent: label " + std::to_string(labels[i]) +
                           " outside [0, " + std::to_string(k) + ")");
    }
    auto row = lv.row(i);
    T mx = row[0];
    for (auto v : row) mx = std::max(mx, v);
    T s{0};
    for (auto v : row) s += std::exp(v - mx);
    loss += std::log(s) - (row[labels[i]] - mx);
  }
  loss /= static_cast<T>(b);
  Tensor<T> probs = softmax_rows(lv);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  Var<T> out = logits.tape->record(Tensor<T>::scalar(loss), {logits},
      [l = logits.id, probs, lab = std::move(lab), b, k](Tape<T>& t, std::size_t self) {
        const T g = t.upstream(self)[0] / static_cast<T>(b);
        auto& acc = t.accumulator(l);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = j == lab[i] ? T{1} : T{0};
            acc[i * k + j] += g * (probs(i, j) - onehot);
          }
        }
      });
  return {out, std::move(probs)};
}

template <typename T>
struct BatchNormOut {
  Var<T> y;
  Tensor<T> mean;  // per-column batch mean
  Tensor<T> var;   // per-column biased batch variance
};

/// Training-mode batch normalisation of x[B×D] with batch statistics.
template <typename T>
BatchNormOut<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& xv = x.value();
  detail::require_matrix(xv, "batch_norm");
  const std::size_t b = xv.rows(), d = xv.cols();
  if (b < 2) throw DimensionError("batch_norm: training mode needs a batch of at least 2 rows");
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("batch_norm: scale/shift size does not match " + shape_str(xv.shape()));
  }
  Tensor<T> mean({d}), var({d}), xhat({b, d}), out({b, d}), inv_std({d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += xv(i, j);
  for (auto& m : mean.values()) m /= static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xv(i, j) - mean[j];
      var[j] += c * c;
    }
  for (auto& v : var.values()) v /= static_cast<T>(b);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = T{1} / std::sqrt(var[j] + eps);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  Var<T> y = x.tape->record(std::move(out), {x, gamma, beta},
      [x = x.id, g = gamma.id, be = beta.id, xhat = std::move(xhat), inv_std, b, d](Tape<T>& t, std::size_t self) {
        const auto& dy = t.upstream(self);
        std::vector<T> sum_dy(d, T{0}), sum_dy_xhat(d, T{0});
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            sum_dy[j] += dy(i, j);
            sum_dy_xhat[j] += dy(i, j) * xhat(i, j);
          }
        if (t.requires_grad(be)) {
          auto& acc = t.accumulator(be);
          for (std::size_t j = 0; j < d; ++j) acc[j] += sum_dy[j];
        }
        if (t.requires_grad(g)) {
          auto& acc = t.accumulator(g);
          for (std::size_t j = 0; j < d; ++j) acc[j] += sum_dy_xhat[j];
        }
        if (t.requires_grad(x)) {
          const auto& gv = t.value(g);
          auto& acc = t.accumulator(x);
          const T nb = static_cast<T>(b);
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              acc[i * d + j] += gv[j] * inv_std[j] / nb *
                                (nb * dy(i, j) - sum_dy[j] - xhat(i, j) * sum_dy_xhat[j]);
            }
        }
      });
  return {y, std::move(mean), std::move(var)};
}

/// Inference-mode batch normalisation with fixed statistics.
template <typename T>
Var<T> batch_norm_infer(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& mean,
                        const Tensor<T>& var, T eps) {
  const auto& xv = x.value();
  detail::require_matrix(xv, "batch_norm");
  const std::size_t b = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d || mean.size() != d || var.size() != d) {
    throw DimensionError("batch_norm: statistics size does not match " + shape_str(xv.shape()));
  }
  Tensor<T> inv_std({d}), xhat({b, d}), out({b, d});
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = T{1} / std::sqrt(var[j] + eps);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  return x.tape->record(std::move(out), {x, gamma, beta},
      [x = x.id, g = gamma.id, be = beta.id, xhat = std::move(xhat), inv_std, b, d](Tape<T>& t, std::size_t self) {
        const auto& dy = t.upstream(self);
        const auto& gv = t.value(g);
        if (t.requires_grad(x)) {
          auto& acc = t.accumulator(x);
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) acc[i * d + j] += dy(i, j) * gv[j] * inv_std[j];
        }
        if (t.requires_grad(g)) {
          auto& acc = t.accumulator(g);
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) acc[j] += dy(i, j) * xhat(i, j);
        }
        if (t.requires_grad(be)) {
          auto& acc = t.accumulator(be);
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) acc[j] += dy(i, j);
        }
      });
}

}  // namespace slu::nd
