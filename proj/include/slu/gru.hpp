#pragma once

// Gated recurrent unit, gate order (z, r, h̃):
//   z  = σ(W_z x + U_z h + b_z)
//   r  = σ(W_r x + U_r h + b_r)
//   h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//   h' = (1 − z) ⊙ h + z ⊙ h̃
// W is 3H×I, U is 3H×H, b is 3H, stacked in that gate order.

#include <cstddef>
#include <string>
#include <vector>

#include "slu/ops.hpp"
#include "slu/params.hpp"

namespace slu::nn {

template <typename T>
struct GruDirectionVars {
  Var<T> W, U, b;
};

/// One step built from tape primitives. x is 1×I, h_prev is 1×H.
template <typename T>
Var<T> gru_cell_step(Var<T> x, Var<T> h_prev, const GruDirectionVars<T>& p) {
  const std::size_t h = h_prev.value().cols();
  if (p.U.value().rows() != 3 * h || p.U.value().cols() != h || p.W.value().rows() != 3 * h ||
      p.W.value().cols() != x.value().cols() || p.b.value().size() != 3 * h) {
    throw DimensionError("gru_cell_step: parameters " + nd::shape_str(p.W.shape()) + ", " +
                         nd::shape_str(p.U.shape()) + " do not fit input " + nd::shape_str(x.shape()) +
                         " and state " + nd::shape_str(h_prev.shape()));
  }
  auto xw = nd::add(nd::matmul_nt(x, p.W), p.b);
  auto u_zr = nd::slice_rows(p.U, 0, 2 * h);
  auto u_h = nd::slice_rows(p.U, 2 * h, 3 * h);
  auto zr = nd::sigmoid(nd::add(nd::slice_cols(xw, 0, 2 * h), nd::matmul_nt(h_prev, u_zr)));
  auto z = nd::slice_cols(zr, 0, h);
  auto r = nd::slice_cols(zr, h, 2 * h);
  auto cand = nd::tanh(nd::add(nd::slice_cols(xw, 2 * h, 3 * h), nd::matmul_nt(nd::mul(r, h_prev), u_h)));
  return nd::add(h_prev, nd::mul(z, nd::sub(cand, h_prev)));
}

/// Fused recurrence over a precomputed input projection xw (T×3H, bias
/// included). Returns the T×H state sequence indexed by original time, scanning
/// t = 0..T−1, or T−1..0 when reverse. Initial state is zero. Backward is
/// truncation-free backpropagation through time.
template <typename T>
Var<T> gru_recurrence(Var<T> xw, Var<T> U, bool reverse) {
  const auto& xv = xw.value();
  const auto& uv = U.value();
  const std::size_t steps = xv.rows(), h = uv.cols();
  if (uv.rows() != 3 * h || xv.cols() != 3 * h) {
    throw DimensionError("gru_recurrence: projection " + nd::shape_str(xv.shape()) +
                         " does not fit recurrent weights " + nd::shape_str(uv.shape()));
  }
  // Per step (in time order): z, r, candidate.
  Tensor<T> gates({steps, 3 * h});
  Tensor<T> out({steps, h});
  std::vector<T> hprev(h, T{0}), hu(2 * h), rh(h);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const T* x = xv.data() + t * 3 * h;
    T* g = gates.data() + t * 3 * h;
    for (std::size_t j = 0; j < 2 * h; ++j) {
      const T* uj = uv.data() + j * h;
      T acc{0};
      for (std::size_t k = 0; k < h; ++k) acc += uj[k] * hprev[k];
      g[j] = nd::sigmoid_scalar(x[j] + acc);
    }
    for (std::size_t k = 0; k < h; ++k) rh[k] = g[h + k] * hprev[k];
    for (std::size_t j = 0; j < h; ++j) {
      const T* uj = uv.data() + (2 * h + j) * h;
      T acc{0};
      for (std::size_t k = 0; k < h; ++k) acc += uj[k] * rh[k];
      g[2 * h + j] = std::tanh(x[2 * h + j] + acc);
    }
    T* ho = out.data() + t * h;
    for (std::size_t k = 0; k < h; ++k) {
      ho[k] = hprev[k] + g[k] * (g[2 * h + k] - hprev[k]);
      hprev[k] = ho[k];
    }
  }
  return xw.tape->record(std::move(out), {xw, U},
      [xw = xw.id, U = U.id, gates = std::move(gates), steps, h, reverse](nd::Tape<T>& tape, std::size_t self) {
        const auto& dout = tape.upstream(self);
        const auto& hs = tape.value(self);
        const auto& uv = tape.value(U);
        const bool want_x = tape.requires_grad(xw);
        const bool want_u = tape.requires_grad(U);
        T* dx = want_x ? tape.accumulator(xw).data() : nullptr;
        T* du = want_u ? tape.accumulator(U).data() : nullptr;
        std::vector<T> dh(h, T{0}), dh_prev(h), da(3 * h), rh(h), drh(h), hp(h);
        for (std::size_t s = steps; s-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - s : s;
          const T* g = gates.data() + t * 3 * h;
          if (s == 0) {
            std::fill(hp.begin(), hp.end(), T{0});
          } else {
            const std::size_t tp = reverse ? t + 1 : t - 1;
            std::copy(hs.data() + tp * h, hs.data() + (tp + 1) * h, hp.begin());
          }
          for (std::size_t k = 0; k < h; ++k) dh[k] += dout[t * h + k];
          for (std::size_t k = 0; k < h; ++k) {
            const T z = g[k], c = g[2 * h + k];
            da[k] = dh[k] * (c - hp[k]) * z * (T{1} - z);   // update gate pre-activation
            da[2 * h + k] = dh[k] * z * (T{1} - c * c);     // candidate pre-activation
            dh_prev[k] = dh[k] * (T{1} - z);
            rh[k] = g[h + k] * hp[k];
          }
          std::fill(drh.begin(), drh.end(), T{0});
          for (std::size_t j = 0; j < h; ++j) {
            const T a = da[2 * h + j];
            const T* uj = uv.data() + (2 * h + j) * h;
            for (std::size_t k = 0; k < h; ++k) drh[k] += uj[k] * a;
            if (du) {
              T* duj = du + (2 * h + j) * h;
              for (std::size_t k = 0; k < h; ++k) duj[k] += a * rh[k];
            }
          }
          for (std::size_t k = 0; k < h; ++k) {
            const T r = g[h + k];
            da[h + k] = drh[k] * hp[k] * r * (T{1} - r);    // reset gate pre-activation
            dh_prev[k] += drh[k] * r;
          }
          for (std::size_t j = 0; j < 2 * h; ++j) {
            const T a = da[j];
            const T* uj = uv.data() + j * h;
            for (std::size_t k = 0; k < h; ++k) dh_prev[k] += uj[k] * a;
            if (du) {
              T* duj = du + j * h;
              for (std::size_t k = 0; k < h; ++k) duj[k] += a * hp[k];
            }
          }
          if (dx) {
            for (std::size_t j = 0; j < 3 * h; ++j) dx[t * 3 * h + j] += da[j];
          }
          dh.swap(dh_prev);
        }
      });
}

/// Full-sequence scan of one direction over x (T×I). Returns T×H states in
/// original time order.
template <typename T>
Var<T> gru_scan(Var<T> x, const GruDirectionVars<T>& p, bool reverse) {
  if (p.W.value().cols() != x.value().cols()) {
    throw DimensionError("gru_scan: input " + nd::shape_str(x.shape()) + " does not fit W " +
                         nd::shape_str(p.W.shape()));
  }
  auto xw = nd::add(nd::matmul_nt(x, p.W), p.b);
  return gru_recurrence(xw, p.U, reverse);
}

template <typename T>
struct BidirOutput {
  Var<T> output;      // T'×2H after subsampling
  Var<T> fwd_states;  // T×H
  Var<T> bwd_states;  // T×H
  Var<T> fwd_last;    // 1×H, forward state at t = T−1
  Var<T> bwd_first;   // 1×H, backward state at t = 0
};

inline std::size_t subsampled_length(std::size_t t, std::size_t stride) { return (t + stride - 1) / stride; }

/// Both directions over seq (T×I); the concatenated per-frame outputs keep
/// frames 0, stride, 2·stride, … so T' = ceil(T / stride).
template <typename T>
BidirOutput<T> bidir_layer_forward(Var<T> seq, const GruDirectionVars<T>& fwd, const GruDirectionVars<T>& bwd,
                                   std::size_t stride) {
  if (stride == 0) throw DimensionError("bidir_layer_forward: stride must be at least 1");
  const std::size_t steps = seq.value().rows();
  BidirOutput<T> out;
  out.fwd_states = gru_scan(seq, fwd, false);
  out.bwd_states = gru_scan(seq, bwd, true);
  out.fwd_last = nd::slice_rows(out.fwd_states, steps - 1, steps);
  out.bwd_first = nd::slice_rows(out.bwd_states, 0, 1);
  auto both = nd::concat_cols(out.fwd_states, out.bwd_states);
  if (stride == 1) {
    out.output = both;
  } else {
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < steps; t += stride) keep.push_back(t);
    out.output = nd::gather_rows(both, std::move(keep));
  }
  return out;
}

/// Adds W, U, b for one direction: U(±1/√H) init, zero bias.
template <typename T>
void add_gru_direction(ParamSet<T>& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                       std::mt19937_64& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  params.add(prefix + ".W", uniform_tensor<T>({3 * hidden, input}, limit, rng));
  params.add(prefix + ".U", uniform_tensor<T>({3 * hidden, hidden}, limit, rng));
  params.add(prefix + ".b", Tensor<T>({3 * hidden}));
}

template <typename T>
GruDirectionVars<T> direction_vars(const BoundParams<T>& bp, const std::string& prefix) {
  return {bp[prefix + ".W"], bp[prefix + ".U"], bp[prefix + ".b"]};
}

/// Scalar parameters of one GRU direction: 3·(I·H + H·H + H).
inline std::size_t gru_direction_param_count(std::size_t input, std::size_t hidden) {
  return 3 * (input * hidden + hidden * hidden + hidden);
}

}  // namespace slu::nn
