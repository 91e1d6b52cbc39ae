#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhunet/numeric/autograd.hpp"
#include "mhunet/numeric/linalg.hpp"
#include "mhunet/numeric/random.hpp"
#include "mhunet/numeric/tensor.hpp"

// Differentiable operations. Every function takes Vars and records a tape node when
// at least one input is tracked; with constant inputs they are plain evaluations.

namespace mhunet {

namespace detail {

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result("add", Tensor(a.shape(), std::move(out)), {&a, &b},
                             [](std::span<const real> g, ParentGrads& pg) {
                               for (auto& d : pg)
                                 if (!d.empty())
                                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                             });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result("sub", Tensor(a.shape(), std::move(out)), {&a, &b},
                             [](std::span<const real> g, ParentGrads& pg) {
                               if (!pg[0].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                               if (!pg[1].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[1][i] -= g[i];
                             });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor av = a.value(), bv = b.value();
  return detail::make_result("mul", Tensor(a.shape(), std::move(out)), {&a, &b},
                             [av, bv](std::span<const real> g, ParentGrads& pg) {
                               if (!pg[0].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * bv[i];
                               if (!pg[1].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[1][i] += g[i] * av[i];
                             });
}

inline Var scale(const Var& a, real s) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.data()[i];
  return detail::make_result("scale", Tensor(a.shape(), std::move(out)), {&a},
                             [s](std::span<const real> g, ParentGrads& pg) {
                               for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += s * g[i];
                             });
}

inline Var add_scalar(const Var& a, real s) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  return detail::make_result("add_scalar", Tensor(a.shape(), std::move(out)), {&a},
                             [](std::span<const real> g, ParentGrads& pg) {
                               for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                             });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var exponential(const Var& a) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  Tensor y(a.shape(), std::move(out));
  return detail::make_result("exp", y, {&a}, [y](std::span<const real> g, ParentGrads& pg) {
    for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * y[i];
  });
}

inline Var sum(const Var& a) {
  real s = 0;
  for (real v : a.data()) s += v;
  return detail::make_result("sum", Tensor::scalar(s), {&a},
                             [](std::span<const real> g, ParentGrads& pg) {
                               for (auto& d : pg[0]) d += g[0];
                             });
}

inline Var mean(const Var& a) { return scale(sum(a), real(1) / real(a.size())); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  return detail::make_result("reshape", a.value().reshaped(std::move(shape)), {&a},
                             [](std::span<const real> g, ParentGrads& pg) {
                               for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                             });
}

/// [m,n] -> [n,m]
inline Var transpose(const Var& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<real> out(m * n);
  auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
  return detail::make_result("transpose", Tensor(Shape{n, m}, std::move(out)), {&a},
                             [m, n](std::span<const real> g, ParentGrads& pg) {
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) pg[0][i * n + j] += g[j * m + i];
                             });
}

/// Row gather: out[r] = a[rows[r]] for a viewed as [a.shape[0], rest].
inline Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
  const std::size_t n_in = a.shape()[0];
  const std::size_t width = a.size() / n_in;
  for (auto r : rows)
    if (r >= n_in) throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range");
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  Shape shape = a.shape();
  shape[0] = rows.size();
  std::vector<real> out(rows.size() * width);
  auto d = a.data();
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(d.data() + rows[r] * width, width, out.data() + r * width);
  return detail::make_result(
      "gather_rows", Tensor(std::move(shape), std::move(out)), {&a},
      [rows = std::move(rows), width](std::span<const real> g, ParentGrads& pg) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
          real* dst = pg[0].data() + rows[r] * width;
          const real* src = g.data() + r * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
      });
}

/// Concatenation along axis 0; trailing extents must agree.
inline Var concat0(const Var& a, const Var& b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
    throw DimensionError("concat0: " + shape_str(sa) + " vs " + shape_str(sb));
  Shape out_shape = sa;
  out_shape[0] = sa[0] + sb[0];
  std::vector<real> out;
  out.reserve(a.size() + b.size());
  out.assign(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.size();
  return detail::make_result("concat0", Tensor(std::move(out_shape), std::move(out)), {&a, &b},
                             [na](std::span<const real> g, ParentGrads& pg) {
                               if (!pg[0].empty())
                                 for (std::size_t i = 0; i < na; ++i) pg[0][i] += g[i];
                               if (!pg[1].empty())
                                 for (std::size_t i = 0; i < pg[1].size(); ++i) pg[1][i] += g[na + i];
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<real> out(m * n, 0);
  kernels::gemm_acc(a.data(), b.data(), out, m, k, n);
  Tensor av = a.value(), bv = b.value();
  return detail::make_result("matmul", Tensor(Shape{m, n}, std::move(out)), {&a, &b},
                             [av, bv, m, k, n](std::span<const real> g, ParentGrads& pg) {
                               if (!pg[0].empty()) kernels::gemm_abt_acc(g, bv.data(), pg[0], m, n, k);
                               if (!pg[1].empty()) kernels::gemm_atb_acc(av.data(), g, pg[1], m, k, n);
                             });
}

/// x[..., C] + b[C], broadcast over leading axes.
inline Var add_bias_last(const Var& x, const Var& b) {
  const std::size_t c = x.shape().back();
  if (b.size() != c)
    throw DimensionError("add_bias_last: bias of " + std::to_string(b.size()) + " for width " +
                         std::to_string(c));
  std::vector<real> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % c];
  return detail::make_result("add_bias_last", Tensor(x.shape(), std::move(out)), {&x, &b},
                             [c](std::span<const real> g, ParentGrads& pg) {
                               if (!pg[0].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                               if (!pg[1].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[1][i % c] += g[i];
                             });
}

/// x[C, ...] + b[C], broadcast over trailing axes.
inline Var add_bias_channel(const Var& x, const Var& b) {
  const std::size_t c = x.shape()[0];
  if (b.size() != c)
    throw DimensionError("add_bias_channel: bias of " + std::to_string(b.size()) + " for " +
                         std::to_string(c) + " channels");
  const std::size_t inner = x.size() / c;
  std::vector<real> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i / inner];
  return detail::make_result("add_bias_channel", Tensor(x.shape(), std::move(out)), {&x, &b},
                             [inner](std::span<const real> g, ParentGrads& pg) {
                               if (!pg[0].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                               if (!pg[1].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) pg[1][i / inner] += g[i];
                             });
}

/// x[L, in] * W[in, out] (+ b[out]).
inline Var linear(const Var& x, const Var& w, const std::optional<Var>& b = std::nullopt) {
  Var y = matmul(x, w);
  return b ? add_bias_last(y, *b) : y;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation convention, no kernel flip)

struct Conv2dGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, stride, pad, h_out, w_out;
  bool depthwise;
};

inline Conv2dGeometry conv2d_geometry(const Shape& in, const Shape& weight, std::size_t stride,
                                      std::size_t pad, bool depthwise) {
  if (in.size() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(in));
  if (weight.size() != 4)
    throw DimensionError("conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(weight));
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  Conv2dGeometry g{in[0], in[1], in[2], weight[0], weight[2], weight[3], stride, pad, 0, 0, depthwise};
  if (depthwise) {
    if (weight[0] != in[0] || weight[1] != 1)
      throw DimensionError("conv2d: depthwise weight must be [C,1,kh,kw] with C=" +
                           std::to_string(in[0]) + ", got " + shape_str(weight));
  } else if (weight[1] != in[0]) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight[1]) +
                         " input channels, input has " + std::to_string(in[0]));
  }
  const std::size_t ph = g.h + 2 * pad, pw = g.w + 2 * pad;
  if (ph < g.kh || pw < g.kw) throw DimensionError("conv2d: kernel larger than padded input");
  if ((ph - g.kh) % stride != 0 || (pw - g.kw) % stride != 0)
    throw DimensionError("conv2d: output extent (H+2*pad-kh)/stride+1 is not an integer");
  g.h_out = (ph - g.kh) / stride + 1;
  g.w_out = (pw - g.kw) / stride + 1;
  return g;
}

namespace kernels {

// Visits every valid (output row, input row) and contiguous output column span for one tap.
template <class F>
inline void conv_tap_rows(const Conv2dGeometry& g, std::size_t ky, std::size_t kx, F&& f) {
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
  // ox valid when 0 <= ox*s + dx < W
  std::ptrdiff_t ox_lo = dx >= 0 ? 0 : (-dx + s - 1) / s;
  std::ptrdiff_t ox_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.w_out) - 1,
                                                  W - 1 - dx < 0 ? -1 : (W - 1 - dx) / s);
  if (ox_lo > ox_hi) return;
  for (std::size_t oy = 0; oy < g.h_out; ++oy) {
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(ky) - pad;
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
    f(oy, static_cast<std::size_t>(iy), static_cast<std::size_t>(ox_lo),
      static_cast<std::size_t>(ox_hi), dx);
  }
}

inline void conv2d_forward(const Conv2dGeometry& g, std::span<const real> in, std::span<const real> w,
                           std::span<real> out) {
  const std::size_t plane_in = g.h * g.w, plane_out = g.h_out * g.w_out;
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const std::size_t ci_lo = g.depthwise ? co : 0, ci_hi = g.depthwise ? co + 1 : g.c_in;
    for (std::size_t ci = ci_lo; ci < ci_hi; ++ci) {
      const std::size_t wc = g.depthwise ? 0 : ci;
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const real wv = w[((co * (g.depthwise ? 1 : g.c_in) + wc) * g.kh + ky) * g.kw + kx];
          if (wv == 0) continue;
          conv_tap_rows(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi,
                                       std::ptrdiff_t dx) {
            real* orow = out.data() + co * plane_out + oy * g.w_out;
            const real* irow = in.data() + ci * plane_in + iy * g.w;
            for (std::size_t ox = lo; ox <= hi; ++ox)
              orow[ox] += wv * irow[static_cast<std::ptrdiff_t>(ox * g.stride) + dx];
          });
        }
    }
  }
}

inline void conv2d_backward(const Conv2dGeometry& g, std::span<const real> in, std::span<const real> w,
                            std::span<const real> gout, std::span<real> gin, std::span<real> gw) {
  const std::size_t plane_in = g.h * g.w, plane_out = g.h_out * g.w_out;
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const std::size_t ci_lo = g.depthwise ? co : 0, ci_hi = g.depthwise ? co + 1 : g.c_in;
    for (std::size_t ci = ci_lo; ci < ci_hi; ++ci) {
      const std::size_t wc = g.depthwise ? 0 : ci;
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::size_t widx = ((co * (g.depthwise ? 1 : g.c_in) + wc) * g.kh + ky) * g.kw + kx;
          const real wv = w[widx];
          real wacc = 0;
          conv_tap_rows(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi,
                                       std::ptrdiff_t dx) {
            const real* grow = gout.data() + co * plane_out + oy * g.w_out;
            const real* irow = in.data() + ci * plane_in + iy * g.w;
            if (!gin.empty()) {
              real* girow = gin.data() + ci * plane_in + iy * g.w;
              for (std::size_t ox = lo; ox <= hi; ++ox)
                girow[static_cast<std::ptrdiff_t>(ox * g.stride) + dx] += wv * grow[ox];
            }
            if (!gw.empty())
              for (std::size_t ox = lo; ox <= hi; ++ox)
                wacc += grow[ox] * irow[static_cast<std::ptrdiff_t>(ox * g.stride) + dx];
          });
          if (!gw.empty()) gw[widx] += wacc;
        }
    }
  }
}

}  // namespace kernels

/// input[C_in,H,W], weight[C_out,C_in,kh,kw] (or [C,1,kh,kw] when depthwise).
inline Var conv2d(const Var& input, const Var& weight, std::size_t stride = 1, std::size_t pad = 0,
                  bool depthwise = false) {
  const Conv2dGeometry g = conv2d_geometry(input.shape(), weight.shape(), stride, pad, depthwise);
  std::vector<real> out(g.c_out * g.h_out * g.w_out, 0);
  kernels::conv2d_forward(g, input.data(), weight.data(), out);
  Tensor iv = input.value(), wv = weight.value();
  return detail::make_result("conv2d", Tensor(Shape{g.c_out, g.h_out, g.w_out}, std::move(out)),
                             {&input, &weight},
                             [g, iv, wv](std::span<const real> gout, ParentGrads& pg) {
                               kernels::conv2d_backward(g, iv.data(), wv.data(), gout, pg[0], pg[1]);
                             });
}

/// input[C_in,H,W], weight[C_in,C_out,s,s] with kernel == stride (non-overlapping taps);
/// output [C_out, H*s, W*s].
inline Var conv2d_transposed(const Var& input, const Var& weight, std::size_t stride) {
  detail::require_rank("conv2d_transposed", input, 3);
  detail::require_rank("conv2d_transposed", weight, 4);
  const auto& ws = weight.shape();
  if (stride == 0 || ws[2] != stride || ws[3] != stride)
    throw ConfigError("conv2d_transposed: kernel " + std::to_string(ws[2]) + "x" +
                      std::to_string(ws[3]) + " must equal stride " + std::to_string(stride));
  const std::size_t ci_n = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (ws[0] != ci_n)
    throw DimensionError("conv2d_transposed: weight expects " + std::to_string(ws[0]) +
                         " input channels, input has " + std::to_string(ci_n));
  const std::size_t co_n = ws[1], s = stride, ho = h * s, wo = w * s;
  std::vector<real> out(co_n * ho * wo, 0);
  auto in = input.data();
  auto wt = weight.data();
  for (std::size_t ci = 0; ci < ci_n; ++ci)
    for (std::size_t co = 0; co < co_n; ++co)
      for (std::size_t ky = 0; ky < s; ++ky)
        for (std::size_t kx = 0; kx < s; ++kx) {
          const real wv = wt[((ci * co_n + co) * s + ky) * s + kx];
          if (wv == 0) continue;
          for (std::size_t y = 0; y < h; ++y) {
            real* orow = out.data() + (co * ho + y * s + ky) * wo + kx;
            const real* irow = in.data() + (ci * h + y) * w;
            for (std::size_t x = 0; x < w; ++x) orow[x * s] += wv * irow[x];
          }
        }
  Tensor iv = input.value(), wv = weight.value();
  return detail::make_result(
      "conv2d_transposed", Tensor(Shape{co_n, ho, wo}, std::move(out)), {&input, &weight},
      [iv, wv, ci_n, co_n, s, h, w, ho, wo](std::span<const real> g, ParentGrads& pg) {
        auto in = iv.data();
        auto wt = wv.data();
        for (std::size_t ci = 0; ci < ci_n; ++ci)
          for (std::size_t co = 0; co < co_n; ++co)
            for (std::size_t ky = 0; ky < s; ++ky)
              for (std::size_t kx = 0; kx < s; ++kx) {
                const std::size_t widx = ((ci * co_n + co) * s + ky) * s + kx;
                const real wval = wt[widx];
                real wacc = 0;
                for (std::size_t y = 0; y < h; ++y) {
                  const real* grow = g.data() + (co * ho + y * s + ky) * wo + kx;
                  const real* irow = in.data() + (ci * h + y) * w;
                  if (!pg[0].empty()) {
                    real* girow = pg[0].data() + (ci * h + y) * w;
                    for (std::size_t x = 0; x < w; ++x) girow[x] += wval * grow[x * s];
                  }
                  for (std::size_t x = 0; x < w; ++x) wacc += grow[x * s] * irow[x];
                }
                if (!pg[1].empty()) pg[1][widx] += wacc;
              }
      });
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormKind { layer, batch };

struct RunningStats {
  Tensor mean;
  Tensor var;
};

struct NormOptions {
  /// Axis holding the normalized channels; defaults to the last axis.
  std::optional<std::size_t> channel_axis;
  /// Batch kind, inference mode: statistics to normalize with.
  const RunningStats* running = nullptr;
  /// Batch kind, training mode: receives the batch mean and (biased) variance.
  RunningStats* observed = nullptr;
};

/// Layer kind normalizes each position over its channels; batch kind normalizes each
/// channel over all other positions. gamma/beta have one entry per channel.
inline Var normalize_layer(const Var& x, NormKind kind, const Var& gamma, const Var& beta, real eps,
                           bool training, const NormOptions& opt = {}) {
  if (!(eps > 0)) throw ContractError("normalize_layer: eps must be positive");
  const Shape& s = x.shape();
  const std::size_t axis = opt.channel_axis.value_or(s.size() - 1);
  if (axis >= s.size()) throw DimensionError("normalize_layer: channel axis out of range");
  const std::size_t C = s[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  if (gamma.size() != C || beta.size() != C)
    throw DimensionError("normalize_layer: gamma/beta must have " + std::to_string(C) + " entries");

  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<real> xhat(x.size()), out(x.size());
  auto idx = [&](std::size_t o, std::size_t c, std::size_t i) { return (o * C + c) * inner + i; };

  // Per-group inverse std; group = (o,i) for layer kind, c for batch kind.
  std::vector<real> inv_std;
  const bool use_running = kind == NormKind::batch && !training;

  if (kind == NormKind::layer) {
    inv_std.resize(outer * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        real mu = 0;
        for (std::size_t c = 0; c < C; ++c) mu += xd[idx(o, c, i)];
        mu /= real(C);
        real var = 0;
        for (std::size_t c = 0; c < C; ++c) var += (xd[idx(o, c, i)] - mu) * (xd[idx(o, c, i)] - mu);
        var /= real(C);
        const real is = real(1) / std::sqrt(var + eps);
        inv_std[o * inner + i] = is;
        for (std::size_t c = 0; c < C; ++c) xhat[idx(o, c, i)] = (xd[idx(o, c, i)] - mu) * is;
      }
  } else {
    inv_std.resize(C);
    const real m = real(outer * inner);
    std::vector<real> mus(C), vars(C);
    for (std::size_t c = 0; c < C; ++c) {
      real mu, var;
      if (use_running) {
        if (!opt.running) throw ContractError("normalize_layer: batch kind in eval mode needs running stats");
        mu = opt.running->mean[c];
        var = opt.running->var[c];
      } else {
        mu = 0;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) mu += xd[idx(o, c, i)];
        mu /= m;
        var = 0;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const real d = xd[idx(o, c, i)] - mu;
            var += d * d;
          }
        var /= m;
      }
      mus[c] = mu;
      vars[c] = var;
      const real is = real(1) / std::sqrt(var + eps);
      inv_std[c] = is;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) xhat[idx(o, c, i)] = (xd[idx(o, c, i)] - mu) * is;
    }
    if (training && opt.observed) {
      opt.observed->mean = Tensor(Shape{C}, std::move(mus));
      opt.observed->var = Tensor(Shape{C}, std::move(vars));
    }
  }

  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = idx(o, c, i);
        out[k] = gd[c] * xhat[k] + bd[c];
      }

  Tensor gv = gamma.value();
  return detail::make_result(
      "normalize_layer", Tensor(s, std::move(out)), {&x, &gamma, &beta},
      [kind, use_running, outer, C, inner, gv, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](std::span<const real> g, ParentGrads& pg) {
        auto idx = [&](std::size_t o, std::size_t c, std::size_t i) { return (o * C + c) * inner + i; };
        if (!pg[1].empty() || !pg[2].empty())
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = idx(o, c, i);
                if (!pg[1].empty()) pg[1][c] += g[k] * xhat[k];
                if (!pg[2].empty()) pg[2][c] += g[k];
              }
        if (pg[0].empty()) return;
        if (use_running) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = idx(o, c, i);
                pg[0][k] += g[k] * gv[c] * inv_std[c];
              }
          return;
        }
        // dx = inv_std * (gh - mean(gh) - xhat * mean(gh * xhat)), gh = g * gamma, over each group.
        if (kind == NormKind::layer) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
              real m1 = 0, m2 = 0;
              for (std::size_t c = 0; c < C; ++c) {
                const std::size_t k = idx(o, c, i);
                const real gh = g[k] * gv[c];
                m1 += gh;
                m2 += gh * xhat[k];
              }
              m1 /= real(C);
              m2 /= real(C);
              const real is = inv_std[o * inner + i];
              for (std::size_t c = 0; c < C; ++c) {
                const std::size_t k = idx(o, c, i);
                pg[0][k] += is * (g[k] * gv[c] - m1 - xhat[k] * m2);
              }
            }
        } else {
          const real m = real(outer * inner);
          for (std::size_t c = 0; c < C; ++c) {
            real m1 = 0, m2 = 0;
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = idx(o, c, i);
                m1 += g[k] * gv[c];
                m2 += g[k] * gv[c] * xhat[k];
              }
            m1 /= m;
            m2 /= m;
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = idx(o, c, i);
                pg[0][k] += inv_std[c] * (g[k] * gv[c] - m1 - xhat[k] * m2);
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind { silu, softplus, softmax_channel };

/// ln(1 + e^x) without overflow.
inline real softplus_scalar(real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline real sigmoid_scalar(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}

/// softmax_channel normalizes over the last axis.
inline Var activation(const Var& x, ActivationKind kind) {
  auto xd = x.data();
  std::vector<real> out(x.size());
  switch (kind) {
    case ActivationKind::silu: {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sigmoid_scalar(xd[i]);
      Tensor xv = x.value();
      return detail::make_result("silu", Tensor(x.shape(), std::move(out)), {&x},
                                 [xv](std::span<const real> g, ParentGrads& pg) {
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                     const real s = sigmoid_scalar(xv[i]);
                                     pg[0][i] += g[i] * s * (real(1) + xv[i] * (real(1) - s));
                                   }
                                 });
    }
    case ActivationKind::softplus: {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_scalar(xd[i]);
      Tensor xv = x.value();
      return detail::make_result("softplus", Tensor(x.shape(), std::move(out)), {&x},
                                 [xv](std::span<const real> g, ParentGrads& pg) {
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     pg[0][i] += g[i] * sigmoid_scalar(xv[i]);
                                 });
    }
    case ActivationKind::softmax_channel: {
      const std::size_t C = x.shape().back();
      const std::size_t rows = x.size() / C;
      for (std::size_t r = 0; r < rows; ++r) {
        const real* xr = xd.data() + r * C;
        real* orow = out.data() + r * C;
        const real mx = *std::max_element(xr, xr + C);
        real z = 0;
        for (std::size_t c = 0; c < C; ++c) z += (orow[c] = std::exp(xr[c] - mx));
        for (std::size_t c = 0; c < C; ++c) orow[c] /= z;
      }
      Tensor y(x.shape(), std::move(out));
      return detail::make_result("softmax_channel", y, {&x},
                                 [y, C, rows](std::span<const real> g, ParentGrads& pg) {
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     real dot = 0;
                                     for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
                                     for (std::size_t c = 0; c < C; ++c)
                                       pg[0][r * C + c] += y[r * C + c] * (g[r * C + c] - dot);
                                   }
                                 });
    }
  }
  throw ContractError("activation: unknown kind");
}

inline Var relu(const Var& x) {
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(real(0), x.data()[i]);
  Tensor xv = x.value();
  return detail::make_result("relu", Tensor(x.shape(), std::move(out)), {&x},
                             [xv](std::span<const real> g, ParentGrads& pg) {
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 if (xv[i] > 0) pg[0][i] += g[i];
                             });
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity when !training or rate == 0.
inline Var dropout(const Var& x, real rate, RandomSource& rng, bool training) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout: rate must be in [0,1)");
  if (!training || rate == 0) return x;
  const real keep_scale = real(1) / (real(1) - rate);
  std::vector<real> mask(x.size()), out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? real(0) : keep_scale;
    out[i] = x.data()[i] * mask[i];
  }
  return detail::make_result("dropout", Tensor(x.shape(), std::move(out)), {&x},
                             [mask = std::move(mask)](std::span<const real> g, ParentGrads& pg) {
                               for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * mask[i];
                             });
}

}  // namespace mhunet
