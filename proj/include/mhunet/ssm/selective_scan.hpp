#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

#include "mhunet/numeric/autograd.hpp"
#include "mhunet/numeric/ops.hpp"
#include "mhunet/ssm/ssm_core.hpp"

namespace mhunet::ssm {

enum class Discretization { bilinear, zoh };

/// Input-dependent SSM parameters for a sequence of C-channel tokens with state size n.
/// Per step t: delta_t = softplus(u_t W_delta + b_delta), B_t = u_t W_B + b_B, C_t = u_t W_C + b_C.
/// B_t and C_t are shared across channels; A_diag and D_skip are per channel.
struct SelectiveParams {
  Var A_diag;   // [C,n], strictly negative
  Var W_delta;  // [C,C]
  Var b_delta;  // [C]
  Var W_B;      // [C,n]
  Var b_B;      // [n]
  Var W_C;      // [C,n]
  Var b_C;      // [n]
  Var D_skip;   // [C]

  std::size_t channels() const { return A_diag.shape()[0]; }
  std::size_t state_dim() const { return A_diag.shape()[1]; }
};

inline void validate(const SelectiveParams& p) {
  if (p.A_diag.shape().size() != 2) throw DimensionError("SelectiveParams: A_diag must be [C,n]");
  const std::size_t C = p.channels(), n = p.state_dim();
  if (p.W_delta.shape() != Shape{C, C}) throw DimensionError("SelectiveParams: W_delta must be [C,C]");
  if (p.b_delta.size() != C) throw DimensionError("SelectiveParams: b_delta must have C entries");
  if (p.W_B.shape() != Shape{C, n} || p.W_C.shape() != Shape{C, n})
    throw DimensionError("SelectiveParams: W_B and W_C must be [C,n]");
  if (p.b_B.size() != n || p.b_C.size() != n) throw DimensionError("SelectiveParams: b_B and b_C must have n entries");
  if (p.D_skip.size() != C) throw DimensionError("SelectiveParams: D_skip must have C entries");
  for (real a : p.A_diag.data())
    if (!(a < 0)) throw ContractError("SelectiveParams: A_diag must be strictly negative");
}

struct StepParams {
  Var delta;  // [L,C]
  Var B_seq;  // [L,n]
  Var C_seq;  // [L,n]
};

inline StepParams input_dependent_params(const Var& u, const SelectiveParams& p) {
  validate(p);
  if (u.shape().size() != 2 || u.shape()[1] != p.channels())
    throw DimensionError("input_dependent_params: input " + shape_str(u.shape()) + " does not have " +
                         std::to_string(p.channels()) + " channels");
  return StepParams{activation(linear(u, p.W_delta, p.b_delta), ActivationKind::softplus),
                    linear(u, p.W_B, p.b_B), linear(u, p.W_C, p.b_C)};
}

namespace detail {

struct DiscreteStep {
  real a_bar, b_scale;
  real da_dd, da_da;  // d a_bar / d delta, d a_bar / d a
  real db_dd, db_da;  // d b_scale / d delta, d b_scale / d a
};

inline DiscreteStep discrete_step(real a, real d, Discretization rule) {
  if (rule == Discretization::bilinear) {
    const real p = real(1) - d * a / 2;
    const real p2 = p * p;
    const auto s = bilinear_scalar(a, d);
    return {s.a_bar, s.b_scale, a / p2, d / p2, real(1) / p2, d * d / (2 * p2)};
  }
  const auto s = zoh_scalar(a, d);
  return {s.a_bar, s.b_scale, a * s.a_bar, d * s.a_bar, real(1), real(0)};
}

}  // namespace detail

/// Fused selective recurrence over a sequence, discretizing at every step:
///   x_t[s] = a_bar(t,c,s) x_{t-1}[s] + b_scale(t,c,s) B_t[s] u_t[c],   x_{-1} = 0
///   y_t[c] = sum_s C_t[s] x_t[s] + D[c] u_t[c]
inline Var selective_scan_core(const Var& u, const Var& delta, const Var& A, const Var& B_seq,
                               const Var& C_seq, const Var& D, Discretization rule) {
  const std::size_t L = u.shape()[0], C = u.shape()[1], n = A.shape()[1];
  if (delta.shape() != u.shape() || A.shape()[0] != C || B_seq.shape() != Shape{L, n} ||
      C_seq.shape() != Shape{L, n} || D.size() != C)
    throw DimensionError("selective_scan_core: inconsistent operand shapes");

  const bool keep_states = u.tracked() || delta.tracked() || A.tracked() || B_seq.tracked() ||
                           C_seq.tracked() || D.tracked();
  auto ud = u.data(), dd = delta.data(), ad = A.data(), bd = B_seq.data(), cd = C_seq.data(), Dd = D.data();
  std::vector<real> y(L * C);
  std::vector<real> states(keep_states ? C * L * n : 0);
  std::vector<real> x(n);
  for (std::size_t c = 0; c < C; ++c) {
    std::fill(x.begin(), x.end(), real(0));
    for (std::size_t t = 0; t < L; ++t) {
      const real ut = ud[t * C + c], dt = dd[t * C + c];
      real acc = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const auto st = rule == Discretization::bilinear ? bilinear_scalar(ad[c * n + s], dt)
                                                         : zoh_scalar(ad[c * n + s], dt);
        x[s] = st.a_bar * x[s] + st.b_scale * bd[t * n + s] * ut;
        acc += cd[t * n + s] * x[s];
      }
      y[t * C + c] = acc + Dd[c] * ut;
      if (keep_states) std::copy(x.begin(), x.end(), states.begin() + (c * L + t) * n);
    }
  }

  Tensor uv = u.value(), dv = delta.value(), av = A.value(), bv = B_seq.value(), cv = C_seq.value(),
         Dv = D.value();
  return mhunet::detail::make_result(
      "selective_scan", Tensor(Shape{L, C}, std::move(y)), {&u, &delta, &A, &B_seq, &C_seq, &D},
      [=, states = std::move(states)](std::span<const real> g, ParentGrads& pg) {
        auto& gu = pg[0];
        auto& gdelta = pg[1];
        auto& gA = pg[2];
        auto& gB = pg[3];
        auto& gC = pg[4];
        auto& gD = pg[5];
        std::vector<real> gx(n);
        for (std::size_t c = 0; c < C; ++c) {
          std::fill(gx.begin(), gx.end(), real(0));
          for (std::size_t t = L; t-- > 0;) {
            const real gy = g[t * C + c], ut = uv[t * C + c], dt = dv[t * C + c];
            const real* xt = states.data() + (c * L + t) * n;
            const real* xprev = t > 0 ? states.data() + (c * L + t - 1) * n : nullptr;
            if (!gD.empty()) gD[c] += gy * ut;
            real du = gy * Dv[c];
            for (std::size_t s = 0; s < n; ++s) {
              if (!gC.empty()) gC[t * n + s] += gy * xt[s];
              gx[s] += gy * cv[t * n + s];
            }
            real ddelta = 0;
            for (std::size_t s = 0; s < n; ++s) {
              const real a = av[c * n + s];
              const real b = bv[t * n + s];
              const auto st = detail::discrete_step(a, dt, rule);
              const real xp = xprev ? xprev[s] : real(0);
              const real g_abar = gx[s] * xp;
              const real g_bbar = gx[s] * ut;  // gradient w.r.t. b_scale * b
              du += gx[s] * st.b_scale * b;
              if (!gB.empty()) gB[t * n + s] += g_bbar * st.b_scale;
              ddelta += g_abar * st.da_dd + g_bbar * b * st.db_dd;
              if (!gA.empty()) gA[c * n + s] += g_abar * st.da_da + g_bbar * b * st.db_da;
              gx[s] *= st.a_bar;
            }
            if (!gu.empty()) gu[t * C + c] += du;
            if (!gdelta.empty()) gdelta[t * C + c] += ddelta;
          }
        }
      });
}

/// Selective SSM over a [L,C] sequence.
inline Var selective_scan_1d(const Var& u, const SelectiveParams& p, Discretization rule = Discretization::bilinear) {
  if (u.shape().size() != 2 || u.shape()[0] == 0)
    throw DimensionError("selective_scan_1d: input must be [L,C] with L >= 1");
  StepParams sp = input_dependent_params(u, p);
  return selective_scan_core(u, sp.delta, p.A_diag, sp.B_seq, sp.C_seq, p.D_skip, rule);
}

// ---------------------------------------------------------------------------
// 2D traversal routes

enum class RouteTag { row_forward, row_reverse, col_forward, col_reverse };

inline constexpr std::array<RouteTag, 4> kAllRoutes{RouteTag::row_forward, RouteTag::row_reverse,
                                                    RouteTag::col_forward, RouteTag::col_reverse};

inline const char* route_name(RouteTag tag) {
  switch (tag) {
    case RouteTag::row_forward: return "row_forward";
    case RouteTag::row_reverse: return "row_reverse";
    case RouteTag::col_forward: return "col_forward";
    case RouteTag::col_reverse: return "col_reverse";
  }
  return "?";
}

/// order[step] = row-major token index visited at that step; inverse[token] = step.
struct ScanRoute {
  RouteTag tag;
  std::size_t height = 0, width = 0;
  std::vector<std::size_t> order;
  std::vector<std::size_t> inverse;
};

inline ScanRoute make_route(RouteTag tag, std::size_t H, std::size_t W) {
  if (H == 0 || W == 0) throw DimensionError("make_route: extents must be >= 1");
  ScanRoute r{tag, H, W, {}, {}};
  r.order.reserve(H * W);
  const bool by_col = tag == RouteTag::col_forward || tag == RouteTag::col_reverse;
  if (by_col) {
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t i = 0; i < H; ++i) r.order.push_back(i * W + j);
  } else {
    for (std::size_t k = 0; k < H * W; ++k) r.order.push_back(k);
  }
  if (tag == RouteTag::row_reverse || tag == RouteTag::col_reverse) std::reverse(r.order.begin(), r.order.end());
  r.inverse.resize(H * W);
  for (std::size_t step = 0; step < r.order.size(); ++step) r.inverse[r.order[step]] = step;
  return r;
}

/// [H,W,C] -> [H*W,C] in the route's visiting order.
inline Var route_flatten(const Var& feature, const ScanRoute& route) {
  const auto& s = feature.shape();
  if (s.size() != 3 || s[0] != route.height || s[1] != route.width)
    throw DimensionError("route_flatten: feature " + shape_str(s) + " does not match route extents");
  return gather_rows(reshape(feature, {s[0] * s[1], s[2]}), route.order);
}

/// Inverse of route_flatten: [H*W,C] -> [H,W,C].
inline Var route_unflatten(const Var& seq, const ScanRoute& route) {
  const auto& s = seq.shape();
  if (s.size() != 2 || s[0] != route.height * route.width)
    throw DimensionError("route_unflatten: sequence " + shape_str(s) + " does not match route extents");
  return reshape(gather_rows(seq, route.inverse), {route.height, route.width, s[1]});
}

/// Selective 2D scan: run the 1D selective scan along each of the four routes and sum the
/// re-ordered outputs (fixed order row_forward, row_reverse, col_forward, col_reverse).
inline Var ss2d(const Var& feature, const SelectiveParams& p, Discretization rule = Discretization::bilinear) {
  const auto& s = feature.shape();
  if (s.size() != 3) throw DimensionError("ss2d: feature must be [H,W,C], got " + shape_str(s));
  std::optional<Var> total;
  for (RouteTag tag : kAllRoutes) {
    const ScanRoute route = make_route(tag, s[0], s[1]);
    Var out = route_unflatten(selective_scan_1d(route_flatten(feature, route), p, rule), route);
    total = total ? add(*total, out) : out;
  }
  return *total;
}

}  // namespace mhunet::ssm
