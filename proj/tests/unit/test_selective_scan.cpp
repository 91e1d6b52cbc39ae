#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mhunet/ssm/selective_scan.hpp"
#include "support/gradcheck.hpp"

using namespace mhunet;
using namespace mhunet::ssm;
using mhunet::testing::gradcheck;
using mhunet::testing::random_tensor;

namespace {

SelectiveParams random_params(RandomSource& rng, std::size_t C, std::size_t n) {
  return SelectiveParams{random_tensor(rng, {C, n}, -3, -0.1),
                         random_tensor(rng, {C, C}, -0.5, 0.5),
                         random_tensor(rng, {C}, -1, 1),
                         random_tensor(rng, {C, n}, -0.5, 0.5),
                         random_tensor(rng, {n}, -0.5, 0.5),
                         random_tensor(rng, {C, n}, -0.5, 0.5),
                         random_tensor(rng, {n}, -0.5, 0.5),
                         random_tensor(rng, {C}, -1, 1)};
}

/// Projections frozen to constants: delta, B_t, C_t do not depend on the input.
SelectiveParams frozen_params(RandomSource& rng, std::size_t C, std::size_t n) {
  SelectiveParams p = random_params(rng, C, n);
  p.W_delta = Tensor::zeros({C, C});
  p.W_B = Tensor::zeros({C, n});
  p.W_C = Tensor::zeros({C, n});
  return p;
}

}  // namespace

TEST(InputDependentParams, ZeroInputGivesLn2AndZeroProjections) {
  RandomSource rng(1);
  auto p = random_params(rng, 3, 4);
  p.b_delta = Tensor::zeros({3});
  p.b_B = Tensor::zeros({4});
  p.b_C = Tensor::zeros({4});
  auto sp = input_dependent_params(Tensor::zeros({5, 3}), p);
  for (real v : sp.delta.data()) EXPECT_NEAR(v, std::numbers::ln2, 1e-15);
  for (real v : sp.B_seq.data()) EXPECT_EQ(v, 0);
  for (real v : sp.C_seq.data()) EXPECT_EQ(v, 0);
}

TEST(InputDependentParams, ZeroDeltaProjectionIsInputIndependent) {
  RandomSource rng(2);
  auto p = random_params(rng, 2, 3);
  p.W_delta = Tensor::zeros({2, 2});
  p.b_delta = Tensor::vector({0.7, -2});
  auto sp = input_dependent_params(random_tensor(rng, {6, 2}, -5, 5), p);
  for (std::size_t t = 0; t < 6; ++t) {
    EXPECT_NEAR(sp.delta.value().at(t, 0), softplus_scalar(0.7), 1e-15);
    EXPECT_NEAR(sp.delta.value().at(t, 1), softplus_scalar(-2), 1e-15);
  }
}

TEST(InputDependentParams, DeltaStrictlyPositive) {
  RandomSource rng(3);
  auto p = random_params(rng, 4, 2);
  auto sp = input_dependent_params(random_tensor(rng, {50, 4}, -20, 20), p);
  for (real v : sp.delta.data()) EXPECT_GT(v, 0);
}

TEST(InputDependentParams, ShapeMismatchRejected) {
  RandomSource rng(4);
  auto p = random_params(rng, 4, 2);
  EXPECT_THROW(input_dependent_params(Tensor::zeros({3, 5}), p), DimensionError);
  p.A_diag = Tensor::zeros({4, 2});
  EXPECT_THROW(input_dependent_params(Tensor::zeros({3, 4}), p), ContractError);
}

TEST(SelectiveScan1d, ZeroInputGivesZeroOutput) {
  RandomSource rng(5);
  auto p = random_params(rng, 3, 4);
  for (auto rule : {Discretization::bilinear, Discretization::zoh}) {
    auto y = selective_scan_1d(Tensor::zeros({10, 3}), p, rule).value();
    for (real v : y.data()) EXPECT_EQ(v, 0);
  }
}

TEST(SelectiveScan1d, FrozenProjectionsReduceToLtiScan) {
  RandomSource rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t C = 1 + rng.below(4), n = 1 + rng.below(8), L = 1 + rng.below(64);
    auto p = frozen_params(rng, C, n);
    auto u = random_tensor(rng, {L, C}, -2, 2);
    auto y = selective_scan_1d(u, p, Discretization::bilinear).value();
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<real> a(n * n, 0), b(n), cc(n), uc(L);
      for (std::size_t s = 0; s < n; ++s) {
        a[s * n + s] = p.A_diag.value().at(c, s);
        b[s] = p.b_B.value()[s];
        cc[s] = p.b_C.value()[s];
      }
      for (std::size_t t = 0; t < L; ++t) uc[t] = u.at(t, c);
      ContinuousSSM sys{Tensor(Shape{n, n}, a), Tensor(Shape{n, 1}, b), Tensor(Shape{1, n}, cc),
                        p.D_skip.value()[c]};
      auto ref = scan_recurrent(discretize_bilinear(sys, softplus_scalar(p.b_delta.value()[c])), uc);
      for (std::size_t t = 0; t < L; ++t) EXPECT_NEAR(y.at(t, c), ref[t], 1e-10);
    }
  }
}

TEST(SelectiveScan1d, SingleStepHandEvaluation) {
  // n = C = 1, a = -1, delta = softplus(0) = ln 2, B_0 = 2 u, C_0 = 3 u, D = 0.25, u = 0.5.
  SelectiveParams p{Tensor(Shape{1, 1}, {-1}), Tensor(Shape{1, 1}, {0}), Tensor::vector({0}),
                    Tensor(Shape{1, 1}, {2}),  Tensor::vector({0}),        Tensor(Shape{1, 1}, {3}),
                    Tensor::vector({0}),        Tensor::vector({0.25})};
  const real u = 0.5, d = std::numbers::ln2;
  const real b_bar = d / (1 + d / 2) * (2 * u);
  const real expected = (3 * u) * (b_bar * u) + 0.25 * u;
  auto y = selective_scan_1d(Tensor(Shape{1, 1}, {u}), p, Discretization::bilinear).value();
  EXPECT_NEAR(y[0], expected, 1e-15);

  const real expected_zoh = (3 * u) * (d * 2 * u * u) + 0.25 * u;
  EXPECT_NEAR(selective_scan_1d(Tensor(Shape{1, 1}, {u}), p, Discretization::zoh).value()[0], expected_zoh, 1e-15);
}

TEST(SelectiveScan1d, CausalityBitIdentical) {
  RandomSource rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 1 + rng.below(4), n = 1 + rng.below(6), L = 2 + rng.below(40);
    auto p = random_params(rng, C, n);
    auto u = random_tensor(rng, {L, C}, -2, 2);
    const std::size_t tau = rng.below(L - 1);
    std::vector<real> changed(u.vec());
    for (std::size_t i = (tau + 1) * C; i < changed.size(); ++i) changed[i] += rng.normal();
    auto rule = trial % 2 ? Discretization::zoh : Discretization::bilinear;
    auto y1 = selective_scan_1d(u, p, rule).value();
    auto y2 = selective_scan_1d(Tensor(u.shape(), changed), p, rule).value();
    for (std::size_t i = 0; i < (tau + 1) * C; ++i) ASSERT_EQ(y1[i], y2[i]);
  }
}

TEST(SelectiveScan1d, PerStepTransitionIsStable) {
  RandomSource rng(8);
  for (int i = 0; i < 10000; ++i) {
    real a = -rng.uniform(1e-6, 20), d = rng.uniform(1e-6, 20);
    EXPECT_LT(std::abs(bilinear_scalar(a, d).a_bar), 1);
    real z = zoh_scalar(a, d).a_bar;
    EXPECT_GT(z, 0);
    EXPECT_LT(z, 1);
  }
}

TEST(SelectiveScan1d, GradientsMatchFiniteDifferences) {
  RandomSource rng(9);
  for (auto rule : {Discretization::bilinear, Discretization::zoh}) {
    const std::size_t L = 7, C = 3, n = 4;
    auto p = random_params(rng, C, n);
    std::vector<Tensor> inputs{random_tensor(rng, {L, C}, -1, 1),  p.A_diag.value(), p.W_delta.value(),
                               p.b_delta.value(),                  p.W_B.value(),    p.b_B.value(),
                               p.W_C.value(),                      p.b_C.value(),    p.D_skip.value()};
    real err = gradcheck(
        [rule](const std::vector<Var>& v) {
          SelectiveParams q{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
          return selective_scan_1d(v[0], q, rule);
        },
        inputs);
    EXPECT_LE(err, 1e-4) << (rule == Discretization::zoh ? "zoh" : "bilinear");
  }
}

TEST(ScanRoutes, SingleTokenAllRoutesIdentical) {
  for (auto tag : kAllRoutes) {
    auto r = make_route(tag, 1, 1);
    EXPECT_EQ(r.order, std::vector<std::size_t>{0});
  }
}

TEST(ScanRoutes, TwoByTwoOrders) {
  // (i,j) -> i*W + j
  EXPECT_EQ(make_route(RouteTag::row_forward, 2, 2).order, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(make_route(RouteTag::col_forward, 2, 2).order, (std::vector<std::size_t>{0, 2, 1, 3}));
  EXPECT_EQ(make_route(RouteTag::row_reverse, 2, 2).order, (std::vector<std::size_t>{3, 2, 1, 0}));
  EXPECT_EQ(make_route(RouteTag::col_reverse, 2, 2).order, (std::vector<std::size_t>{3, 1, 2, 0}));
}

TEST(ScanRoutes, UnflattenInvertsFlatten) {
  RandomSource rng(10);
  for (std::size_t H : {1u, 2u, 3u, 5u})
    for (std::size_t W : {1u, 4u, 7u}) {
      auto x = random_tensor(rng, {H, W, 3});
      for (auto tag : kAllRoutes) {
        auto r = make_route(tag, H, W);
        for (std::size_t i = 0; i < r.order.size(); ++i) EXPECT_EQ(r.order[r.inverse[i]], i);
        EXPECT_TRUE(route_unflatten(route_flatten(x, r), r).value().identical(x));
      }
    }
}

TEST(Ss2d, SingleTokenIsFourTimesOneStep) {
  RandomSource rng(11);
  auto p = random_params(rng, 3, 4);
  auto x = random_tensor(rng, {1, 1, 3});
  auto y = ss2d(x, p).value();
  auto single = selective_scan_1d(x.reshaped({1, 3}), p).value();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y[c], 4 * single[c], 1e-15);
}

TEST(Ss2d, ZeroFeatureGivesZero) {
  RandomSource rng(12);
  auto p = random_params(rng, 2, 3);
  auto y = ss2d(Tensor::zeros({4, 3, 2}), p).value();
  for (real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(Ss2d, RepeatedEvaluationIsBitIdentical) {
  RandomSource rng(13);
  auto p = random_params(rng, 3, 4);
  auto x = random_tensor(rng, {5, 6, 3});
  EXPECT_TRUE(ss2d(x, p).value().identical(ss2d(x, p).value()));
}

TEST(Ss2d, EqualsExplicitSumOfRoutes) {
  RandomSource rng(14);
  auto p = random_params(rng, 2, 3);
  auto x = random_tensor(rng, {3, 4, 2});
  auto y = ss2d(x, p, Discretization::zoh).value();
  std::vector<real> expected(y.size(), 0);
  for (auto tag : kAllRoutes) {
    auto r = make_route(tag, 3, 4);
    auto part = route_unflatten(selective_scan_1d(route_flatten(x, r), p, Discretization::zoh), r).value();
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += part[i];
  }
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(y[i], expected[i]);
}

TEST(Ss2d, GradientsMatchFiniteDifferences) {
  RandomSource rng(15);
  const std::size_t C = 2, n = 3;
  auto p = random_params(rng, C, n);
  std::vector<Tensor> inputs{random_tensor(rng, {3, 2, C}), p.A_diag.value(), p.W_delta.value(),
                             p.b_delta.value(),             p.W_B.value(),    p.b_B.value(),
                             p.W_C.value(),                 p.b_C.value(),    p.D_skip.value()};
  real err = gradcheck(
      [](const std::vector<Var>& v) {
        SelectiveParams q{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
        return ss2d(v[0], q);
      },
      inputs);
  EXPECT_LE(err, 1e-4);
}
