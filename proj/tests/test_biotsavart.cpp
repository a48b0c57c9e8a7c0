#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "sbm/biotsavart.hpp"
#include "support.hpp"

using namespace sbm;
using sbm::testing::params_with_gammas;
using sbm::testing::random_bumps;
using sbm::testing::sampled_state;

namespace {

PrefixTable table_of(std::vector<double> nodes, std::vector<double> values) {
  return PrefixTable(nodes, values);
}

// Gauss-Kronrod split at the interpolation nodes so every piece is smooth.
double quad(const std::function<double(double)>& f, double a, double b,
            std::span<const double> breaks) {
  if (!(b > a)) return 0.0;
  std::vector<double> cuts{a};
  for (double y : breaks)
    if (y > a && y < b) cuts.push_back(y);
  cuts.push_back(b);
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    s += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, cuts[i], cuts[i + 1], 0);
  return s;
}

}  // namespace

TEST(PrefixTable, TriangleArea) {
  const auto t = table_of({0.0, 1.0}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(t.integral(0.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(t.integral(0.0, 0.5), 0.125);
  EXPECT_EQ(t.cumulative()[0], 0.0);
}

TEST(PrefixTable, Additivity) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> nodes, values;
  for (int i = 0; i <= 50; ++i) {
    nodes.push_back(0.02 * i);
    values.push_back(u(rng));
  }
  const PrefixTable t(nodes, values);
  const double whole = t.integral(0.2, 0.9);
  EXPECT_NEAR(t.integral(0.2, 0.5) + t.integral(0.5, 0.9), whole, 1e-14 * std::abs(whole));
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_GE(t.cumulative()[i], t.cumulative()[i - 1]);
}

TEST(PrefixTable, ZeroField) {
  const auto t = table_of({0.0, 0.5, 1.0}, {0.0, 0.0, 0.0});
  for (double a : {-1.0, 0.0, 0.3})
    for (double b : {0.3, 0.9, 4.0}) EXPECT_EQ(t.integral(a, b), 0.0);
}

TEST(PrefixTable, ZeroOutsideNodes) {
  const auto t = table_of({1.0, 2.0}, {3.0, 3.0});
  EXPECT_EQ(t.value(0.5), 0.0);
  EXPECT_EQ(t.value(2.0), 0.0);  // right-continuous: zero from the last node on
  EXPECT_EQ(t.value(1.0), 3.0);
  EXPECT_EQ(t.integral(-5.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(t.integral(-5.0, 9.0), 3.0);
}

TEST(PrefixTable, RejectsUnsortedNodes) {
  EXPECT_THROW(table_of({0.0, 0.5, 0.4}, {1.0, 1.0, 1.0}), ConsistencyError);
  EXPECT_THROW(table_of({0.0, 0.0}, {1.0, 1.0}), ConsistencyError);
  LagrangianState s;
  s.markers = {Marker{0.0, 1.0, 0.0, 0.0, 1.0, 0.0}, Marker{1.0, 0.5, 0.0, 0.0, 1.0, 0.0}};
  EXPECT_THROW(build_prefix_table(s), ConsistencyError);
}

TEST(PrefixTable, CursorMatchesRandomAccess) {
  std::mt19937_64 rng(11);
  const auto field = random_bumps(rng, 0.0, 10.0);
  const auto s = sampled_state(field, 0.0, 10.0, 301);
  const auto t = build_prefix_table(s);
  PrefixTable::Cursor c(t);
  for (double y = -1.0; y < 11.0; y += 0.0137) {
    EXPECT_EQ(c.primitive(y), t.primitive(y));
    EXPECT_EQ(c.value(y), t.value(y));
  }
}

TEST(VelocityZ, UnitBlockExamples) {
  const auto t = table_of({0.0, 10.0}, {1.0, 1.0});
  const ModelParams p = params_with_gammas(0.2, 0.3);
  EXPECT_NEAR(velocity_z(1.0, t, p), 0.3, 1e-14);
  EXPECT_NEAR(velocity_z(0.1, t, p), -0.4, 1e-14);  // clamp at z - gamma1 < 0
  EXPECT_NEAR(stretch_rate(1.0, t, p), 1.0, 1e-14);
}

TEST(VelocityZ, ZeroField) {
  const auto t = table_of({0.0, 10.0}, {0.0, 0.0});
  const ModelParams p = make_params(1.2, 0.9);
  for (double z : {0.0, 0.5, 3.0, 20.0}) {
    EXPECT_EQ(velocity_z(z, t, p), 0.0);
    EXPECT_EQ(stretch_rate(z, t, p), 0.0);
  }
}

TEST(VelocityZ, ConstantFieldStretchRate) {
  const auto t = table_of({-50.0, 50.0}, {2.5, 2.5});
  const ModelParams p = make_params(1.2, 0.9);
  for (double z : {1.0, 4.0, 10.0}) EXPECT_DOUBLE_EQ(stretch_rate(z, t, p), 2.5);
}

TEST(VelocityZ, MatchesQuadratureOfDefinition) {
  // Independent route: adaptive Gauss-Kronrod on the defining integrals of the
  // same piecewise-linear interpolant.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto field = random_bumps(rng, 1.0, 9.0);
    const auto s = sampled_state(field, 0.2, 10.0, 97);
    const auto t = build_prefix_table(s);
    const ModelParams p = make_params(1.0 + 0.4 * trial / 4.0, 1.0 - 0.1 * trial / 4.0);
    auto w = [&](double y) { return t.value(y); };
    for (double z : {0.05, 0.7, 2.3, 5.5, 9.1}) {
      const double a = std::max(z - p.gamma1, 0.0);
      const double ref = quad(w, 0.0, a, t.nodes()) - quad(w, a, z + p.gamma2, t.nodes());
      EXPECT_NEAR(velocity_z(z, t, p), ref, 1e-11 * (1.0 + std::abs(ref)));
    }
  }
}

TEST(VelocityZ, BatchMatchesPointwise) {
  std::mt19937_64 rng(5);
  const auto field = random_bumps(rng, 1.0, 9.0);
  const auto s = sampled_state(field, 0.2, 10.0, 513);
  const auto t = build_prefix_table(s);
  const ModelParams p = make_params(1.3, 0.85);
  std::vector<double> pos, u, K;
  for (double z = 0.0; z < 12.0; z += 0.011) pos.push_back(z);
  u.resize(pos.size());
  K.resize(pos.size());
  velocity_z_batch(pos, t, p, u, K);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    EXPECT_NEAR(u[i], velocity_z(pos[i], t, p), 1e-13);
    EXPECT_EQ(K[i], stretch_rate(pos[i], t, p));
  }
}

TEST(VelocityZ, StretchRateIsDerivative) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uz(0.5, 9.5);
  for (int f = 0; f < 5; ++f) {
    const auto field = random_bumps(rng, 1.0, 9.0);
    const auto s = sampled_state(field, 0.0, 10.0, 1001);
    const auto t = build_prefix_table(s);
    const ModelParams p = make_params(1.2, 0.9);
    for (int k = 0; k < 50; ++k) {
      const double z = uz(rng);
      const double h = 1e-5;
      const double fd = (velocity_z(z + h, t, p) - velocity_z(z - h, t, p)) / (2 * h);
      const double K = stretch_rate(z, t, p);
      EXPECT_LE(std::abs(fd - K), 1e-6 * std::abs(K)) << "z=" << z;
    }
  }
}

TEST(VelocityX, ClosedFormExamples) {
  const LinearXTable t(std::vector<double>{1e-9, 1.0}, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(velocity_x(0.5, t, make_params(1.0, 1.0)), -0.5 * std::log(2.0), 1e-14);
  EXPECT_NEAR(-0.5 * std::log(2.0), -0.3465736, 5e-8);
  const ModelParams p = make_params(2.0, 0.5);
  EXPECT_NEAR(velocity_x(0.4, t, p), 0.4 * (std::log(4.0) - std::log(1.25)), 1e-14);
  EXPECT_NEAR(velocity_x(0.4, t, p), 0.4652603, 5e-8);
  EXPECT_NEAR(velocity_x(0.6, t, p), 0.6 * std::log(10.0 / 3.0), 1e-14);
  EXPECT_NEAR(velocity_x(0.6, t, p), 0.7223837, 5e-8);
}

TEST(VelocityX, DomainErrors) {
  const LinearXTable t(std::vector<double>{0.1, 0.9}, std::vector<double>{1.0, 1.0});
  const ModelParams p = make_params(1.0, 1.0);
  EXPECT_THROW(velocity_x(0.0, t, p), DomainError);
  EXPECT_THROW(velocity_x(1.2, t, p), DomainError);
  EXPECT_NO_THROW(velocity_x(1.0, t, p));
  EXPECT_THROW(dx_velocity(1.0, t, p), DomainError);
  EXPECT_THROW(dx_velocity(-0.5, t, p), DomainError);
}

TEST(VelocityX, MatchesQuadratureOfDefinition) {
  std::mt19937_64 rng(23);
  const auto field = random_bumps(rng, 0.2, 0.8);
  const auto s = sampled_state(field, 0.05, 0.95, 181, Frame::x_warmup);
  const auto t = build_x_table(s);
  const ModelParams p = make_params(1.4, 0.8);
  auto J = [&](double a, double b) {
    return quad([&](double y) { return t.value(y) / y; }, a, b, t.linear().nodes());
  };
  for (double x : {0.03, 0.2, 0.45, 0.7, 0.99}) {
    const double hi = std::min(p.beta1 * x, 1.0), lo = std::min(p.beta2 * x, 1.0);
    const double ref = x * J(lo, hi) - x * J(hi, 1.0);
    EXPECT_NEAR(velocity_x(x, t, p), ref, 1e-11 * (1.0 + std::abs(ref)));
  }
}

TEST(VelocityX, BatchMatchesPointwise) {
  std::mt19937_64 rng(29);
  const auto field = random_bumps(rng, 0.2, 0.8);
  const auto s = sampled_state(field, 0.05, 0.95, 257, Frame::x_warmup);
  const auto t = build_x_table(s);
  const ModelParams p = make_params(1.4, 0.8);
  std::vector<double> pos, u, du;
  for (double x = 0.01; x < 1.0; x += 0.0071) pos.push_back(x);
  u.resize(pos.size());
  du.resize(pos.size());
  velocity_x_batch(pos, t, p, u, du);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    EXPECT_NEAR(u[i], velocity_x(pos[i], t, p), 1e-14);
    EXPECT_NEAR(du[i], dx_velocity(pos[i], t, p), 1e-13 * (1.0 + std::abs(du[i])));
  }
}

TEST(DxVelocity, Examples) {
  const LinearXTable zero(std::vector<double>{0.1, 0.9}, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(dx_velocity(0.5, zero, make_params(1.2, 0.9)), 0.0);

  const LinearXTable one(std::vector<double>{1e-9, 1.0}, std::vector<double>{1.0, 1.0});
  const ModelParams p = make_params(1.2, 0.9);
  const double h = 1e-5;
  const double fd = (velocity_x(0.5 + h, one, p) - velocity_x(0.5 - h, one, p)) / (2 * h);
  EXPECT_NEAR(dx_velocity(0.5, one, p), 0.7768564, 5e-8);
  EXPECT_NEAR(dx_velocity(0.5, one, p), fd, 1e-6 * std::abs(fd));

  const ModelParams q = make_params(1.0, 1.0);
  const double fd1 = (velocity_x(0.5 + h, one, q) - velocity_x(0.5 - h, one, q)) / (2 * h);
  EXPECT_NEAR(dx_velocity(0.5, one, q), 1.0 - std::log(2.0), 1e-14);
  EXPECT_NEAR(dx_velocity(0.5, one, q), fd1, 1e-6 * std::abs(fd1));
}

TEST(DxVelocity, LimitAtOrigin) {
  const LinearXTable t(std::vector<double>{0.2, 0.5, 0.8}, std::vector<double>{0.0, 1.0, 0.0});
  const ModelParams p = make_params(1.2, 0.9);
  // Below every support point the clamps are inactive and du/dx = u/x = -J(0,1)
  // exactly (J(b2 x, b1 x) = 0).
  EXPECT_NEAR(dx_velocity(0.01, t, p), dx_velocity_at_origin(t), 1e-15);
  EXPECT_LT(dx_velocity_at_origin(t), 0.0);
}

TEST(Frames, VelocityConsistency) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ub1(1.0, 1.9), ub2(0.55, 1.0), uz(0.0, 12.0);
  for (int f = 0; f < 10; ++f) {
    const auto field = random_bumps(rng, 1.0, 10.0);
    const auto s = sampled_state(field, 0.3, 11.7, 700);
    const PrefixTable zt = build_prefix_table(s);
    const LogXTable xt(zt);
    const ModelParams p = make_params(ub1(rng), ub2(rng));
    for (int k = 0; k < 100; ++k) {
      const double z = uz(rng);
      const double x = std::exp(-z);
      const double lhs = velocity_x(x, xt, p);
      const double rhs = -x * velocity_z(z, zt, p);
      EXPECT_LE(std::abs(lhs - rhs), 1e-8 * std::abs(rhs) + 1e-14 * x) << z;
    }
  }
}

TEST(Frames, DerivativeRelation) {
  // du~/dz = du/dx - u/x on matched representations.
  std::mt19937_64 rng(37);
  const auto field = random_bumps(rng, 1.0, 10.0);
  const auto s = sampled_state(field, 0.3, 11.7, 700);
  const PrefixTable zt = build_prefix_table(s);
  const LogXTable xt(zt);
  const ModelParams p = make_params(1.2, 0.9);
  for (double z : {0.5, 1.7, 3.3, 6.1, 9.4}) {
    const double x = std::exp(-z);
    const double ux = velocity_x(x, xt, p);
    const double dux = dx_velocity(x, xt, p);
    const double K = stretch_rate(z, zt, p);
    EXPECT_NEAR(dux - ux / x, K, 1e-9 * (1.0 + std::abs(K)));
  }
}

TEST(SignDefinite, VelocityHasOneSign) {
  std::mt19937_64 rng(41);
  const ModelParams p = make_params(1.0, 1.0);
  for (int f = 0; f < 5; ++f) {
    const auto field = random_bumps(rng, 0.1, 0.9);
    const auto sx = sampled_state(field, 0.05, 0.95, 200, Frame::x_warmup);
    const auto xt = build_x_table(sx);
    for (double x = 0.001; x <= 1.0; x += 0.0123) EXPECT_LE(velocity_x(x, xt, p), 0.0);

    const auto zfield = random_bumps(rng, 1.0, 9.0);
    const auto sz = sampled_state(zfield, 0.5, 10.0, 200);
    const auto zt = build_prefix_table(sz);
    for (double z = 0.0; z < 12.0; z += 0.05) EXPECT_GE(velocity_z(z, zt, p), 0.0);
  }
}

TEST(Quadrature, ExactForPiecewiseLinearFields) {
  // omega(y) = y on [0, 2]: u~(z) = a^2 - (min(z+g2, 2)^2)/2 with a = min((z-g1)+, 2).
  const auto t = table_of({0.0, 0.5, 1.25, 2.0}, {0.0, 0.5, 1.25, 2.0});
  const ModelParams p = params_with_gammas(0.25, 0.5);
  for (double z : {0.1, 0.6, 1.0, 1.4}) {
    const double a = std::min(std::max(z - 0.25, 0.0), 2.0);
    const double b = std::min(z + 0.5, 2.0);
    EXPECT_NEAR(velocity_z(z, t, p), a * a / 2.0 - (b * b / 2.0 - a * a / 2.0), 1e-15);
  }
  // omega(x) = x on [0.1, 1]: J(a, b) = b - a.
  const LinearXTable xt(std::vector<double>{0.1, 0.4, 1.0}, std::vector<double>{0.1, 0.4, 1.0});
  EXPECT_NEAR(xt.inv_y_integral(0.2, 0.9), 0.7, 1e-15);
  EXPECT_NEAR(velocity_x(0.5, xt, make_params(1.0, 1.0)), -0.5 * 0.5, 1e-15);
}
