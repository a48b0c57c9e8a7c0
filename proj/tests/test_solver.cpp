#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "sbm/oracles.hpp"
#include "sbm/solver.hpp"
#include "support.hpp"

using namespace sbm;
using sbm::testing::params_with_gammas;

namespace {

InitialDataSpec desk_spec(std::size_t n = 512) {
  InitialDataSpec s;
  s.n_markers = n;
  return s;
}

InitialDataSpec warmup_spec(std::size_t n = 512) {
  InitialDataSpec s;
  s.frame = Frame::x_warmup;
  s.n_markers = n;
  return s;
}

LagrangianState smooth_state(const InitialDataSpec& spec, std::size_t n, double lo, double hi) {
  LagrangianState s;
  for (std::size_t i = 0; i < n; ++i) {
    Marker m;
    m.z = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    m.phi = m.z + 0.2 * std::sin(m.z);
    m.D = 1.0 + 0.2 * std::cos(m.z);
    m.W = 1.0 + 0.5 * std::cos(m.z);
    m.rho = spec.rho0(m.z);
    m.omega = m.rho * m.W;
    s.markers.push_back(m);
  }
  return s;
}

}  // namespace

TEST(RhsEval, ZeroVorticity) {
  const auto spec = desk_spec(256);
  const ModelParams p = make_params(1.2, 0.9);
  const auto s = build_initial_state(spec, p);
  const Rates r = rhs_eval(s, p);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& m = s.markers[i];
    EXPECT_EQ(r[i].phi, 0.0);
    EXPECT_EQ(r[i].D, 0.0);
    EXPECT_DOUBLE_EQ(r[i].omega, m.rho * std::exp(m.z));
    EXPECT_DOUBLE_EQ(r[i].W, std::exp(m.z));
  }
}

TEST(RhsEval, ZeroDensityEquilibrium) {
  auto spec = desk_spec(256);
  spec.amplitude = 0.0;
  const ModelParams p = make_params(1.2, 0.9);
  const auto s = build_initial_state(spec, p);
  const Rates r = rhs_eval(s, p);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(r[i].phi, 0.0);
    EXPECT_EQ(r[i].omega, 0.0);
    EXPECT_EQ(r[i].D, 0.0);
  }
}

TEST(RhsEval, XFrameForcing) {
  LagrangianState s;
  s.frame = Frame::x_warmup;
  for (double x : {0.25, 0.5, 0.75}) s.markers.push_back(Marker{x, x, 1.0, 0.0, 1.0, 0.0});
  const Rates r = rhs_eval(s, make_params(1.0, 1.0));
  EXPECT_DOUBLE_EQ(r[1].omega, 2.0);
  EXPECT_DOUBLE_EQ(r[1].W, 2.0);
  EXPECT_EQ(r[1].phi, 0.0);
}

TEST(RhsEval, OverflowSignal) {
  LagrangianState s;
  s.markers = {Marker{0.0, 0.0, 1.0, 0.0, 1.0, 0.0}, Marker{1.0, 800.0, 1.0, 0.0, 1.0, 0.0}};
  try {
    rhs_eval(s, make_params(1.2, 0.9));
    FAIL() << "expected overflow";
  } catch (const NumericalAbort& e) {
    EXPECT_EQ(e.cause, Termination::overflow);
    EXPECT_NE(std::string(e.what()).find("amplitude overflow (blow-up proxy)"), std::string::npos);
  }
}

TEST(AdvanceStep, ConstantRhsIsExact) {
  const auto spec = desk_spec(256);
  const ModelParams p = make_params(1.2, 0.9);
  const auto s = build_initial_state(spec, p);
  StepControl ctrl;
  const double dt = 1e-9;
  const auto out = advance_step(s, p, ctrl, dt);
  ASSERT_EQ(out.status, StepStatus::accepted);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& a = out.state.markers[i];
    const auto& o = s.markers[i];
    const double expected = o.rho * std::exp(o.z) * dt;
    EXPECT_NEAR(a.omega, expected, 1e-12 * (expected + 1e-300));
    EXPECT_EQ(a.rho, o.rho);
  }
  EXPECT_DOUBLE_EQ(out.state.t, dt);
}

TEST(AdvanceStep, FourthOrderOnLinearVelocity) {
  // omega == 1 on a wide support with rho == 0: away from the ends the
  // velocity is exactly z - (2 g1 + g2), so Phi(t) = a + (Phi0 - a) e^t.
  const ModelParams p = params_with_gammas(0.2, 0.3);
  const double a = 2 * p.gamma1 + p.gamma2;
  LagrangianState s0;
  for (int i = 0; i <= 600; ++i) {
    const double z = 0.1 * i;
    s0.markers.push_back(Marker{z, z, 0.0, 1.0, 1.0, 1.0});
  }
  StepControl ctrl;
  const double T = 0.25;
  auto error_with = [&](int n_steps) {
    LagrangianState s = s0;
    const double dt = T / n_steps;
    for (int k = 0; k < n_steps; ++k) {
      auto out = advance_step(s, p, ctrl, dt);
      EXPECT_NE(out.status, StepStatus::crossing);
      s = std::move(out.state);
    }
    double err = 0.0;
    for (const auto& m : s.markers) {
      if (m.z < 2.0 || m.z > 20.0) continue;
      err = std::max(err, std::abs(m.phi - (a + (m.z - a) * std::exp(T))));
    }
    return err;
  };
  const double e1 = error_with(2), e2 = error_with(4), e3 = error_with(8);
  EXPECT_NEAR(e1 / e2, 16.0, 3.2);
  EXPECT_NEAR(e2 / e3, 16.0, 3.2);
}

TEST(AdvanceStep, CrossingDetected) {
  // Strong uniform vorticity compresses markers near the origin (K = -w there):
  // one huge step swaps them.
  LagrangianState s;
  for (int i = 0; i <= 50; ++i) {
    const double z = 0.1 * i;
    s.markers.push_back(Marker{z, z, 0.0, 100.0, 1.0, 100.0});
  }
  const ModelParams p = params_with_gammas(0.2, 0.3);
  const auto out = advance_step(s, p, StepControl{}, 1.0);
  EXPECT_EQ(out.status, StepStatus::crossing);
  EXPECT_NE(out.message.find("trajectory crossing"), std::string::npos);
}

TEST(StepControlTest, Validation) {
  StepControl c;
  EXPECT_NO_THROW(c.validate());
  c.dt_min = 1e-5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = StepControl{};
  c.dt_safety = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = StepControl{};
  c.rk_tol = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_DOUBLE_EQ(StepControl{}.resolved_h_max(desk_spec(4096)), 16.0 / 4096 * 4);
}

TEST(Refine, NoOpWhenResolved) {
  const auto spec = desk_spec(512);
  const auto s = build_initial_state(spec, make_params(1.2, 0.9));
  const auto r = refine_markers(s, StepControl{}, spec);
  EXPECT_EQ(r.inserted, 0u);
  ASSERT_EQ(r.state.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(r.state.markers[i].phi, s.markers[i].phi);
}

TEST(Refine, PlateauMarkersCarryExactDensity) {
  const auto spec = desk_spec(512);
  const auto s = smooth_state(spec, 161, 0.5, 15.0);
  StepControl ctrl;
  ctrl.h_max = 0.05;
  ctrl.max_markers = 10000;
  const auto r = refine_markers(s, ctrl, spec);
  EXPECT_EQ(r.inserted, 160u);
  EXPECT_TRUE(r.state.positions_increasing());
  std::size_t plateau = 0;
  for (const auto& m : r.state.markers) {
    EXPECT_EQ(m.rho, spec.rho0(m.z));
    EXPECT_EQ(m.omega, m.rho * m.W);
    if (m.z >= spec.L0 && m.z <= spec.L3) {
      EXPECT_EQ(m.rho, 1.0);
      ++plateau;
    }
  }
  EXPECT_GT(plateau, 100u);
}

TEST(Refine, BudgetCapsInsertions) {
  const auto spec = desk_spec(512);
  const auto s = smooth_state(spec, 161, 0.5, 15.0);
  StepControl ctrl;
  ctrl.h_max = 0.05;
  ctrl.max_markers = 200;
  const auto r = refine_markers(s, ctrl, spec);
  EXPECT_TRUE(r.capped);
  EXPECT_EQ(r.state.size(), 200u);
}

TEST(Refine, DoublingReducesVelocityError) {
  const auto spec = desk_spec(512);
  const ModelParams p = make_params(1.2, 0.9);
  const auto fine = smooth_state(spec, 40001, 0.5, 15.0);
  const auto coarse = smooth_state(spec, 241, 0.5, 15.0);
  StepControl ctrl;
  ctrl.h_max = 1e-3;
  ctrl.max_markers = 100000;
  const auto refined = refine_markers(coarse, ctrl, spec).state;
  ASSERT_EQ(refined.size(), 481u);

  const auto tf = build_prefix_table(fine), tc = build_prefix_table(coarse),
             tr = build_prefix_table(refined);
  double ec = 0.0, er = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double z = 1.013 + 0.0671 * k;
    const double ref = velocity_z(z, tf, p);
    ec = std::max(ec, std::abs(velocity_z(z, tc, p) - ref));
    er = std::max(er, std::abs(velocity_z(z, tr, p) - ref));
  }
  EXPECT_GE(ec / er, 3.0) << "coarse " << ec << " refined " << er;
}

TEST(Run, ZeroDensityIsEquilibrium) {
  auto spec = desk_spec(256);
  spec.amplitude = 0.0;
  const ModelParams p = make_params(1.2, 0.9);
  const auto res = run_simulation(p, spec, StepControl{}, 0.01);
  EXPECT_EQ(res.cause, Termination::horizon);
  for (const auto& m : res.final_state.markers) {
    EXPECT_EQ(m.omega, 0.0);
    EXPECT_EQ(m.phi, m.z);
  }
  for (const auto& f : res.frames) {
    EXPECT_EQ(f.sup_omega, 0.0);
    EXPECT_EQ(f.I_omega, 0.0);
    EXPECT_EQ(f.I_drho, 0.0);
    EXPECT_EQ(f.I_dxu, 0.0);
  }
  EXPECT_DOUBLE_EQ(res.final_state.t, 0.01);
}

TEST(Run, DeskInvariants) {
  const auto spec = desk_spec(512);
  const ModelParams p = make_params(1.2, 0.9);
  RunOptions opts;
  double last_t = -1.0, last_psi = -1e300, last_I = -1.0;
  std::size_t frames = 0;
  opts.observer = [&](const LagrangianState& s, const DiagnosticsFrame& f) {
    ++frames;
    EXPECT_GT(f.t, last_t);
    EXPECT_GE(f.psi, last_psi);
    EXPECT_GE(f.I_omega, last_I);
    last_t = f.t;
    last_psi = f.psi;
    last_I = f.I_omega;
    EXPECT_TRUE(s.positions_increasing());
    EXPECT_LE(f.omega_residual, 1e-8);
    for (const auto& m : s.markers) {
      EXPECT_GE(m.omega, 0.0);
      EXPECT_EQ(m.rho, spec.rho0(m.z));
    }
  };
  const auto res = run_simulation(p, spec, StepControl{}, 0.01, opts);
  EXPECT_GE(frames, 8u);
  EXPECT_NE(res.cause, Termination::crossing);
  // D agrees with label differences of Phi while the run is well resolved.
  for (const auto& f : res.frames) {
    if (f.sup_omega < 1e4) {
      EXPECT_EQ(f.quality & quality::d_mismatch, 0u) << "t=" << f.t;
    }
  }
}

TEST(Run, SignDefiniteDriftIsMonotone) {
  const auto spec = desk_spec(512);
  const ModelParams p = make_params(1.0, 1.0);
  std::map<double, double> last;
  RunOptions opts;
  opts.observer = [&](const LagrangianState& s, const DiagnosticsFrame&) {
    for (const auto& m : s.markers) {
      auto it = last.find(m.z);
      if (it != last.end()) {
        EXPECT_GE(m.phi, it->second) << "label " << m.z;
      }
      last[m.z] = m.phi;
    }
  };
  run_simulation(p, spec, StepControl{}, 0.01, opts);
  EXPECT_GT(last.size(), 500u);
}

TEST(Run, SmallWarmupBlowsUpBeforeComparisonTime) {
  const double TG = warmup_blowup_time_quadrature();
  const auto res = run_simulation(make_params(1.0, 1.0), warmup_spec(512), StepControl{}, 10.0);
  EXPECT_EQ(res.cause, Termination::omega_cap);
  EXPECT_LE(res.final_state.t, 1.1 * TG);
  for (std::size_t i = 1; i < res.frames.size(); ++i)
    EXPECT_LT(res.frames[i].delta_x, res.frames[i - 1].delta_x);
}
