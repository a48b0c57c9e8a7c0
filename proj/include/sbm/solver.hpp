#pragma once

// Time integration of the marker system: classical RK4 with step-doubling
// error control, stretching and collision guards on the step size, and
// midpoint marker refinement.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "biotsavart.hpp"
#include "diagnostics.hpp"
#include "model.hpp"

namespace sbm {

struct StepControl {
  double dt_init = 1e-6;
  double dt_min = 1e-14;
  double dt_safety = 0.8;
  double rk_tol = 1e-9;
  double omega_cap = 1e8;
  double h_max = 0.0;           // 0: (extent)/n_markers * 4
  double refine_tol = 0.05;
  std::size_t max_markers = 0;  // 0: 4 * n_markers
  std::size_t frame_stride = 10;
  std::size_t max_steps = 2'000'000;

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(std::string("solver constraint violated: ") + what);
    };
    require(dt_init > 0.0 && dt_min > 0.0, "dt_init > 0 and dt_min > 0");
    require(dt_min < dt_init, "dt_min < dt_init");
    require(dt_safety > 0.0 && dt_safety < 1.0, "0 < dt_safety < 1");
    require(rk_tol > 0.0, "rk_tol > 0");
    require(omega_cap > 0.0, "omega_cap > 0");
    require(h_max >= 0.0, "h_max >= 0");
    require(refine_tol > 0.0, "refine_tol > 0");
    require(frame_stride >= 1, "frame_stride >= 1");
  }

  double resolved_h_max(const InitialDataSpec& spec) const {
    if (h_max > 0.0) return h_max;
    const double extent = spec.frame == Frame::z_model
                              ? spec.L4 + 2.0
                              : spec.support_hi() - spec.support_lo() + 0.1;
    return extent / static_cast<double>(spec.n_markers) * 4.0;
  }

  std::size_t resolved_max_markers(const InitialDataSpec& spec) const {
    return max_markers > 0 ? max_markers : 4 * spec.n_markers;
  }
};

struct MarkerRate {
  double phi = 0.0, omega = 0.0, D = 0.0, W = 0.0;
};
using Rates = std::vector<MarkerRate>;

/// Raised when a right-hand side cannot be formed.
struct NumericalAbort : std::runtime_error {
  NumericalAbort(Termination c, const std::string& what) : std::runtime_error(what), cause(c) {}
  Termination cause;
};

namespace detail {

// Largest exponent with a finite e^phi and headroom for the accumulators.
inline constexpr double max_exponent = 700.0;

struct RateBounds {
  double max_stretch = 0.0;                                   // max |relative deformation rate|
  double collision_time = std::numeric_limits<double>::infinity();  // min gap / closing speed
};

inline RateBounds bounds_of(const LagrangianState& s, const Rates& k) {
  RateBounds b;
  const auto& m = s.markers;
  for (std::size_t i = 0; i < m.size(); ++i) {
    b.max_stretch = std::max(b.max_stretch, std::abs(k[i].D / m[i].D));
    if (s.frame == Frame::x_warmup)
      b.max_stretch = std::max(b.max_stretch, std::abs(k[i].phi / m[i].phi));
    if (i + 1 < m.size()) {
      const double closing = k[i].phi - k[i + 1].phi;
      if (closing > 0.0)
        b.collision_time = std::min(b.collision_time, (m[i + 1].phi - m[i].phi) / closing);
    }
  }
  return b;
}

inline LagrangianState axpy(const LagrangianState& s, double h, const Rates& k) {
  LagrangianState out = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& m = out.markers[i];
    m.phi += h * k[i].phi;
    m.omega += h * k[i].omega;
    m.D += h * k[i].D;
    m.W += h * k[i].W;
  }
  out.t = s.t + h;
  return out;
}

}  // namespace detail

/// Time derivatives of (phi, omega, D, W) for every marker.
inline Rates rhs_eval(const LagrangianState& s, const ModelParams& p) {
  const auto& m = s.markers;
  const std::size_t n = m.size();
  Rates r(n);
  if (s.frame == Frame::z_model) {
    std::vector<double> pos(n), u(n), K(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = m[i].phi;
      if (!(m[i].phi < detail::max_exponent))
        throw NumericalAbort(Termination::overflow, "amplitude overflow (blow-up proxy)");
    }
    PrefixTable table;
    try {
      table = build_prefix_table(s);
    } catch (const ConsistencyError&) {
      throw NumericalAbort(Termination::crossing, "trajectory crossing - resolution insufficient");
    }
    velocity_z_batch(pos, table, p, u, K);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(m[i].phi);
      r[i] = {u[i], m[i].rho * e, m[i].D * K[i], e};
    }
    return r;
  }
  if (!(m.front().phi > 0.0))
    throw NumericalAbort(Termination::crossing, "trajectory reached the origin - resolution insufficient");
  LinearXTable table;
  try {
    table = build_x_table(s);
  } catch (const ConsistencyError&) {
    throw NumericalAbort(Termination::crossing, "trajectory crossing - resolution insufficient");
  }
  std::vector<double> pos(n), u(n), dxu(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = m[i].phi;
  velocity_x_batch(pos, table, p, u, dxu);
  for (std::size_t i = 0; i < n; ++i) {
    const double inv = 1.0 / m[i].phi;
    if (!std::isfinite(inv))
      throw NumericalAbort(Termination::overflow, "amplitude overflow (blow-up proxy)");
    r[i] = {u[i], m[i].rho * inv, m[i].D * dxu[i], inv};
  }
  return r;
}

inline MarkerRate combine(const MarkerRate& a, const MarkerRate& b, const MarkerRate& c,
                          const MarkerRate& d) {
  auto f = [](double w, double x, double y, double z) { return (w + 2.0 * x + 2.0 * y + z) / 6.0; };
  return {f(a.phi, b.phi, c.phi, d.phi), f(a.omega, b.omega, c.omega, d.omega), f(a.D, b.D, c.D, d.D),
          f(a.W, b.W, c.W, d.W)};
}

inline double combine(double a, double b, double c, double d) { return (a + 2.0 * b + 2.0 * c + d) / 6.0; }

/// One classical RK4 step of size h for any state type supporting the
/// rhs(state) -> rates and axpy(state, h, rates) pair.
template <class State, class Rhs, class Axpy, class RatesT>
State rk4_step(const State& y, double h, const RatesT& k1, Rhs&& rhs, Axpy&& axpy) {
  const RatesT k2 = rhs(axpy(y, 0.5 * h, k1));
  const RatesT k3 = rhs(axpy(y, 0.5 * h, k2));
  const RatesT k4 = rhs(axpy(y, h, k3));
  RatesT sum = k1;
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = combine(k1[i], k2[i], k3[i], k4[i]);
  return axpy(y, h, sum);
}

enum class StepStatus { accepted, rejected, crossing, overflow };

struct StepOutcome {
  StepStatus status = StepStatus::rejected;
  LagrangianState state;  // two-half-step solution (valid unless crossing/overflow)
  double dt = 0.0;        // step attempted
  double dt_next = 0.0;   // error-controlled suggestion
  double error = 0.0;     // scaled step-doubling error (<= 1 accepts)
  std::string message;
};

/// One step of size dt: full RK4 step against two half steps.
inline StepOutcome advance_step(const LagrangianState& s, const ModelParams& p, const StepControl& ctrl,
                                double dt, const Rates* k1_in = nullptr) {
  StepOutcome out;
  out.dt = dt;
  auto rhs = [&](const LagrangianState& y) { return rhs_eval(y, p); };
  auto axpy = [](const LagrangianState& y, double h, const Rates& k) { return detail::axpy(y, h, k); };
  try {
    const Rates k1 = k1_in ? *k1_in : rhs(s);
    const LagrangianState full = rk4_step(s, dt, k1, rhs, axpy);
    const LagrangianState half = rk4_step(s, 0.5 * dt, k1, rhs, axpy);
    LagrangianState two = rk4_step(half, 0.5 * dt, rhs(half), rhs, axpy);
    two.t = s.t + dt;

    if (!two.positions_increasing()) {
      out.status = StepStatus::crossing;
      out.message = "trajectory crossing - resolution insufficient";
      out.state = std::move(two);
      return out;
    }

    double sup_w = 0.0, sup_W = 0.0;
    for (const auto& mk : two.markers) {
      sup_w = std::max(sup_w, std::abs(mk.omega));
      sup_W = std::max(sup_W, std::abs(mk.W));
    }
    double err = 0.0;
    auto acc = [&err](double a, double b, double scale) {
      const double d = std::abs(a - b);
      if (d > 0.0) err = std::max(err, d / scale);
    };
    const double tiny = std::numeric_limits<double>::min();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& a = two.markers[i];
      const auto& b = full.markers[i];
      const auto& o = s.markers[i];
      acc(a.phi, b.phi, std::max(std::abs(o.phi), std::abs(a.phi)) + tiny);
      acc(a.D, b.D, std::max(std::abs(o.D), std::abs(a.D)) + tiny);
      acc(a.omega, b.omega, std::max({std::abs(o.omega), std::abs(a.omega), 1e-6 * sup_w}) + tiny);
      acc(a.W, b.W, std::max({std::abs(o.W), std::abs(a.W), 1e-6 * sup_W}) + tiny);
    }
    for (const auto& mk : two.markers)
      if (!std::isfinite(mk.phi) || !std::isfinite(mk.omega) || !std::isfinite(mk.D) ||
          !std::isfinite(mk.W)) {
        out.status = StepStatus::overflow;
        out.message = "amplitude overflow (blow-up proxy)";
        return out;
      }
    err /= 15.0 * ctrl.rk_tol;
    out.error = err;
    const double factor = err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 4.0) : 4.0;
    out.dt_next = dt * factor;
    out.status = err <= 1.0 ? StepStatus::accepted : StepStatus::rejected;
    out.state = std::move(two);
  } catch (const NumericalAbort& e) {
    out.status = e.cause == Termination::overflow ? StepStatus::overflow : StepStatus::crossing;
    out.message = e.what();
  }
  return out;
}

namespace detail {

/// Fritsch-Carlson derivative of the data at node k.
inline double pchip_slope(const std::vector<Marker>& m, std::size_t k, double Marker::*f) {
  const std::size_t n = m.size();
  auto secant = [&](std::size_t a) { return (m[a + 1].*f - m[a].*f) / (m[a + 1].z - m[a].z); };
  if (k == 0) return secant(0);
  if (k == n - 1) return secant(n - 2);
  const double d0 = secant(k - 1), d1 = secant(k);
  if (d0 * d1 <= 0.0) return 0.0;
  const double h0 = m[k].z - m[k - 1].z, h1 = m[k + 1].z - m[k].z;
  const double w1 = 2.0 * h1 + h0, w2 = h1 + 2.0 * h0;
  return (w1 + w2) / (w1 / d0 + w2 / d1);
}

inline double pchip_midpoint(const std::vector<Marker>& m, std::size_t i, double Marker::*f) {
  const double h = m[i + 1].z - m[i].z;
  return 0.5 * (m[i].*f + m[i + 1].*f) + h * (pchip_slope(m, i, f) - pchip_slope(m, i + 1, f)) / 8.0;
}

}  // namespace detail

struct RefineResult {
  LagrangianState state;
  std::size_t inserted = 0;
  bool capped = false;
};

/// Splits every interval whose position gap exceeds h_max or whose vorticity
/// jump exceeds refine_tol * sup omega, up to the marker budget.
inline RefineResult refine_markers(const LagrangianState& s, const StepControl& ctrl,
                                   const InitialDataSpec& spec) {
  RefineResult r;
  const auto& m = s.markers;
  const double h_max = ctrl.resolved_h_max(spec);
  const std::size_t budget = ctrl.resolved_max_markers(spec);
  const double sup_w = s.sup_omega();

  std::vector<std::size_t> split;
  for (std::size_t i = 0; i + 1 < m.size(); ++i) {
    const bool gap = m[i + 1].phi - m[i].phi > h_max;
    const bool jump = sup_w > 0.0 && std::abs(m[i + 1].omega - m[i].omega) > ctrl.refine_tol * sup_w;
    if (gap || jump) split.push_back(i);
  }
  if (split.empty()) {
    r.state = s;
    return r;
  }
  if (m.size() + split.size() > budget) {
    r.capped = true;
    split.resize(budget > m.size() ? budget - m.size() : 0);
    if (split.empty()) {
      r.state = s;
      return r;
    }
  }

  r.state.frame = s.frame;
  r.state.t = s.t;
  r.state.markers.reserve(m.size() + split.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    r.state.markers.push_back(m[i]);
    if (next < split.size() && split[next] == i) {
      ++next;
      Marker mid;
      mid.z = 0.5 * (m[i].z + m[i + 1].z);
      mid.rho = spec.rho0(mid.z);
      mid.phi = detail::pchip_midpoint(m, i, &Marker::phi);
      mid.D = detail::pchip_midpoint(m, i, &Marker::D);
      mid.W = detail::pchip_midpoint(m, i, &Marker::W);
      mid.omega = mid.rho * mid.W;
      // Guard against interpolation overshoot in strongly graded data.
      if (!(mid.phi > m[i].phi && mid.phi < m[i + 1].phi)) mid.phi = 0.5 * (m[i].phi + m[i + 1].phi);
      if (!(mid.D > 0.0)) mid.D = 0.5 * (m[i].D + m[i + 1].D);
      r.state.markers.push_back(mid);
    }
  }
  r.inserted = split.size();
  return r;
}

// ---------------------------------------------------------------------------

struct RunOptions {
  /// Times the stepper lands on exactly; a frame is emitted at each.
  std::vector<double> frame_times;
  /// Called for every emitted frame with the state it was computed from.
  std::function<void(const LagrangianState&, const DiagnosticsFrame&)> observer;
};

struct RunResult {
  std::vector<DiagnosticsFrame> frames;
  LagrangianState final_state;
  Termination cause = Termination::horizon;
  std::string message;
  std::size_t steps = 0;
  std::size_t rejected = 0;
};

inline RunResult run_simulation(const ModelParams& params, const InitialDataSpec& spec,
                                const StepControl& ctrl, double t_end, const RunOptions& opts = {}) {
  ctrl.validate();
  RunResult res;
  LagrangianState state = build_initial_state(spec, params);
  RunningIntegrals running;
  bool capped = false;

  std::vector<double> stops = opts.frame_times;
  std::sort(stops.begin(), stops.end());
  std::size_t next_stop = 0;
  while (next_stop < stops.size() && stops[next_stop] <= 0.0) ++next_stop;

  double dt_taken = 0.0;
  auto emit = [&]() {
    DiagnosticsFrame f = compute_frame(state, params, spec, running);
    f.dt = dt_taken;
    if (capped) f.quality |= quality::marker_cap;
    res.frames.push_back(f);
    if (opts.observer) opts.observer(state, f);
  };
  auto finish = [&](Termination cause, std::string msg) {
    res.cause = cause;
    res.message = std::move(msg);
    if (res.frames.empty() || res.frames.back().t != state.t) emit();
  };

  emit();
  double dt = ctrl.dt_init;
  std::size_t since_frame = 0;
  while (true) {
    if (state.t >= t_end) {
      finish(Termination::horizon, "reached t_end");
      break;
    }
    if (res.steps >= ctrl.max_steps) {
      finish(Termination::step_underflow, "step budget exhausted near suspected singularity");
      break;
    }
    Rates k1;
    try {
      k1 = rhs_eval(state, params);
    } catch (const NumericalAbort& e) {
      finish(e.cause, e.what());
      break;
    }
    const auto b = detail::bounds_of(state, k1);
    double dt_free = dt;
    if (b.max_stretch > 0.0) dt_free = std::min(dt_free, ctrl.dt_safety / b.max_stretch);
    dt_free = std::min(dt_free, ctrl.dt_safety * b.collision_time);
    if (dt_free < ctrl.dt_min) {
      finish(Termination::step_underflow, "step underflow near suspected singularity");
      break;
    }
    double target = t_end;
    if (next_stop < stops.size()) target = std::min(target, stops[next_stop]);
    double dt_try = dt_free;
    bool lands = false;
    if (state.t + dt_try >= target) {
      dt_try = target - state.t;
      lands = true;
    }

    StepOutcome out = advance_step(state, params, ctrl, dt_try, &k1);
    if (out.status == StepStatus::rejected) {
      ++res.rejected;
      dt = out.dt_next;
      continue;
    }
    if (out.status == StepStatus::crossing || out.status == StepStatus::overflow) {
      ++res.rejected;
      dt = 0.25 * dt_try;
      if (dt < ctrl.dt_min) {
        finish(out.status == StepStatus::overflow ? Termination::overflow : Termination::crossing,
               out.message);
        break;
      }
      continue;
    }

    dt_taken = dt_try;
    state = std::move(out.state);
    if (lands) state.t = target;
    ++res.steps;
    dt = lands ? std::max(dt_free, out.dt_next) : out.dt_next;

    auto ref = refine_markers(state, ctrl, spec);
    capped = capped || ref.capped;
    if (ref.inserted > 0) state = std::move(ref.state);
    running.advance(state.t, compute_norms(state, params, spec));

    bool at_stop = false;
    while (next_stop < stops.size() && stops[next_stop] <= state.t) {
      ++next_stop;
      at_stop = true;
    }
    if (++since_frame >= ctrl.frame_stride || at_stop) {
      emit();
      since_frame = 0;
    }
    if (state.sup_omega() > ctrl.omega_cap) {
      finish(Termination::omega_cap, "sup omega exceeded omega_cap (blow-up proxy)");
      break;
    }
  }
  res.final_state = std::move(state);
  return res;
}

}  // namespace sbm
