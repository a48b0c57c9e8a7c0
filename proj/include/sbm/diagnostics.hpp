#pragma once

// Per-frame blow-up indicators, the positivity window of the stretching
// quantity, and comparison checks of the simulated state against oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "biotsavart.hpp"
#include "model.hpp"

namespace sbm {

namespace quality {
inline constexpr std::uint32_t d_mismatch = 1u;        // D off its label finite difference by > 2%
inline constexpr std::uint32_t marker_cap = 2u;        // refinement suppressed by the marker budget
inline constexpr std::uint32_t omega_residual = 4u;    // |omega - rho W| above 1e-8 (1 + sup omega)
}  // namespace quality

/// Instantaneous sup-norms and extrema of one state.
struct Norms {
  double sup_omega = 0.0;
  double sup_dzrho = 0.0;
  double sup_dxrho = 0.0;
  double sup_dxu = 0.0;
  double min_K = 0.0;
  double max_K = 0.0;
  double min_D = 1.0;
  double delta_x = 1.0;
  double omega_residual = 0.0;  // sup |omega - rho W| / (1 + sup omega)
  double d_mismatch = 0.0;      // worst relative D vs finite-difference mismatch
};

struct DiagnosticsFrame {
  double t = 0.0;
  double delta_x = 1.0;
  double psi = 0.0;
  double sup_omega = 0.0;
  double sup_dzrho = 0.0;
  double sup_dxrho = 0.0;
  double sup_dxu = 0.0;
  double min_K = 0.0;
  double max_K = 0.0;
  double min_D = 1.0;
  double I_omega = 0.0;
  double I_drho = 0.0;
  double I_dxu = 0.0;
  double dt = 0.0;
  std::uint32_t quality = 0;
  std::size_t n_markers = 0;
  double omega_residual = 0.0;
};

/// Time integrals of the sup-norms, advanced by the trapezoid rule.
struct RunningIntegrals {
  bool started = false;
  double t = 0.0;
  Norms last;
  double I_omega = 0.0, I_drho = 0.0, I_dxu = 0.0;
  double psi = -std::numeric_limits<double>::infinity();

  void advance(double t_new, const Norms& n) {
    if (started) {
      const double h = t_new - t;
      I_omega += 0.5 * h * (last.sup_omega + n.sup_omega);
      I_drho += 0.5 * h * (last.sup_dxrho + n.sup_dxrho);
      I_dxu += 0.5 * h * (last.sup_dxu + n.sup_dxu);
    }
    started = true;
    t = t_new;
    last = n;
    psi = std::max(psi, -std::log(n.delta_x));
  }
};

namespace detail {

/// Phi at an arbitrary label by linear interpolation in label.
inline double phi_at_label(const LagrangianState& s, double label) {
  const auto& m = s.markers;
  if (label <= m.front().z) return m.front().phi + (label - m.front().z);
  if (label >= m.back().z) return m.back().phi + (label - m.back().z);
  auto it = std::upper_bound(m.begin(), m.end(), label,
                             [](double v, const Marker& mk) { return v < mk.z; });
  const std::size_t i = static_cast<std::size_t>(it - m.begin()) - 1;
  const double w = (label - m[i].z) / (m[i + 1].z - m[i].z);
  return m[i].phi + w * (m[i + 1].phi - m[i].phi);
}

/// Label whose trajectory sits at position y (inverse flow map), by linear interpolation.
inline double label_at_position(const LagrangianState& s, double y) {
  const auto& m = s.markers;
  if (y <= m.front().phi) return m.front().z - (m.front().phi - y);
  if (y >= m.back().phi) return m.back().z + (y - m.back().phi);
  auto it = std::upper_bound(m.begin(), m.end(), y,
                             [](double v, const Marker& mk) { return v < mk.phi; });
  const std::size_t i = static_cast<std::size_t>(it - m.begin()) - 1;
  const double w = (y - m[i].phi) / (m[i + 1].phi - m[i].phi);
  return m[i].z + w * (m[i + 1].z - m[i].z);
}

}  // namespace detail

/// Current position of the support edge nearest the origin: the trajectory of
/// the top label L4 in z, of the bottom support label in x.
inline double support_edge_position(const LagrangianState& s, const InitialDataSpec& spec) {
  const double label = s.frame == Frame::z_model ? spec.support_hi() : spec.support_lo();
  return detail::phi_at_label(s, label);
}

/// delta(t): x-distance of the support to the origin.
inline double delta_of(const LagrangianState& s, const InitialDataSpec& spec) {
  const double edge = support_edge_position(s, spec);
  return s.frame == Frame::z_model ? std::exp(-edge) : edge;
}

/// Labels [L1, Phi^{-1}(Phi(L4,t)+gamma1, t)) where the stretching quantity is
/// expected to be positive.
struct Window {
  double label_lo = 0.0;
  double label_hi = 0.0;
};

inline Window positivity_window(const LagrangianState& s, const ModelParams& p,
                                const InitialDataSpec& spec) {
  const double top = detail::phi_at_label(s, spec.L4) + p.gamma1;
  return {spec.L1, detail::label_at_position(s, top)};
}

inline Norms compute_norms(const LagrangianState& s, const ModelParams& p,
                           const InitialDataSpec& spec) {
  Norms n;
  const auto& m = s.markers;
  const std::size_t N = m.size();
  std::vector<double> pos(N), u(N), K(N);
  for (std::size_t i = 0; i < N; ++i) pos[i] = m[i].phi;

  n.sup_omega = s.sup_omega();
  n.min_D = std::numeric_limits<double>::infinity();
  double resid = 0.0;
  for (const auto& mk : m) {
    n.min_D = std::min(n.min_D, mk.D);
    resid = std::max(resid, std::abs(mk.omega - mk.rho * mk.W));
  }
  n.omega_residual = resid / (1.0 + n.sup_omega);

  for (std::size_t i = 0; i + 1 < N; ++i) {
    const double drho = std::abs(m[i + 1].rho - m[i].rho);
    if (drho == 0.0) continue;
    const double dphi = m[i + 1].phi - m[i].phi;
    if (s.frame == Frame::z_model) {
      const double dz = drho / dphi;
      n.sup_dzrho = std::max(n.sup_dzrho, dz);
      n.sup_dxrho = std::max(n.sup_dxrho, dz * std::exp(0.5 * (m[i].phi + m[i + 1].phi)));
    } else {
      n.sup_dxrho = std::max(n.sup_dxrho, drho / dphi);
      n.sup_dzrho = std::max(n.sup_dzrho, drho / std::log(m[i + 1].phi / m[i].phi));
    }
  }

  double mk_lo = std::numeric_limits<double>::infinity();
  double mk_hi = -std::numeric_limits<double>::infinity();
  if (s.frame == Frame::z_model) {
    const PrefixTable table = build_prefix_table(s);
    velocity_z_batch(pos, table, p, u, K);
    // du/dx = u~ - du~/dz; include z = 0 (x = 1) and z -> inf (x -> 0).
    double sup = std::abs(velocity_z(0.0, table, p) - stretch_rate(0.0, table, p));
    sup = std::max(sup, std::abs(table.cumulative().back()));
    for (std::size_t i = 0; i < N; ++i) sup = std::max(sup, std::abs(u[i] - K[i]));
    n.sup_dxu = sup;

    const Window w = positivity_window(s, p, spec);
    for (std::size_t i = 0; i < N; ++i) {
      if (m[i].z < w.label_lo || !(m[i].z < w.label_hi)) continue;
      mk_lo = std::min(mk_lo, K[i]);
      mk_hi = std::max(mk_hi, K[i]);
    }
  } else {
    const LinearXTable table = build_x_table(s);
    velocity_x_batch(pos, table, p, u, K);  // K holds du/dx here
    double sup = std::abs(dx_velocity_at_origin(table));
    for (std::size_t i = 0; i < N; ++i) {
      sup = std::max(sup, std::abs(K[i]));
      if (m[i].rho > 0.0) {
        const double k = K[i] - u[i] / m[i].phi;  // log-coordinate stretching rate
        mk_lo = std::min(mk_lo, k);
        mk_hi = std::max(mk_hi, k);
      }
    }
    n.sup_dxu = sup;
  }
  if (mk_lo <= mk_hi) {
    n.min_K = mk_lo;
    n.max_K = mk_hi;
  }

  // D against centred label differences where the label mesh is locally uniform.
  for (std::size_t i = 1; i + 1 < N; ++i) {
    const double h0 = m[i].z - m[i - 1].z, h1 = m[i + 1].z - m[i].z;
    if (h1 > 1.25 * h0 || h0 > 1.25 * h1) continue;
    const double fd = (m[i + 1].phi - m[i - 1].phi) / (m[i + 1].z - m[i - 1].z);
    n.d_mismatch = std::max(n.d_mismatch, std::abs(m[i].D - fd) / std::abs(fd));
  }
  n.delta_x = delta_of(s, spec);
  return n;
}

inline DiagnosticsFrame compute_frame(const LagrangianState& s, const ModelParams& p,
                                      const InitialDataSpec& spec, RunningIntegrals& running) {
  if (!running.started || running.t != s.t) running.advance(s.t, compute_norms(s, p, spec));
  const Norms& n = running.last;
  DiagnosticsFrame f;
  f.t = s.t;
  f.delta_x = n.delta_x;
  f.psi = running.psi;
  f.sup_omega = n.sup_omega;
  f.sup_dzrho = n.sup_dzrho;
  f.sup_dxrho = n.sup_dxrho;
  f.sup_dxu = n.sup_dxu;
  f.min_K = n.min_K;
  f.max_K = n.max_K;
  f.min_D = n.min_D;
  f.I_omega = running.I_omega;
  f.I_drho = running.I_drho;
  f.I_dxu = running.I_dxu;
  f.n_markers = s.size();
  f.omega_residual = n.omega_residual;
  if (n.d_mismatch > 0.02) f.quality |= quality::d_mismatch;
  if (n.omega_residual > 1e-8) f.quality |= quality::omega_residual;
  return f;
}

// ---------------------------------------------------------------------------
// Checks

struct PositivityResult {
  double min_K = 0.0;
  double sup_K = 0.0;
  Window window;
  std::size_t n_window = 0;
  bool pass = true;
  // Lower bound K >= (2e^{-g1-g2}-1) W on labels in [L2, L3].
  double min_bound_slack = 0.0;
  bool bound_pass = true;
};

inline PositivityResult check_positivity_window(const LagrangianState& s, const ModelParams& p,
                                                const InitialDataSpec& spec) {
  PositivityResult r;
  if (s.frame != Frame::z_model) throw ConfigError("positivity window is defined in the z frame");
  const auto& m = s.markers;
  const PrefixTable table = build_prefix_table(s);
  std::vector<double> pos(m.size()), u(m.size()), K(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) pos[i] = m[i].phi;
  velocity_z_batch(pos, table, p, u, K);

  r.window = positivity_window(s, p, spec);
  const double c = p.growth_constant();
  bool any_w = false, any_b = false;
  for (std::size_t i = 0; i < m.size(); ++i) {
    r.sup_K = std::max(r.sup_K, std::abs(K[i]));
    if (m[i].z >= r.window.label_lo && m[i].z < r.window.label_hi) {
      r.min_K = any_w ? std::min(r.min_K, K[i]) : K[i];
      any_w = true;
      ++r.n_window;
    }
    if (m[i].z >= spec.L2 && m[i].z <= spec.L3) {
      const double slack = K[i] - c * m[i].W;
      r.min_bound_slack = any_b ? std::min(r.min_bound_slack, slack) : slack;
      any_b = true;
    }
  }
  r.pass = r.min_K >= -1e-10 * s.sup_omega();
  r.bound_pass = r.min_bound_slack >= -1e-6 * (1.0 + r.sup_K);
  return r;
}

/// Upper comparison curve Gamma(z, t) for one label.
template <class Oracle>
struct GammaProbe {
  double label;
  Oracle oracle;  // needs value(t) and blowup_time()
};

struct GammaCheck {
  bool pass = true;
  std::size_t checked = 0;
  std::size_t skipped = 0;       // probes outside the marker label range
  std::size_t beyond_tstar = 0;  // probes past 0.9 t*(z)
  double worst_ratio = 0.0;      // max Phi / Gamma
};

/// Phi(z,t) <= Gamma(z,t)(1 + 1e-3) at every probe with t < 0.9 t*(z).
template <class Oracle>
GammaCheck check_gamma_bound(const LagrangianState& s, const std::vector<GammaProbe<Oracle>>& probes,
                             double t_fraction = 0.9, double slack = 1e-3) {
  GammaCheck r;
  const auto& m = s.markers;
  for (const auto& pr : probes) {
    if (pr.label < m.front().z || pr.label > m.back().z) {
      ++r.skipped;
      continue;
    }
    if (s.t > t_fraction * pr.oracle.blowup_time()) {
      ++r.beyond_tstar;
      continue;
    }
    const double phi = detail::phi_at_label(s, pr.label);
    const double g = pr.oracle.value(s.t);
    ++r.checked;
    r.worst_ratio = std::max(r.worst_ratio, phi / g);
    if (!(phi <= g * (1.0 + slack))) r.pass = false;
  }
  return r;
}

struct FComparison {
  bool pass = true;
  std::size_t checked = 0;
  double worst_ratio = std::numeric_limits<double>::infinity();  // min D / f
};

/// D_i >= f(z_i, t)(1 - slack) for labels in [L2, L3] wherever f is finite.
template <class Field>
FComparison check_f_comparison(const LagrangianState& s, const Field& f, double L2, double L3,
                               double slack = 1e-3) {
  FComparison r;
  for (const auto& mk : s.markers) {
    if (mk.z < L2 || mk.z > L3) continue;
    const std::optional<double> fv = f.value(mk.z, s.t);
    if (!fv || !std::isfinite(*fv)) continue;
    ++r.checked;
    r.worst_ratio = std::min(r.worst_ratio, mk.D / *fv);
    if (!(mk.D >= *fv * (1.0 - slack))) r.pass = false;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Blow-up classification

enum class Termination { horizon, omega_cap, step_underflow, crossing, overflow };

inline const char* to_string(Termination c) {
  switch (c) {
    case Termination::horizon: return "horizon";
    case Termination::omega_cap: return "omega_cap";
    case Termination::step_underflow: return "step_underflow";
    case Termination::crossing: return "crossing";
    case Termination::overflow: return "overflow";
  }
  return "unknown";
}

enum class Classification { blowup, regular_horizon, aborted };

inline const char* to_string(Classification c) {
  switch (c) {
    case Classification::blowup: return "blowup";
    case Classification::regular_horizon: return "regular_horizon";
    case Classification::aborted: return "aborted";
  }
  return "unknown";
}

struct BlowupReport {
  Classification classification = Classification::aborted;
  std::optional<double> T_est;
  double final_sup_omega = 0.0;
  double final_I_omega = 0.0;
  double final_I_drho = 0.0;
  double final_I_dxu = 0.0;
  double loglog_slope = 0.0;
  std::size_t fit_points = 0;
  std::string reason;
};

namespace detail {

struct LineFit {
  double intercept = 0.0, slope = 0.0;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  return f;
}

}  // namespace detail

/// Growth signature over the last decade of sup omega (frames with
/// sup_omega >= final/10, at least 3): log-log slope of sup omega against t
/// above 1.5, and a linear fit of 1/sup_omega extrapolated to zero for T.
inline BlowupReport detect_blowup(const std::vector<DiagnosticsFrame>& frames, Termination cause) {
  BlowupReport r;
  if (cause == Termination::horizon) {
    // Reaching the horizon needs no growth estimate.
    r.classification = Classification::regular_horizon;
    r.reason = "reached the horizon";
    if (!frames.empty()) {
      const auto& last = frames.back();
      r.final_sup_omega = last.sup_omega;
      r.final_I_omega = last.I_omega;
      r.final_I_drho = last.I_drho;
      r.final_I_dxu = last.I_dxu;
    }
    return r;
  }
  if (frames.size() < 8) {
    r.classification = Classification::aborted;
    r.reason = "too few frames for the estimator (need >= 8)";
    if (!frames.empty()) r.final_sup_omega = frames.back().sup_omega;
    return r;
  }
  const auto& last = frames.back();
  r.final_sup_omega = last.sup_omega;
  r.final_I_omega = last.I_omega;
  r.final_I_drho = last.I_drho;
  r.final_I_dxu = last.I_dxu;

  std::vector<double> lt, lw, t, inv;
  if (last.sup_omega > 0.0) {
    const double floor = last.sup_omega / 10.0;
    std::size_t first = frames.size();
    while (first > 0 && frames[first - 1].sup_omega >= floor && frames[first - 1].t > 0.0) --first;
    if (frames.size() - first < 3) first = frames.size() >= 3 ? frames.size() - 3 : 0;
    for (std::size_t i = first; i < frames.size(); ++i) {
      const auto& f = frames[i];
      if (!(f.t > 0.0) || !(f.sup_omega > 0.0)) continue;
      lt.push_back(std::log(f.t));
      lw.push_back(std::log(f.sup_omega));
      t.push_back(f.t);
      inv.push_back(1.0 / f.sup_omega);
    }
  }
  r.fit_points = t.size();
  if (t.size() >= 2) r.loglog_slope = detail::least_squares(lt, lw).slope;
  const bool growth = t.size() >= 2 && r.loglog_slope > 1.5;

  const bool proxy = cause == Termination::omega_cap || cause == Termination::step_underflow ||
                     cause == Termination::overflow;
  if (proxy && growth) {
    const auto fit = detail::least_squares(t, inv);
    double T = last.t;
    if (fit.slope < 0.0) T = std::max(last.t, -fit.intercept / fit.slope);
    r.classification = Classification::blowup;
    r.T_est = T;
    r.reason = std::string("blow-up proxy '") + to_string(cause) + "' with super-linear growth";
  } else {
    r.classification = Classification::aborted;
    r.reason = std::string("terminated by '") + to_string(cause) + "' without a growth signature";
  }
  return r;
}

}  // namespace sbm
