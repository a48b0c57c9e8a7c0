#pragma once

// Auxiliary comparison problems, solved independently of the marker
// simulator (Boost.Odeint for the ODEs, Boost.Math for the quadratures):
//
//   Gamma:  dG/dt = e^G G t, G(0) = z          upper bound on trajectories
//   G:      G'' = G^2/2, G(0) = 1, G'(0) = 0   lower bound on 1/Phi(1/3, t)
//   f:      df/dt = c int_0^t exp(int_{L2}^z f) ds, f(z,0) = 1/2
//   tau0:   tau e^{Gamma(3 L1, tau)} = eps / (tau (g1 + g2 + eps))

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/expint.hpp>
#include <boost/numeric/odeint.hpp>

#include "model.hpp"

namespace sbm {

/// Numerical failure of an oracle (no bracket, no convergence).
struct OracleFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleCurve {
  std::vector<double> grid;
  std::vector<double> values;
  std::vector<double> derivative;  // optional companion series (G' for the G oracle)
  std::optional<double> blowup_time;
  std::string method;
};

// ---------------------------------------------------------------------------
// Gamma

/// int_z^inf e^{-s}/s ds by double-exponential quadrature.
inline double exp_integral_tail(double z) {
  if (!(z > 0.0)) throw DomainError("exp_integral_tail: z must be > 0");
  boost::math::quadrature::exp_sinh<double> integrator;
  // Shift to [0, inf) and factor out e^{-z} so the integrand is O(1).
  const double v = integrator.integrate([z](double s) { return std::exp(-s) / (z + s); });
  return std::exp(-z) * v;
}

/// Blow-up time t*(z) = sqrt(2 int_z^inf e^{-s}/s ds).
inline double gamma_blowup_time(double z) { return std::sqrt(2.0 * exp_integral_tail(z)); }

/// Closed-form Gamma(z, t) from E1(z) - E1(Gamma) = t^2/2.
class GammaOracle {
 public:
  explicit GammaOracle(double z) : z_(z) {
    if (!(z > 0.0)) throw DomainError("GammaOracle: z must be > 0");
    e1z_ = boost::math::expint(1, z);
    tstar_ = std::sqrt(2.0 * e1z_);
  }

  double label() const { return z_; }
  double blowup_time() const { return tstar_; }

  /// +inf at and beyond t*.
  double value(double t) const {
    if (t <= 0.0) return z_;
    const double target = e1z_ - 0.5 * t * t;
    if (!(target > 0.0)) return std::numeric_limits<double>::infinity();
    // Solve E1(G) = target for G >= z by Newton in G with a bisection safeguard.
    double lo = z_, hi = z_ + 1.0;
    while (boost::math::expint(1, hi) > target) {
      lo = hi;
      hi = z_ + 2.0 * (hi - z_);
    }
    double g = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      const double e = boost::math::expint(1, g);
      const double F = e - target;
      if (F > 0.0) lo = g; else hi = g;
      const double dF = -std::exp(-g) / g;
      double next = g - F / dF;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - g) <= 1e-15 * g) {
        g = next;
        break;
      }
      g = next;
    }
    return g;
  }

 private:
  double z_, e1z_, tstar_;
};

/// Gamma(z, .) by adaptive Dormand-Prince on [0, fraction * t*].
inline OracleCurve solve_gamma(double z, double tol = 1e-12, std::size_t samples = 256,
                               double fraction = 0.99) {
  if (!(z > 0.0)) throw DomainError("solve_gamma: z must be > 0");
  namespace ode = boost::numeric::odeint;
  OracleCurve c;
  c.method = "gamma:dopri5";
  c.blowup_time = gamma_blowup_time(z);
  const double t_last = fraction * *c.blowup_time;
  for (std::size_t k = 0; k < samples; ++k)
    c.grid.push_back(t_last * static_cast<double>(k) / static_cast<double>(samples - 1));

  using State = std::vector<double>;
  State y{z};
  auto rhs = [](const State& x, State& dx, double t) { dx[0] = std::exp(x[0]) * x[0] * t; };
  auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<State>());
  ode::integrate_times(stepper, rhs, y, c.grid.begin(), c.grid.end(), t_last * 1e-6,
                       [&c](const State& x, double) { c.values.push_back(x[0]); });
  return c;
}

// ---------------------------------------------------------------------------
// G (warm-up lower bound)

/// T_G = sqrt(3) int_1^inf (G^3 - 1)^{-1/2} dG, with G = 1 + s^2.
inline double warmup_blowup_time_quadrature() {
  boost::math::quadrature::exp_sinh<double> integrator;
  const double v = integrator.integrate(
      [](double s) { return 2.0 / std::sqrt(s * s * s * s + 3.0 * s * s + 3.0); });
  return std::sqrt(3.0) * v;
}

/// G'' = G^2/2 from (1, 0) until G reaches g_stop; the remaining time to
/// blow-up is the tail sqrt(3) int_{G}^{inf} G^{-3/2} dG.
inline OracleCurve solve_warmup_g(double tol = 1e-12, double g_stop = 1e10) {
  namespace ode = boost::numeric::odeint;
  using State = std::vector<double>;
  OracleCurve c;
  c.method = "warmup_g:dopri5";
  State y{1.0, 0.0};
  auto rhs = [](const State& x, State& dx, double) {
    dx[0] = x[1];
    dx[1] = 0.5 * x[0] * x[0];
  };
  auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<State>());
  double t = 0.0, dt = 1e-3;
  c.grid.push_back(t);
  c.values.push_back(y[0]);
  c.derivative.push_back(y[1]);
  std::size_t guard = 0;
  while (y[0] < g_stop) {
    if (++guard > 10'000'000) throw OracleFailure("G oracle: step budget exhausted");
    if (stepper.try_step(rhs, y, t, dt) == ode::fail) continue;
    c.grid.push_back(t);
    c.values.push_back(y[0]);
    c.derivative.push_back(y[1]);
  }
  c.blowup_time = c.grid.back() + 2.0 * std::sqrt(3.0) / std::sqrt(c.values.back());
  return c;
}

// ---------------------------------------------------------------------------
// f (deformation lower bound)

/// f sampled on a uniform (z, t) grid; +inf marks blown-up entries.
struct FField {
  double z0 = 0.0, z1 = 1.0, t_max = 1.0;
  std::size_t n_z = 0, n_t = 0;
  std::vector<double> data;  // data[j * n_t + k] = f(z_j, t_k)

  double z(std::size_t j) const { return z0 + (z1 - z0) * static_cast<double>(j) / static_cast<double>(n_z - 1); }
  double t(std::size_t k) const { return t_max * static_cast<double>(k) / static_cast<double>(n_t - 1); }
  double& at(std::size_t j, std::size_t k) { return data[j * n_t + k]; }
  double at(std::size_t j, std::size_t k) const { return data[j * n_t + k]; }

  /// Bilinear interpolation; nullopt outside the grid or where a corner is
  /// not finite.
  std::optional<double> value(double zq, double tq) const {
    if (zq < z0 || zq > z1 || tq < 0.0 || tq > t_max) return std::nullopt;
    const double uz = (zq - z0) / (z1 - z0) * static_cast<double>(n_z - 1);
    const double ut = tq / t_max * static_cast<double>(n_t - 1);
    const std::size_t j = std::min(static_cast<std::size_t>(uz), n_z - 2);
    const std::size_t k = std::min(static_cast<std::size_t>(ut), n_t - 2);
    const double a = uz - static_cast<double>(j), b = ut - static_cast<double>(k);
    const double f00 = at(j, k), f01 = at(j, k + 1), f10 = at(j + 1, k), f11 = at(j + 1, k + 1);
    if (!std::isfinite(f00) || !std::isfinite(f01) || !std::isfinite(f10) || !std::isfinite(f11))
      return std::nullopt;
    return (1 - a) * ((1 - b) * f00 + b * f01) + a * ((1 - b) * f10 + b * f11);
  }
};

inline constexpr double f_blowup_level = 1e12;

inline FField make_f_seed(double L2, double L3, double t_max, std::size_t n_z, std::size_t n_t) {
  FField f;
  f.z0 = L2;
  f.z1 = L3;
  f.t_max = t_max;
  f.n_z = n_z;
  f.n_t = n_t;
  f.data.assign(n_z * n_t, 0.5);
  return f;
}

/// One Picard sweep f_n = 1/2 + c int_0^t (t-s) exp(int_{L2}^z f_{n-1}(y,s) dy) ds:
/// trapezoid in z, and in t the exact integral of the piecewise-linear
/// interpolant of the exponential.
inline FField picard_iterate(const FField& prev, double c) {
  FField next = prev;
  const std::size_t nz = prev.n_z, nt = prev.n_t;
  const double hz = (prev.z1 - prev.z0) / static_cast<double>(nz - 1);
  const double ht = prev.t_max / static_cast<double>(nt - 1);
  const double inf = std::numeric_limits<double>::infinity();

  // E[j][k] = exp(S_j(t_k))
  std::vector<double> E(nz * nt);
  for (std::size_t k = 0; k < nt; ++k) {
    double S = 0.0;
    for (std::size_t j = 0; j < nz; ++j) {
      if (j > 0) S += 0.5 * hz * (prev.at(j - 1, k) + prev.at(j, k));
      E[j * nt + k] = S > 709.0 ? inf : std::exp(S);
    }
  }
  for (std::size_t j = 0; j < nz; ++j) {
    // Q_k = int_0^{t_k} (t_k - s) E ds = Q_{k-1} + h A_{k-1} + h^2 (E_{k-1}/3 + E_k/6),
    // A = int_0^t E.
    double A = 0.0, Q = 0.0;
    next.at(j, 0) = 0.5;
    for (std::size_t k = 1; k < nt; ++k) {
      const double e0 = E[j * nt + k - 1], e1 = E[j * nt + k];
      Q += ht * A + ht * ht * (e0 / 3.0 + e1 / 6.0);
      A += 0.5 * ht * (e0 + e1);
      double v = 0.5 + c * Q;
      if (!(v <= f_blowup_level)) v = inf;
      next.at(j, k) = v;
    }
  }
  return next;
}

struct FPicardResult {
  FField field;
  std::size_t iterations = 0;
  bool converged = false;
  double last_change = 0.0;
  std::optional<double> blowup_time;  // first grid time with f(L3, t) above 1e12
};

namespace detail {

inline std::optional<double> f_blowup_time(const FField& f) {
  const std::size_t j = f.n_z - 1;
  for (std::size_t k = 2; k < f.n_t; ++k) {
    const double v = f.at(j, k);
    if (v > f_blowup_level || !std::isfinite(v)) {
      const double second = v - 2.0 * f.at(j, k - 1) + f.at(j, k - 2);
      if (!(second <= 0.0)) return f.t(k);
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Fixed-point iteration from f_0 = 1/2 until sup |f_n - f_{n-1}| / (1 + |f_n|)
/// < picard_tol over finite entries with an unchanged blown-up set.
inline FPicardResult solve_f_picard(double c, double L2, double L3, double t_max, std::size_t n_z,
                                    double picard_tol, std::size_t n_t = 1025,
                                    std::size_t max_iter = 0) {
  if (!(c > 0.0)) throw DomainError("solve_f_picard: c must be > 0");
  if (!(L2 < L3)) throw DomainError("solve_f_picard: L2 < L3 required");
  if (n_z < 16) throw DomainError("solve_f_picard: n_z >= 16 required");
  if (n_t < 3 || !(t_max > 0.0)) throw DomainError("solve_f_picard: bad time grid");
  if (max_iter == 0) max_iter = n_t + 8;

  FPicardResult r;
  FField cur = make_f_seed(L2, L3, t_max, n_z, n_t);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    FField nxt = picard_iterate(cur, c);
    double change = 0.0;
    bool pattern_same = true;
    for (std::size_t i = 0; i < nxt.data.size(); ++i) {
      const double a = nxt.data[i], b = cur.data[i];
      const bool fa = std::isfinite(a), fb = std::isfinite(b);
      if (fa != fb) {
        pattern_same = false;
        continue;
      }
      if (fa) change = std::max(change, std::abs(a - b) / (1.0 + std::abs(a)));
    }
    cur = std::move(nxt);
    r.iterations = it;
    r.last_change = change;
    if (pattern_same && change < picard_tol) {
      r.converged = true;
      break;
    }
  }
  r.blowup_time = detail::f_blowup_time(cur);
  r.field = std::move(cur);
  if (!r.converged && !r.blowup_time)
    throw OracleFailure("f oracle: Picard iteration did not converge and shows no divergence");
  return r;
}

/// Method of lines: f_j' = g_j, g_j' = c exp(S_j) with the same trapezoid S_j
/// as the Picard map. Entries after the divergence onset (some exponent above
/// 700 or f(L3) above 1e12) are +inf.
inline FField solve_f_mol(double c, double L2, double L3, double t_max, std::size_t n_z,
                          std::size_t n_t, double tol = 1e-12) {
  namespace ode = boost::numeric::odeint;
  using State = std::vector<double>;
  FField out = make_f_seed(L2, L3, t_max, n_z, n_t);
  const double hz = (L3 - L2) / static_cast<double>(n_z - 1);
  State y(2 * n_z, 0.0);
  for (std::size_t j = 0; j < n_z; ++j) y[j] = 0.5;

  auto rhs = [&](const State& x, State& dx, double) {
    double S = 0.0;
    for (std::size_t j = 0; j < n_z; ++j) {
      if (j > 0) S += 0.5 * hz * (x[j - 1] + x[j]);
      dx[j] = x[n_z + j];
      dx[n_z + j] = c * std::exp(std::min(S, 709.0));
    }
  };
  auto diverged = [&](const State& x) {
    double S = 0.0;
    for (std::size_t j = 1; j < n_z; ++j) S += 0.5 * hz * (x[j - 1] + x[j]);
    return S > 700.0 || x[n_z - 1] > f_blowup_level || !std::isfinite(x[n_z - 1]);
  };
  auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<State>());
  bool blown = false;
  for (std::size_t k = 1; k < n_t; ++k) {
    if (!blown) {
      ode::integrate_adaptive(stepper, rhs, y, out.t(k - 1), out.t(k), (out.t(k) - out.t(k - 1)) / 4.0);
      blown = diverged(y);
    }
    for (std::size_t j = 0; j < n_z; ++j)
      out.at(j, k) = blown ? std::numeric_limits<double>::infinity() : y[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// tau0

struct Tau0Result {
  double tau0 = 0.0;
  double root = 0.0;      // root of g before the cap post-processing
  double residual = 0.0;  // |g(root)|
  double rhs_scale = 0.0; // eps / (root (g1 + g2 + eps))
  bool capped = false;
};

/// Root of tau e^{Gamma(3 L1, tau)} - eps/(tau (g1+g2+eps)) on (0, 0.99 t*(3 L1)),
/// then reduced until Gamma(L0, tau) < L0 + L1/6 and Gamma(L1, tau) < 3 L1 / 2.
inline Tau0Result solve_tau0(const ModelParams& p, const InitialDataSpec& spec) {
  if (!p.blow_up_range || !p.epsilon) throw OracleFailure("tau0 requires blow-up range parameters");
  const double eps = *p.epsilon;
  const double denom = p.gamma1 + p.gamma2 + eps;
  const GammaOracle g3(3.0 * spec.L1);
  auto g = [&](double tau) { return tau * std::exp(g3.value(tau)) - eps / (tau * denom); };

  double lo = 1e-300, hi = 0.99 * g3.blowup_time();
  // Tighten the lower end geometrically so lo stays representable.
  while (lo < hi && g(lo) >= 0.0) lo *= 2.0;
  if (!(g(lo) < 0.0) || !(g(hi) > 0.0)) throw OracleFailure("tau0: no sign change of g on (0, 0.99 t*)");
  for (int it = 0; it < 2000; ++it) {
    const double mid = std::sqrt(lo * hi) > lo && std::sqrt(lo * hi) < hi && hi / lo > 4.0
                           ? std::sqrt(lo * hi)
                           : 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  Tau0Result r;
  r.root = std::abs(g(lo)) < std::abs(g(hi)) ? lo : hi;
  r.residual = std::abs(g(r.root));
  r.rhs_scale = eps / (r.root * denom);
  r.tau0 = r.root;

  const GammaOracle g0(spec.L0), g1(spec.L1);
  auto caps_hold = [&](double tau) {
    return g0.value(tau) < spec.L0 + spec.L1 / 6.0 && g1.value(tau) < 1.5 * spec.L1;
  };
  if (!caps_hold(r.tau0)) {
    r.capped = true;
    double a = 0.0, b = r.tau0;
    for (int it = 0; it < 200; ++it) {
      const double m = 0.5 * (a + b);
      (caps_hold(m) ? a : b) = m;
    }
    r.tau0 = a;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Induction ladder

/// G_n = (n+1) 2^{n+2}.
constexpr double ladder_level(int n) { return static_cast<double>(n + 1) * static_cast<double>(1LL << (n + 2)); }

/// Smallest Delta with c e^{Delta/4} tau0^2 / 8 >= 16.
inline double ladder_threshold(double c, double tau0) {
  return 4.0 * std::log(16.0 * 8.0 / (c * tau0 * tau0));
}

struct LadderRung {
  int n = 0;
  double t = 0.0;
  double level = 0.0;
  double min_f = 0.0;  // +inf when every checked entry has blown up
  bool pass = false;
};

struct LadderResult {
  bool pass = false;
  double base_value = 0.0;  // c e^{Delta/4} tau0^2 / 8
  bool base_pass = false;
  std::vector<LadderRung> rungs;
  std::string message;
};

/// Checks the base case, then f(z, tau0(1 - 2^{-n})) >= G_n on grid labels in
/// [L3 - Delta 2^{-n}, L3] for n = 1..3.
inline LadderResult verify_induction_ladder(const FField& f, double c, double tau0, double Delta) {
  const double L3 = f.z1;
  const double span_tol = 1e-9 * std::max(1.0, std::abs(L3));
  if (std::abs((f.z1 - f.z0) - Delta) > span_tol || f.t_max + 1e-12 * tau0 < tau0 * (1.0 - 1.0 / 8.0))
    throw std::invalid_argument("ladder: f field must cover [L3 - Delta, L3] x [0, tau0]");
  LadderResult r;
  r.base_value = c * std::exp(Delta / 4.0) * tau0 * tau0 / 8.0;
  r.base_pass = r.base_value >= ladder_level(1);
  if (!r.base_pass) {
    r.message = "base case c e^{Delta/4} tau0^2/8 >= 16 violated";
    return r;
  }
  r.pass = true;
  for (int n = 1; n <= 3; ++n) {
    LadderRung rung;
    rung.n = n;
    rung.t = tau0 * (1.0 - std::ldexp(1.0, -n));
    rung.level = ladder_level(n);
    const auto k = static_cast<std::size_t>(std::llround(rung.t / f.t_max * static_cast<double>(f.n_t - 1)));
    if (std::abs(f.t(k) - rung.t) > 1e-9 * tau0)
      throw std::invalid_argument("ladder: time grid must contain tau0 (1 - 2^{-n})");
    const double z_lo = L3 - Delta * std::ldexp(1.0, -n);
    rung.min_f = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < f.n_z; ++j) {
      if (f.z(j) < z_lo - span_tol) continue;
      rung.min_f = std::min(rung.min_f, f.at(j, k));
    }
    rung.pass = rung.min_f >= rung.level;
    r.pass = r.pass && rung.pass;
    r.rungs.push_back(rung);
  }
  if (!r.pass) r.message = "ladder rung below G_n";
  return r;
}

}  // namespace sbm
