#pragma once

// Model parameters, smooth initial data, coordinate frames and the
// Lagrangian marker state shared by the rest of the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbm {

/// Invalid user configuration. The message names the violated constraint.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a map (e.g. x <= 0).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Broken internal invariant (unsorted markers handed to a table build, ...).
struct ConsistencyError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ModelParams {
  double beta1 = 1.0;
  double beta2 = 1.0;
  double gamma1 = 0.0;  // ln beta1
  double gamma2 = 0.0;  // ln(1/beta2)
  std::optional<double> epsilon;
  bool blow_up_range = true;  // beta1 < 2 beta2

  /// 2 e^{-gamma1-gamma2} - 1, the growth constant of the deformation
  /// comparison problem. Positive exactly in the blow-up range.
  double growth_constant() const { return 2.0 * std::exp(-gamma1 - gamma2) - 1.0; }
};

inline ModelParams make_params(double beta1, double beta2,
                               std::optional<double> epsilon = std::nullopt) {
  if (!(beta2 > 0.0)) throw ConfigError("beta2 must satisfy 0 < beta2");
  if (!(beta1 > 0.0)) throw ConfigError("beta1 must satisfy 0 < beta1");
  if (!(beta2 <= 1.0)) throw ConfigError("beta2 must satisfy beta2 <= 1");
  if (!(beta1 >= 1.0)) throw ConfigError("beta1 must satisfy 1 <= beta1");
  if (!std::isfinite(beta1)) throw ConfigError("beta1 must be finite");

  ModelParams p;
  p.beta1 = beta1;
  p.beta2 = beta2;
  p.gamma1 = std::log(beta1);
  p.gamma2 = -std::log(beta2);
  p.blow_up_range = beta1 < 2.0 * beta2;

  const double margin = std::log(2.0) - p.gamma1 - p.gamma2;
  if (epsilon) {
    if (!(*epsilon > 0.0)) throw ConfigError("epsilon must satisfy 0 < epsilon");
    if (p.blow_up_range && !(2.0 * std::exp(-p.gamma1 - p.gamma2 - *epsilon) > 1.0))
      throw ConfigError("epsilon must satisfy 2 exp(-gamma1-gamma2-epsilon) > 1");
    p.epsilon = *epsilon;
  } else if (p.blow_up_range) {
    p.epsilon = 0.5 * margin;
  }
  return p;
}

enum class Frame { z_model, x_warmup };

inline const char* to_string(Frame f) { return f == Frame::z_model ? "z_model" : "x_warmup"; }

inline Frame frame_from_string(const std::string& s) {
  if (s == "z_model" || s == "z") return Frame::z_model;
  if (s == "x_warmup" || s == "x" || s == "warmup") return Frame::x_warmup;
  throw ConfigError("frame must be one of {z_model, x_warmup}, got '" + s + "'");
}

namespace detail {

inline double glue_psi(double s) { return s > 0.0 ? std::exp(-1.0 / s) : 0.0; }

}  // namespace detail

/// C-infinity transition from 0 (s <= 0) to 1 (s >= 1).
inline double smooth_step(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  const double a = detail::glue_psi(s);
  const double b = detail::glue_psi(1.0 - s);
  return a / (a + b);
}

struct InitialDataSpec {
  Frame frame = Frame::z_model;
  double L0 = 2.0, L1 = 8.0, L2 = 9.0, L3 = 12.0, L4 = 14.0;
  std::size_t n_markers = 4096;
  // x warm-up data: rho0 == amplitude on the plateau, ramps of width warmup_ramp.
  double plateau_lo = 1.0 / 3.0;
  double plateau_hi = 2.0 / 3.0;
  double warmup_ramp = 1.0 / 6.0;
  // Height of rho0; 0 gives the trivial equilibrium.
  double amplitude = 1.0;

  double ramp_lo() const { return frame == Frame::z_model ? L0 - 1.0 : warmup_ramp; }
  double ramp_hi() const { return frame == Frame::z_model ? L4 - L3 : warmup_ramp; }

  /// Closed support of rho0, in labels of the active frame.
  double support_lo() const { return frame == Frame::z_model ? 1.0 : plateau_lo - warmup_ramp; }
  double support_hi() const { return frame == Frame::z_model ? L4 : plateau_hi + warmup_ramp; }

  double rho0(double label) const {
    if (frame == Frame::z_model) {
      if (label <= 1.0 || label >= L4) return 0.0;
      if (label < L0) return amplitude * smooth_step((label - 1.0) / (L0 - 1.0));
      if (label <= L3) return amplitude;
      return amplitude * smooth_step((L4 - label) / (L4 - L3));
    }
    const double a = support_lo(), b = support_hi();
    if (label <= a || label >= b) return 0.0;
    if (label < plateau_lo) return amplitude * smooth_step((label - a) / warmup_ramp);
    if (label <= plateau_hi) return amplitude;
    return amplitude * smooth_step((b - label) / warmup_ramp);
  }

  /// Throws ConfigError naming the first violated constraint.
  void validate(const ModelParams& p) const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(std::string("initial data constraint violated: ") + what);
    };
    require(n_markers >= 64, "n_markers >= 64");
    require(amplitude >= 0.0 && amplitude <= 1.0, "0 <= amplitude <= 1");
    if (frame == Frame::z_model) {
      require(1.0 < L0, "1 < L0");
      require(L0 < L1, "L0 < L1");
      require(L1 < L2, "L1 < L2");
      require(L2 < L3, "L2 < L3");
      require(L3 < L4, "L3 < L4");
      require(L0 <= L1 / 4.0, "L0 <= L1/4");
      require(p.gamma1 < L1 / 4.0, "gamma1 < L1/4");
      require(p.gamma2 < L1 / 4.0, "gamma2 < L1/4");
      if (p.epsilon) require(*p.epsilon < L1 / 10.0, "epsilon < L1/10");
      require(L2 >= L1 + p.gamma1, "L2 >= L1 + gamma1");
    } else {
      require(warmup_ramp > 0.0, "warmup ramp > 0");
      require(plateau_lo < plateau_hi, "plateau_lo < plateau_hi");
      require(support_lo() > 0.0, "plateau_lo - ramp > 0 (support inside (0,1))");
      require(support_hi() < 1.0, "plateau_hi + ramp < 1 (support inside (0,1))");
    }
  }
};

struct Marker {
  double z = 0.0;      // label (initial position)
  double phi = 0.0;    // current position
  double rho = 0.0;    // frozen density rho0(z)
  double omega = 0.0;  // vorticity
  double D = 1.0;      // deformation d(phi)/d(label)
  double W = 0.0;      // forcing accumulator: int e^{phi} ds (z) or int 1/phi ds (x)
};

struct LagrangianState {
  Frame frame = Frame::z_model;
  double t = 0.0;
  std::vector<Marker> markers;

  std::size_t size() const { return markers.size(); }

  double sup_omega() const {
    double s = 0.0;
    for (const auto& m : markers) s = std::max(s, m.omega);
    return s;
  }

  bool positions_increasing() const {
    for (std::size_t i = 1; i < markers.size(); ++i)
      if (!(markers[i].phi > markers[i - 1].phi)) return false;
    return true;
  }
};

namespace detail {

/// Breakpoints with per-segment relative density; returns exactly n labels
/// with every breakpoint present.
inline std::vector<double> layout(const std::vector<double>& breaks,
                                  const std::vector<double>& density, std::size_t n) {
  const std::size_t nseg = density.size();
  const std::size_t intervals = n - 1;
  std::vector<double> weight(nseg);
  for (std::size_t s = 0; s < nseg; ++s) weight[s] = (breaks[s + 1] - breaks[s]) * density[s];
  const double total = std::accumulate(weight.begin(), weight.end(), 0.0);

  std::vector<std::size_t> count(nseg);
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t used = 0;
  for (std::size_t s = 0; s < nseg; ++s) {
    const double exact = static_cast<double>(intervals - nseg) * weight[s] / total;
    count[s] = 1 + static_cast<std::size_t>(std::floor(exact));
    used += count[s];
    remainder.emplace_back(exact - std::floor(exact), s);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < intervals; ++k, ++used) ++count[remainder[k % nseg].second];

  std::vector<double> out;
  out.reserve(n);
  for (std::size_t s = 0; s < nseg; ++s) {
    const double a = breaks[s], b = breaks[s + 1];
    for (std::size_t k = 0; k < count[s]; ++k)
      out.push_back(a + (b - a) * static_cast<double>(k) / static_cast<double>(count[s]));
  }
  out.push_back(breaks.back());
  return out;
}

}  // namespace detail

/// Marker labels: uniform base grid with 4x density in the ramp zones. Every
/// ladder point (or plateau/support endpoint) is an exact label.
inline std::vector<double> marker_labels(const InitialDataSpec& spec) {
  if (spec.frame == Frame::z_model) {
    const double m = 0.5;
    return detail::layout({1.0 - m, 1.0, spec.L0, spec.L1, spec.L2, spec.L3, spec.L4, spec.L4 + m},
                          {1, 4, 1, 1, 1, 4, 1}, spec.n_markers);
  }
  const double a = spec.support_lo(), b = spec.support_hi();
  const double m = std::min({0.05, 0.5 * a, 0.5 * (1.0 - b)});
  return detail::layout({a - m, a, spec.plateau_lo, spec.plateau_hi, b, b + m}, {1, 4, 1, 4, 1},
                        spec.n_markers);
}

inline LagrangianState build_initial_state(const InitialDataSpec& spec, const ModelParams& params) {
  spec.validate(params);
  LagrangianState s;
  s.frame = spec.frame;
  s.t = 0.0;
  for (double z : marker_labels(spec)) {
    Marker m;
    m.z = z;
    m.phi = z;
    m.rho = spec.rho0(z);
    s.markers.push_back(m);
  }
  return s;
}

enum class Direction { x_to_z, z_to_x };

/// x = e^{-z}, z = -ln x.
inline double frame_transform(double value, Direction dir) {
  if (dir == Direction::x_to_z) {
    if (!(value > 0.0) || value > 1.0) throw DomainError("x must lie in (0,1]");
    return -std::log(value);
  }
  if (!(value >= 0.0)) throw DomainError("z must satisfy z >= 0");
  return std::exp(-value);
}

/// u(x) -> u~(z) = -u/x.
inline double velocity_to_z(double u, double x) {
  if (!(x > 0.0) || x > 1.0) throw DomainError("x must lie in (0,1]");
  return -u / x;
}

/// u~(z) -> u(x) = -x u~.
inline double velocity_to_x(double u_tilde, double z) {
  if (!(z >= 0.0)) throw DomainError("z must satisfy z >= 0");
  return -std::exp(-z) * u_tilde;
}

}  // namespace sbm
