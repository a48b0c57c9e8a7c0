#pragma once

// Velocity and velocity gradient of the two-lobe Biot-Savart law, evaluated
// exactly for a piecewise-linear vorticity through prefix-integral tables.
//
// z frame:  u~(z) = int_0^{(z-g1)+} w - int_{(z-g1)+}^{z+g2} w
// x frame:  u(x)  = x J(min(b2 x,1), min(b1 x,1)) - x J(min(b1 x,1), 1),
//           J(a,b) = int_a^b w(y)/y dy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "model.hpp"

namespace sbm {

/// Cumulative integrals of the piecewise-linear interpolant through
/// (nodes[i], values[i]); the field is zero outside [nodes.front(), nodes.back()).
class PrefixTable {
 public:
  PrefixTable() = default;

  PrefixTable(std::span<const double> nodes, std::span<const double> values)
      : nodes_(nodes.begin(), nodes.end()), values_(values.begin(), values.end()) {
    if (nodes_.size() != values_.size() || nodes_.size() < 2)
      throw ConsistencyError("prefix table needs >= 2 nodes with matching values");
    cum_.resize(nodes_.size());
    cum_[0] = 0.0;
    for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
      const double h = nodes_[i + 1] - nodes_[i];
      if (!(h > 0.0)) throw ConsistencyError("prefix table nodes must be strictly increasing");
      cum_[i + 1] = cum_[i] + 0.5 * h * (values_[i] + values_[i + 1]);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> cumulative() const { return cum_; }

  /// Index i with nodes[i] <= y < nodes[i+1]; requires y inside the node range.
  std::size_t locate(double y) const {
    auto it = std::upper_bound(nodes_.begin(), nodes_.end(), y);
    return static_cast<std::size_t>(it - nodes_.begin()) - 1;
  }

  /// Interpolant value, right-continuous at nodes; 0 outside the node range.
  double value(double y) const {
    if (!(y >= nodes_.front()) || y >= nodes_.back()) return 0.0;
    return value_in(locate(y), y);
  }

  /// int_{nodes[0]}^{y} w.
  double primitive(double y) const {
    if (y <= nodes_.front()) return 0.0;
    if (y >= nodes_.back()) return cum_.back();
    return primitive_in(locate(y), y);
  }

  /// int_a^b w (signed; a > b gives the negative).
  double integral(double a, double b) const { return primitive(b) - primitive(a); }

  /// Forward-only locator for monotone nondecreasing query sequences.
  class Cursor {
   public:
    explicit Cursor(const PrefixTable& t) : t_(&t) {}

    double primitive(double y) {
      const auto& n = t_->nodes_;
      if (y <= n.front()) return 0.0;
      if (y >= n.back()) return t_->cum_.back();
      return t_->primitive_in(advance(y), y);
    }

    double value(double y) {
      const auto& n = t_->nodes_;
      if (!(y >= n.front()) || y >= n.back()) return 0.0;
      return t_->value_in(advance(y), y);
    }

   private:
    std::size_t advance(double y) {
      const auto& n = t_->nodes_;
      if (n[i_] > y) i_ = 0;  // non-monotone use: restart
      while (i_ + 2 < n.size() && n[i_ + 1] <= y) ++i_;
      return i_;
    }
    const PrefixTable* t_;
    std::size_t i_ = 0;
  };

 private:
  double value_in(std::size_t i, double y) const {
    const double h = nodes_[i + 1] - nodes_[i];
    const double s = (y - nodes_[i]) / h;
    return values_[i] + s * (values_[i + 1] - values_[i]);
  }

  double primitive_in(std::size_t i, double y) const {
    const double d = y - nodes_[i];
    const double slope = (values_[i + 1] - values_[i]) / (nodes_[i + 1] - nodes_[i]);
    return cum_[i] + d * (values_[i] + 0.5 * slope * d);
  }

  std::vector<double> nodes_, values_, cum_;
};

/// Table over the current marker positions and vorticities.
inline PrefixTable build_prefix_table(const LagrangianState& state) {
  std::vector<double> pos(state.size()), w(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    pos[i] = state.markers[i].phi;
    w[i] = state.markers[i].omega;
  }
  return PrefixTable(pos, w);
}

// ---------------------------------------------------------------------------
// x-frame tables: J(a,b) = int_a^b w(y)/y dy.

/// w piecewise linear in x; J is closed form per segment via logarithms.
class LinearXTable {
 public:
  LinearXTable() = default;

  LinearXTable(std::span<const double> nodes, std::span<const double> values)
      : base_(nodes, values) {
    if (!(nodes.front() > 0.0)) throw ConsistencyError("x-frame nodes must be positive");
    const auto n = base_.nodes();
    const auto w = base_.values();
    cum_.resize(n.size());
    cum_[0] = 0.0;
    for (std::size_t i = 0; i + 1 < n.size(); ++i) cum_[i + 1] = cum_[i] + segment(i, n[i + 1]);
  }

  double value(double y) const { return base_.value(y); }

  double inv_y_primitive(double y) const {
    const auto n = base_.nodes();
    if (y <= n.front()) return 0.0;
    if (y >= n.back()) return cum_.back();
    const std::size_t i = base_.locate(y);
    return cum_[i] + segment(i, y);
  }

  double inv_y_integral(double a, double b) const { return inv_y_primitive(b) - inv_y_primitive(a); }

  const PrefixTable& linear() const { return base_; }

  /// Forward-only locator for monotone nondecreasing queries.
  class Cursor {
   public:
    explicit Cursor(const LinearXTable& t) : t_(&t) {}

    double inv_y_primitive(double y) {
      const auto n = t_->base_.nodes();
      if (y <= n.front()) return 0.0;
      if (y >= n.back()) return t_->cum_.back();
      const std::size_t i = advance(y);
      return t_->cum_[i] + t_->segment(i, y);
    }

    double value(double y) {
      const auto n = t_->base_.nodes();
      if (!(y >= n.front()) || y >= n.back()) return 0.0;
      const std::size_t i = advance(y);
      const auto w = t_->base_.values();
      return w[i] + (y - n[i]) / (n[i + 1] - n[i]) * (w[i + 1] - w[i]);
    }

   private:
    std::size_t advance(double y) {
      const auto n = t_->base_.nodes();
      if (n[i_] > y) i_ = 0;
      while (i_ + 2 < n.size() && n[i_ + 1] <= y) ++i_;
      return i_;
    }
    const LinearXTable* t_;
    std::size_t i_ = 0;
  };

 private:
  // int_{n_i}^{y} (w_i + s (x - n_i)) / x dx
  double segment(std::size_t i, double y) const {
    const auto n = base_.nodes();
    const auto w = base_.values();
    const double s = (w[i + 1] - w[i]) / (n[i + 1] - n[i]);
    const double d = y - n[i];
    return (w[i] - s * n[i]) * std::log1p(d / n[i]) + s * d;
  }

  PrefixTable base_;
  std::vector<double> cum_;
};

/// w piecewise linear in z = -ln x. J(a,b) is the z-integral over
/// [-ln b, -ln a], exact for the field a z-frame table represents.
class LogXTable {
 public:
  explicit LogXTable(PrefixTable z_table) : z_(std::move(z_table)) {}

  double value(double y) const { return y > 0.0 ? z_.value(-std::log(y)) : 0.0; }
  double inv_y_integral(double a, double b) const {
    return z_.integral(-std::log(b), -std::log(a));
  }

 private:
  PrefixTable z_;
};

inline LinearXTable build_x_table(const LagrangianState& state) {
  std::vector<double> pos(state.size()), w(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    pos[i] = state.markers[i].phi;
    w[i] = state.markers[i].omega;
  }
  return LinearXTable(pos, w);
}

// ---------------------------------------------------------------------------
// z frame

inline double velocity_z(double z, const PrefixTable& table, const ModelParams& p) {
  const double a = std::max(z - p.gamma1, 0.0);
  // I(0,a) - I(a, z+g2)
  return 2.0 * table.primitive(a) - table.primitive(0.0) - table.primitive(z + p.gamma2);
}

/// d(u~)/dz = 2 w(z-g1) - w(z+g2); w vanishes at negative arguments.
inline double stretch_rate(double z, const PrefixTable& table, const ModelParams& p) {
  const double lo = z - p.gamma1;
  const double left = lo >= 0.0 ? table.value(lo) : 0.0;
  return 2.0 * left - table.value(z + p.gamma2);
}

/// Velocity and stretching rate at every (sorted) position in one linear sweep.
inline void velocity_z_batch(std::span<const double> positions, const PrefixTable& table,
                             const ModelParams& p, std::span<double> u, std::span<double> K) {
  PrefixTable::Cursor lo_c(table), hi_c(table);
  const double p0 = table.primitive(0.0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double z = positions[i];
    const double lo = z - p.gamma1;
    const double a = std::max(lo, 0.0);
    const double hi = z + p.gamma2;
    const double Pa = lo_c.primitive(a);
    const double wl = lo >= 0.0 ? lo_c.value(lo) : 0.0;
    const double Ph = hi_c.primitive(hi);
    const double wh = hi_c.value(hi);
    u[i] = 2.0 * Pa - p0 - Ph;
    K[i] = 2.0 * wl - wh;
  }
}

// ---------------------------------------------------------------------------
// x frame

/// Model velocity without the (0,1] domain check; the cutoff at 1 extends it.
template <class XTable>
double velocity_x_extended(double x, const XTable& table, const ModelParams& p) {
  const double hi = std::min(p.beta1 * x, 1.0);
  const double lo = std::min(p.beta2 * x, 1.0);
  return x * table.inv_y_integral(lo, hi) - x * table.inv_y_integral(hi, 1.0);
}

template <class XTable>
double velocity_x(double x, const XTable& table, const ModelParams& p) {
  if (!(x > 0.0) || x > 1.0) throw DomainError("velocity_x: x must lie in (0,1]");
  return velocity_x_extended(x, table, p);
}

template <class XTable>
double dx_velocity_extended(double x, const XTable& table, const ModelParams& p) {
  const double b1x = p.beta1 * x, b2x = p.beta2 * x;
  double r = velocity_x_extended(x, table, p) / x;
  if (b1x < 1.0) r += 2.0 * table.value(b1x);
  if (b2x < 1.0) r -= table.value(b2x);
  return r;
}

/// du/dx = u/x + 2 w(b1 x) 1{b1 x<1} - w(b2 x) 1{b2 x<1}.
template <class XTable>
double dx_velocity(double x, const XTable& table, const ModelParams& p) {
  if (!(x > 0.0) || !(x < 1.0)) throw DomainError("dx_velocity: x must lie in (0,1)");
  return dx_velocity_extended(x, table, p);
}

/// u and du/dx at every (sorted, positive) position in one linear sweep;
/// positions above 1 use the extended formulas.
inline void velocity_x_batch(std::span<const double> positions, const LinearXTable& table,
                             const ModelParams& p, std::span<double> u, std::span<double> dxu) {
  LinearXTable::Cursor c1(table), c2(table);
  const double top = table.inv_y_primitive(1.0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double x = positions[i];
    const double b1x = p.beta1 * x, b2x = p.beta2 * x;
    const double P1 = c1.inv_y_primitive(std::min(b1x, 1.0));
    const double w1 = b1x < 1.0 ? c1.value(b1x) : 0.0;
    const double P2 = c2.inv_y_primitive(std::min(b2x, 1.0));
    const double w2 = b2x < 1.0 ? c2.value(b2x) : 0.0;
    u[i] = x * (P1 - P2) - x * (top - P1);
    dxu[i] = u[i] / x + 2.0 * w1 - w2;
  }
}

/// lim_{x->0} du/dx = -J(0,1).
template <class XTable>
double dx_velocity_at_origin(const XTable& table) {
  return -table.inv_y_integral(0.0, 1.0);
}

}  // namespace sbm
