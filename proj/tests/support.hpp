#pragma once

// Shared fixtures for the test suites: random smooth vorticity fields and
// hand-built marker states.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "sbm/model.hpp"

namespace sbm::testing {

/// Sum of positive Gaussian bumps; smooth and strictly positive on its domain.
struct BumpField {
  std::vector<double> centre, width, height;

  double operator()(double y) const {
    double s = 0.0;
    for (std::size_t k = 0; k < centre.size(); ++k) {
      const double d = (y - centre[k]) / width[k];
      s += height[k] * std::exp(-0.5 * d * d);
    }
    return s;
  }
};

inline BumpField random_bumps(std::mt19937_64& rng, double lo, double hi, int n_bumps = 4) {
  std::uniform_real_distribution<double> c(lo, hi), w(0.4, 1.5), h(0.2, 2.0);
  BumpField f;
  for (int k = 0; k < n_bumps; ++k) {
    f.centre.push_back(c(rng));
    f.width.push_back(w(rng));
    f.height.push_back(h(rng));
  }
  return f;
}

/// State whose markers sit at their labels on a uniform grid over [lo, hi],
/// carrying omega = field(position).
template <class Field>
LagrangianState sampled_state(const Field& field, double lo, double hi, std::size_t n,
                              Frame frame = Frame::z_model) {
  LagrangianState s;
  s.frame = frame;
  for (std::size_t i = 0; i < n; ++i) {
    Marker m;
    m.z = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    m.phi = m.z;
    m.omega = field(m.phi);
    s.markers.push_back(m);
  }
  return s;
}

inline ModelParams params_with_gammas(double g1, double g2) {
  return make_params(std::exp(g1), std::exp(-g2));
}

}  // namespace sbm::testing
