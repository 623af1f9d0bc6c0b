// Test-only finite-difference gradient oracle: central differences of a
// scalar function of the policy weights. Independent of the analytic
// gradient paths it checks.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "coevo/policy.hpp"

namespace testutil {

inline std::vector<double> central_differences(
    const std::function<double(const coevo::PolicyParams&)>& f, coevo::PolicyParams params,
    double h = 1e-5) {
  std::vector<double> grad(params.weights.size());
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    const double orig = params.weights[i];
    params.weights[i] = orig + h;
    const double up = f(params);
    params.weights[i] = orig - h;
    const double down = f(params);
    params.weights[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Max relative error against the oracle. Central differences at h = 1e-5
// carry ~1e-11 absolute noise on O(1) losses, so coordinates below the floor
// compare on absolute terms.
inline double max_rel_error(const std::vector<double>& analytic,
                            const std::vector<double>& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(std::abs(numeric[i]), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

inline coevo::PolicyParams random_params(int dim, std::uint64_t seed, double scale = 0.5) {
  coevo::PolicyParams p = coevo::PolicyParams::zeros(dim);
  coevo::CounterRng rng(seed);
  for (double& w : p.weights) w = (rng.next_double() - 0.5) * 2.0 * scale;
  return p;
}

}  // namespace testutil
