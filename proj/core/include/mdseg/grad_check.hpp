#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mdseg/common.hpp"

namespace mdseg {

/// Central-difference gradient of a scalar function of a flat parameter
/// vector. Throws DomainError if f is non-finite at any perturbed point.
template <typename F>
std::vector<double> central_diff(F&& f, std::vector<double> point, double eps) {
  require(eps > 0, "central_diff: eps must be positive");
  std::vector<double> g(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double keep = point[i];
    point[i] = keep + eps;
    const double fp = f(point);
    point[i] = keep - eps;
    const double fm = f(point);
    point[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw DomainError("central_diff: non-finite function value at perturbed point");
    g[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

/// Compare an analytic gradient against central differences of f at `point`.
/// Returns max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <typename F>
double grad_check(F&& f, const std::vector<double>& point,
                  const std::vector<double>& analytic, double eps = 1e-4) {
  require(analytic.size() == point.size(), "grad_check: gradient size mismatch");
  const std::vector<double> numeric = central_diff(f, point, eps);
  double worst = 0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace mdseg
