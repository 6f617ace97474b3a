// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "ccrt/errors.hpp"

namespace ccrt {

/// p-norm of a vector, p in {1, 2}.
inline double lp_norm(std::span<const double> v, int p) {
  if (p == 1) {
    double s = 0.0;
    for (double x : v) s += std::fabs(x);
    return s;
  }
  if (p == 2) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }
  throw InputError("lp_norm: p must be 1 or 2");
}

/// p-norm of (a - b).
inline double lp_distance(std::span<const double> a, std::span<const double> b,
                          int p) {
  if (a.size() != b.size()) throw InputError("lp_distance: size mismatch");
  if (p == 1) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s;
  }
  if (p == 2) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  throw InputError("lp_distance: p must be 1 or 2");
}

/// Mean squared error between two equal-length vectors.
inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("mse: size mismatch");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace ccrt
