#pragma once

// Finite-difference oracles shared by the test suites.

#include <algorithm>
#include <cmath>
#include <functional>

#include "mvrom/tensor.hpp"

namespace mvrom::testing {

inline Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||), or the absolute norm when both are tiny.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den < 1e-12 ? std::sqrt(num) : std::sqrt(num) / den;
}

}  // namespace mvrom::testing
