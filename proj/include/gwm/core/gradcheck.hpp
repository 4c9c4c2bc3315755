// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>

#include "gwm/core/tensor.hpp"

namespace gwm {

// Central-difference gradient check for a scalar-valued function of one
// tensor. Returns the max over elements of
//   |analytic - cd| / max(|analytic|, |cd|, 1e-8).
// Meant to run in 64-bit mode; the function must not perturb shared state.
// The function must also hold any stop-gradient quantities fixed across
// evaluations, otherwise the finite difference sees a path the analytic
// gradient correctly ignores.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         Tensor<double> x, double eps = 1e-5) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<double> y = f(x);
  check(y.numel() == 1, "grad_check: f must be scalar-valued");
  check(std::isfinite(y.item()), "non-finite function value");
  y.backward();
  TVec<double> analytic = x.grad();

  double max_rel = 0;
  for (size_t i = 0; i < x.data().size(); ++i) {
    double orig = x.data()[i];
    x.data()[i] = orig + eps;
    double fp = f(x).item();
    x.data()[i] = orig - eps;
    double fm = f(x).item();
    x.data()[i] = orig;
    check(std::isfinite(fp) && std::isfinite(fm), "non-finite function value");
    double cd = (fp - fm) / (2 * eps);
    double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic[i] - cd) / denom);
  }
  return max_rel;
}

// Two-step variant: each element passes at its better step size, separating
// truncation-limited elements (small eps wins) from roundoff-limited ones
// (large eps wins).
inline double grad_check2(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                          Tensor<double> x, double eps_a, double eps_b) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<double> y = f(x);
  check(y.numel() == 1, "grad_check: f must be scalar-valued");
  check(std::isfinite(y.item()), "non-finite function value");
  y.backward();
  TVec<double> analytic = x.grad();

  double max_rel = 0;
  for (size_t i = 0; i < x.data().size(); ++i) {
    double orig = x.data()[i];
    double err = 1e30;
    for (double eps : {eps_a, eps_b}) {
      x.data()[i] = orig + eps;
      double fp = f(x).item();
      x.data()[i] = orig - eps;
      double fm = f(x).item();
      x.data()[i] = orig;
      check(std::isfinite(fp) && std::isfinite(fm), "non-finite function value");
      double cd = (fp - fm) / (2 * eps);
      double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
      err = std::min(err, std::abs(analytic[i] - cd) / denom);
    }
    max_rel = std::max(max_rel, err);
  }
  return max_rel;
}

}  // namespace gwm
