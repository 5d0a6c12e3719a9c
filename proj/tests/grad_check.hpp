#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "rlpr/core/rng.hpp"
#include "rlpr/net/params.hpp"

namespace rlpr::testutil {

// Central finite differences in 64-bit with the spec step of 1e-5.
constexpr double kFdStep = 1e-5;
constexpr double kFdTolerance = 1e-3;

// Relative error with a floor so that near-zero pairs compare absolutely.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-4, std::abs(a), std::abs(b)});
}

struct FdReport {
  double max_rel = 0.0;
  long checked = 0;
  std::string worst_tensor;

  bool ok() const { return max_rel < kFdTolerance; }
};

// Compares analytic gradients against central differences on a random subset
// of entries of every tensor. `loss_fn` must recompute the loss from the
// current parameter values; `grads` holds the analytic gradient.
template <class LossFn>
FdReport check_param_gradients(net::BranchParams<double>& params,
                               const net::BranchParams<double>& grads, LossFn&& loss_fn,
                               int per_tensor, std::uint64_t seed) {
  FdReport report;
  Rng rng(seed);
  auto pt = params.tensors();
  auto gt = grads.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto& mat = *pt[i].mat;
    const auto& gmat = *gt[i].mat;
    const long n = static_cast<long>(mat.size());
    const long take = std::min<long>(per_tensor, n);
    for (long s = 0; s < take; ++s) {
      const long idx = take == n ? s : static_cast<long>(rng.uniform_index(n));
      double& slot = mat.data()[idx];
      const double orig = slot;
      slot = orig + kFdStep;
      const double fp = loss_fn();
      slot = orig - kFdStep;
      const double fm = loss_fn();
      slot = orig;
      const double fd = (fp - fm) / (2.0 * kFdStep);
      const double err = rel_err(fd, gmat.data()[idx]);
      ++report.checked;
      if (err > report.max_rel) {
        report.max_rel = err;
        report.worst_tensor = pt[i].name;
      }
    }
  }
  return report;
}

// Dense variant for small free-standing kernels: checks every entry of one
// matrix (or vector) against its analytic gradient.
template <class M, class LossFn>
FdReport check_matrix_gradient(M& mat, const M& grad, LossFn&& loss_fn) {
  FdReport report;
  for (Eigen::Index i = 0; i < mat.size(); ++i) {
    double& slot = mat.data()[i];
    const double orig = slot;
    slot = orig + kFdStep;
    const double fp = loss_fn();
    slot = orig - kFdStep;
    const double fm = loss_fn();
    slot = orig;
    const double fd = (fp - fm) / (2.0 * kFdStep);
    report.max_rel = std::max(report.max_rel, rel_err(fd, grad.data()[i]));
    ++report.checked;
  }
  return report;
}

}  // namespace rlpr::testutil
