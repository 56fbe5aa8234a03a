#pragma once

// Closed-form diagonal-Gaussian quantities on plain Eigen expressions.

#include <cmath>

#include "edt/tensor.hpp"

namespace edt {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// -log N(a; mean, diag(exp(logvar))) for one row.
template <typename DM, typename DL, typename DA>
typename DM::Scalar gaussian_nll(const Eigen::MatrixBase<DM>& mean,
                                 const Eigen::MatrixBase<DL>& logvar,
                                 const Eigen::MatrixBase<DA>& a) {
  using Scalar = typename DM::Scalar;
  const auto lv = logvar.array();
  const auto z2 = (a.array() - mean.array()).square() * (-lv).exp();
  return Scalar(0.5) * (Scalar(kLog2Pi) + lv + z2).sum();
}

template <typename DM, typename DL, typename DA>
typename DM::Scalar gaussian_log_density(const Eigen::MatrixBase<DM>& mean,
                                         const Eigen::MatrixBase<DL>& logvar,
                                         const Eigen::MatrixBase<DA>& a) {
  return -gaussian_nll(mean, logvar, a);
}

/// Differential entropy: 1/2 sum_d (1 + ln 2pi + logvar_d).
template <typename DL>
typename DL::Scalar gaussian_entropy(const Eigen::MatrixBase<DL>& logvar) {
  using Scalar = typename DL::Scalar;
  return Scalar(0.5) * (Scalar(1.0 + kLog2Pi) + logvar.array()).sum();
}

/// Half the entropy of a unit-variance Gaussian in `dims` dimensions.
inline double default_entropy_target(Index dims) {
  return 0.5 * static_cast<double>(dims) * 0.5 * (1.0 + kLog2Pi);
}

}  // namespace edt
