#pragma once

#include <cmath>
#include <utility>

#include "mvgp/common.hpp"

namespace mvgp {

/// Squared-exponential kernel hyperparameters, stored in log domain so that
/// positivity is structural and gradient steps are unconstrained.
struct KernelParams {
  double log_sf = 0.0;  // log of the signal standard deviation
  double log_l = 0.0;   // log of the length-scale

  double sf() const { return std::exp(log_sf); }
  double l() const { return std::exp(log_l); }
};

/// Matrix of pairwise squared Euclidean distances between rows of x and xstar.
inline Matrix squared_distances(const Matrix& x, const Matrix& xstar) {
  const Vector xn = x.rowwise().squaredNorm();
  const Vector sn = xstar.rowwise().squaredNorm();
  Matrix d = -2.0 * x * xstar.transpose();
  d.colwise() += xn;
  d.rowwise() += sn.transpose();
  return d.cwiseMax(0.0);  // clamp tiny negative values from cancellation
}

/// Gram matrix from a precomputed squared-distance matrix whose diagonal is
/// exactly zero; the result is symmetric with diagonal exactly sf^2.
inline Matrix gram_from_sqdist(const KernelParams& p, const Matrix& sqdist) {
  const double sf2 = std::exp(2.0 * p.log_sf);
  const double inv_2l2 = 0.5 * std::exp(-2.0 * p.log_l);
  return symmetrized(sf2 * (-inv_2l2 * sqdist).array().exp().matrix());
}

/// Entry-wise derivative of the Gram matrix with respect to log_l:
/// K .* |x_i - x_j|^2 / l^2.
inline Matrix gram_log_l_deriv(const KernelParams& p, const Matrix& k, const Matrix& sqdist) {
  return symmetrized(k.cwiseProduct(sqdist) * std::exp(-2.0 * p.log_l));
}

/// Gram matrix K_ij = sf^2 * exp(-|x_i - x_j|^2 / (2 l^2)).
inline Matrix gram(const KernelParams& p, const Matrix& x) {
  Matrix d = squared_distances(x, x);
  d.diagonal().setZero();
  return gram_from_sqdist(p, d);
}

/// Cross-covariances k(x_i, xstar_j); shape N x P.
inline Matrix cross_gram(const KernelParams& p, const Matrix& x, const Matrix& xstar) {
  if (x.cols() != xstar.cols()) {
    throw DataError("cross_gram: feature dimensions differ (" + std::to_string(x.cols()) + " vs " +
                    std::to_string(xstar.cols()) + ")");
  }
  const double sf2 = std::exp(2.0 * p.log_sf);
  const double inv_2l2 = 0.5 * std::exp(-2.0 * p.log_l);
  return sf2 * (-inv_2l2 * squared_distances(x, xstar)).array().exp();
}

/// Partial derivatives of the Gram matrix with respect to the log-domain
/// hyperparameters: dK/dlog_sf = 2K and dK/dlog_l = K .* |x_i-x_j|^2 / l^2.
inline std::pair<Matrix, Matrix> gram_grad(const KernelParams& p, const Matrix& x) {
  Matrix d = squared_distances(x, x);
  d.diagonal().setZero();
  const Matrix k = gram_from_sqdist(p, d);
  return {2.0 * k, gram_log_l_deriv(p, k, d)};
}

/// Raw-domain derivatives (dK/dsf, dK/dl); log-domain pairs relate by the
/// chain rule dK/dlog_t = t * dK/dt. Exposed for gradient cross-checks.
inline std::pair<Matrix, Matrix> gram_grad_raw(const KernelParams& p, const Matrix& x) {
  auto [dsf_log, dl_log] = gram_grad(p, x);
  return {dsf_log / p.sf(), dl_log / p.l()};
}

}  // namespace mvgp
