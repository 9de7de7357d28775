#pragma once

#include <string>

#include "mvgp/common.hpp"
#include "mvgp/gp_view.hpp"
#include "mvgp/linalg.hpp"

namespace mvgp {

/// Term-by-term breakdown of KL(p_a || p_b) between Gaussians:
/// 0.5 [ log|S_b| - log|S_a| + tr(S_b^{-1} S_a) + (m_b-m_a)' S_b^{-1} (m_b-m_a) - N ].
struct KlBreakdown {
  double logdet_term = 0.0;
  double trace_term = 0.0;
  double quad_term = 0.0;
  double constant = 0.0;
  double total = 0.0;
};

namespace detail {

inline SpdSolver factor_cov(const Matrix& cov, const char* which) {
  // Covariances arrive PD (post-jitter); a failure here signals an upstream
  // jitter failure, so escalate no further.
  return SpdSolver::factor_strict(cov, std::string("kl: covariance ") + which);
}

}  // namespace detail

/// Closed-form KL divergence between two Gaussian posteriors of equal dimension.
inline KlBreakdown kl(const GaussianPosterior& p_a, const GaussianPosterior& p_b) {
  const Index n = p_a.mean.size();
  if (p_b.mean.size() != n || p_a.cov.rows() != n || p_b.cov.rows() != n) {
    throw DataError("kl: dimension mismatch between posteriors");
  }
  const SpdSolver sa = detail::factor_cov(p_a.cov, "a");
  const SpdSolver sb = detail::factor_cov(p_b.cov, "b");

  KlBreakdown out;
  out.logdet_term = 0.5 * (sb.log_det() - sa.log_det());
  out.trace_term = 0.5 * sb.solve(p_a.cov).trace();
  const Vector d = p_b.mean - p_a.mean;
  out.quad_term = 0.5 * d.dot(sb.solve(d));
  out.constant = -0.5 * static_cast<double>(n);
  out.total = out.logdet_term + out.trace_term + out.quad_term + out.constant;
  return out;
}

/// KL(p1||p2) + KL(p2||p1). The objective applies the 1/2 factor and the
/// coupling strength externally.
inline double symmetric_kl(const GaussianPosterior& p1, const GaussianPosterior& p2) {
  return kl(p1, p2).total + kl(p2, p1).total;
}

/// Element-wise gradients of kl(p_a, p_b).total with respect to the posterior
/// parameters. Matrix blocks are symmetric.
struct KlParamGrad {
  Vector mean_a;
  Vector mean_b;
  Matrix cov_a;
  Matrix cov_b;
};

inline KlParamGrad kl_param_grad(const GaussianPosterior& p_a, const GaussianPosterior& p_b) {
  const Index n = p_a.mean.size();
  if (p_b.mean.size() != n || p_a.cov.rows() != n || p_b.cov.rows() != n) {
    throw DataError("kl_param_grad: dimension mismatch between posteriors");
  }
  const SpdSolver sa = detail::factor_cov(p_a.cov, "a");
  const SpdSolver sb = detail::factor_cov(p_b.cov, "b");
  const Matrix inv_a = sa.inverse();
  const Matrix inv_b = sb.inverse();
  const Vector d = p_b.mean - p_a.mean;
  const Vector ibd = sb.solve(d);

  KlParamGrad g;
  g.mean_a = -ibd;
  g.mean_b = ibd;
  g.cov_a = symmetrized(0.5 * (inv_b - inv_a));
  // d/dS_b = 0.5 (S_b^{-1} - S_b^{-1} S_a S_b^{-1} - S_b^{-1} d d' S_b^{-1})
  g.cov_b = symmetrized(0.5 * (inv_b - inv_b * p_a.cov * inv_b - ibd * ibd.transpose()));
  return g;
}

}  // namespace mvgp
