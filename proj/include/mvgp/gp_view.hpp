#pragma once

#include <array>
#include <cmath>
#include <utility>

#include "mvgp/common.hpp"
#include "mvgp/kernel.hpp"
#include "mvgp/linalg.hpp"

namespace mvgp {

/// One view's GP hyperparameters {s_f^2, l, sigma^2}, held in log domain.
struct ViewHyperparams {
  KernelParams kernel;
  double log_sigma = 0.0;  // log of the noise standard deviation

  double sigma2() const { return std::exp(2.0 * log_sigma); }
};

/// Indices into per-view gradient triples.
enum HyperCoord : int { kLogSf = 0, kLogL = 1, kLogSigma = 2 };
inline constexpr int kHyperCount = 3;

/// Gaussian posterior of the latent function values at the training inputs.
/// `jitter` is the absolute diagonal amount added to make `cov` positive definite.
struct GaussianPosterior {
  Vector mean;
  Matrix cov;
  double jitter = 0.0;
};

struct PredictiveGaussian {
  Vector mean;
  Vector var;  // latent variances, >= 0
};

/// Derivatives of the posterior (mean, cov) with respect to
/// {log_sf, log_l, log_sigma}.
struct PosteriorGrads {
  std::array<Vector, kHyperCount> mean;
  std::array<Matrix, kHyperCount> cov;
};

/// Exact GP regression quantities for a single view, sharing one factorization
/// of C = K + sigma^2 I across all queries. Holds references to X and y; both
/// must outlive the object.
class ViewInference {
 public:
  ViewInference(const ViewHyperparams& hp, const Matrix& x, const Vector& y)
      : hp_(hp), x_(x), y_(y), sqdist_(squared_distances(x, x)) {
    if (x.rows() != y.size()) {
      throw DataError("gp_view: X has " + std::to_string(x.rows()) + " rows but y has " +
                      std::to_string(y.size()) + " entries");
    }
    if (x.rows() < 1) throw DataError("gp_view: N >= 1 required");
    sqdist_.diagonal().setZero();
    k_ = gram_from_sqdist(hp.kernel, sqdist_);
    const Index n = x.rows();
    Matrix c = k_ + hp.sigma2() * Matrix::Identity(n, n);
    solver_ = SpdSolver::factor(c, "gp_view: K + sigma^2 I");
    alpha_ = solver_.solve(y_);
  }

  Index n() const { return x_.rows(); }
  const Matrix& kernel_matrix() const { return k_; }
  double c_jitter() const { return solver_.jitter(); }

  /// Negative log marginal likelihood
  /// 0.5 y'C^{-1}y + 0.5 log|C| + (N/2) log 2pi.
  double nll() const {
    return 0.5 * y_.dot(alpha_) + 0.5 * solver_.log_det() +
           0.5 * static_cast<double>(n()) * std::log(2.0 * M_PI);
  }

  /// Gradient of nll over {log_sf, log_l, log_sigma}:
  /// d/dtheta = -0.5 a'(dC)a + 0.5 tr(C^{-1} dC), a = C^{-1}y.
  Eigen::Vector3d nll_grad() const {
    const Matrix& cinv = c_inverse();
    Eigen::Vector3d g;
    for (int t = 0; t < kHyperCount; ++t) {
      const Matrix dc = c_derivative(t);
      g[t] = -0.5 * alpha_.dot(dc * alpha_) + 0.5 * cinv.cwiseProduct(dc).sum();
    }
    return g;
  }

  /// Posterior of the latent function: mean = K C^{-1} y,
  /// cov = K - K C^{-1} K, symmetrized and jittered to positive definiteness.
  GaussianPosterior posterior() const {
    GaussianPosterior p;
    p.mean = k_ * alpha_;
    p.cov = symmetrized(k_ - k_ * c_inv_k());
    p.jitter = SpdSolver::jitter_to_pd(p.cov, "gp_view: posterior covariance");
    return p;
  }

  /// Derivatives of the posterior mean and covariance:
  ///   dmu = (dK)a - K C^{-1} (dC) a
  ///   dSigma = dK - (dK)A - A'(dK) + A'(dC)A,  A = C^{-1}K.
  PosteriorGrads posterior_grads() const {
    PosteriorGrads out;
    const Matrix& a = c_inv_k();
    for (int t = 0; t < kHyperCount; ++t) {
      const Matrix dc = c_derivative(t);
      if (t == kLogSigma) {
        // dK = 0; only the noise enters through C
        out.mean[t] = -a.transpose() * (dc * alpha_);
        out.cov[t] = symmetrized(a.transpose() * dc * a);
      } else {
        const Matrix& dk = dc;  // dC = dK for kernel hyperparameters
        out.mean[t] = dk * alpha_ - a.transpose() * (dk * alpha_);
        Matrix dka = dk * a;
        out.cov[t] = symmetrized(dk - dka - dka.transpose() + a.transpose() * dka);
      }
    }
    return out;
  }

  /// Predictive latent mean and point-wise variance at new inputs.
  PredictiveGaussian predict(const Matrix& xstar, bool include_noise = false) const {
    if (xstar.cols() != x_.cols()) {
      throw DataError("predict: test inputs have " + std::to_string(xstar.cols()) +
                      " features, expected " + std::to_string(x_.cols()));
    }
    PredictiveGaussian out;
    const Index p = xstar.rows();
    if (p == 0) {
      out.mean.resize(0);
      out.var.resize(0);
      return out;
    }
    const Matrix ks = cross_gram(hp_.kernel, x_, xstar);  // N x P
    out.mean = ks.transpose() * alpha_;
    const Matrix v = solver_.solve(ks);
    const double sf2 = std::exp(2.0 * hp_.kernel.log_sf);
    const Eigen::RowVectorXd reduction = ks.cwiseProduct(v).colwise().sum();
    out.var = (sf2 - reduction.transpose().array()).max(0.0).matrix();
    if (include_noise) out.var.array() += hp_.sigma2();
    return out;
  }

 private:
  Matrix c_derivative(int coord) const {
    switch (coord) {
      case kLogSf:
        return 2.0 * k_;
      case kLogL:
        return gram_log_l_deriv(hp_.kernel, k_, sqdist_);
      default:
        return 2.0 * hp_.sigma2() * Matrix::Identity(n(), n());
    }
  }

  const Matrix& c_inverse() const {
    if (cinv_.size() == 0) cinv_ = solver_.inverse();
    return cinv_;
  }

  const Matrix& c_inv_k() const {
    if (c_inv_k_.size() == 0) c_inv_k_ = solver_.solve(k_);
    return c_inv_k_;
  }

  ViewHyperparams hp_;
  const Matrix& x_;
  const Vector& y_;
  Matrix sqdist_;
  Matrix k_;
  SpdSolver solver_;
  Vector alpha_;
  mutable Matrix cinv_;
  mutable Matrix c_inv_k_;
};

inline double nll(const ViewHyperparams& hp, const Matrix& x, const Vector& y) {
  return ViewInference(hp, x, y).nll();
}

inline Eigen::Vector3d nll_grad(const ViewHyperparams& hp, const Matrix& x, const Vector& y) {
  return ViewInference(hp, x, y).nll_grad();
}

inline GaussianPosterior posterior(const ViewHyperparams& hp, const Matrix& x, const Vector& y) {
  return ViewInference(hp, x, y).posterior();
}

inline PosteriorGrads posterior_grad(const ViewHyperparams& hp, const Matrix& x, const Vector& y) {
  return ViewInference(hp, x, y).posterior_grads();
}

inline PredictiveGaussian predict(const ViewHyperparams& hp, const Matrix& x, const Vector& y,
                                  const Matrix& xstar, bool include_noise = false) {
  return ViewInference(hp, x, y).predict(xstar, include_noise);
}

}  // namespace mvgp
