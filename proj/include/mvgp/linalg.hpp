#pragma once

#include <array>
#include <cmath>
#include <string>

#include "mvgp/common.hpp"

namespace mvgp {

/// Escalation schedule for diagonal jitter, as multiples of mean(diag).
inline constexpr std::array<double, 5> kJitterScales = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};

/// Cholesky factorization of a symmetric positive-definite matrix with
/// escalating diagonal jitter. The jitter actually applied (an absolute
/// value added to every diagonal entry) is recorded on the solver.
class SpdSolver {
 public:
  /// Factorizes `a + jitter*I`, trying each jitter scale in order.
  /// Throws NumericError if the matrix stays indefinite at the largest jitter.
  static SpdSolver factor(const Matrix& a, const std::string& what) {
    SpdSolver s;
    const Index n = a.rows();
    double scale = n > 0 ? a.diagonal().mean() : 1.0;
    if (!(scale > 0.0)) scale = 1.0;
    for (double js : kJitterScales) {
      const double delta = js * scale;
      if (delta == 0.0) {
        s.llt_.compute(a);
      } else {
        s.llt_.compute(a + delta * Matrix::Identity(n, n));
      }
      if (s.llt_.info() == Eigen::Success) {
        s.jitter_ = delta;
        return s;
      }
    }
    throw NumericError(what + ": matrix is not positive definite after maximum jitter escalation");
  }

  /// Factorizes `a` with no jitter escalation; throws NumericError if it is
  /// not positive definite as given.
  static SpdSolver factor_strict(const Matrix& a, const std::string& what) {
    SpdSolver s;
    s.llt_.compute(a);
    if (s.llt_.info() != Eigen::Success) {
      throw NumericError(what + ": matrix is not positive definite");
    }
    return s;
  }

  /// Jitters a symmetric matrix in place until it factorizes; returns the
  /// absolute jitter added. Used to make posterior covariances PD.
  static double jitter_to_pd(Matrix& a, const std::string& what) {
    const Index n = a.rows();
    double scale = n > 0 ? a.diagonal().mean() : 1.0;
    if (!(scale > 0.0)) scale = 1.0;
    Eigen::LLT<Matrix> llt;
    for (double js : kJitterScales) {
      const double delta = js * scale;
      Matrix candidate = delta == 0.0 ? a : Matrix(a + delta * Matrix::Identity(n, n));
      llt.compute(candidate);
      if (llt.info() == Eigen::Success) {
        a = std::move(candidate);
        return delta;
      }
    }
    throw NumericError(what + ": matrix is not positive definite after maximum jitter escalation");
  }

  double jitter() const { return jitter_; }

  /// log|A| as twice the sum of log Cholesky diagonals.
  double log_det() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  Vector solve(const Vector& b) const { return llt_.solve(b); }
  Matrix solve(const Matrix& b) const { return llt_.solve(b); }

  Matrix inverse() const {
    const Index n = llt_.matrixLLT().rows();
    return llt_.solve(Matrix::Identity(n, n));
  }

 private:
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
};

}  // namespace mvgp
