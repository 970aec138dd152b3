#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include "rdlab/error.hpp"

namespace rdlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Coefficients in ascending powers: c[0] + c[1] x + ... + c[k] x^k.
using Polynomial = std::vector<double>;

inline double poly_eval(const Polynomial& c, double x) noexcept {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
  return acc;
}

inline Polynomial poly_derivative(const Polynomial& c) {
  if (c.size() <= 1) return {0.0};
  Polynomial d(c.size() - 1);
  for (std::size_t j = 1; j < c.size(); ++j) d[j - 1] = static_cast<double>(j) * c[j];
  return d;
}

/// Vandermonde matrix [1, x, ..., x^order].
inline MatrixXd vandermonde(std::span<const double> x, int order) {
  MatrixXd v(static_cast<Eigen::Index>(x.size()), order + 1);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      v(i, j) = p;
      p *= x[static_cast<std::size_t>(i)];
    }
  }
  return v;
}

inline VectorXd to_vector(std::span<const double> v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline double condition_number(const MatrixXd& x) {
  if (x.rows() == 0 || x.cols() == 0) return INFINITY;
  Eigen::JacobiSVD<MatrixXd> svd(x);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  return smin > 0.0 ? s(0) / smin : INFINITY;
}

struct LeastSquaresFit {
  VectorXd coef;
  VectorXd residuals;
  double ssr = 0.0;
};

/// Ordinary least squares through a column-pivoting QR. Throws FitError when
/// the design has fewer rows than columns or is numerically rank deficient.
inline LeastSquaresFit ols(const MatrixXd& x, const VectorXd& y) {
  if (x.rows() < x.cols()) {
    throw FitError("least squares: fewer observations than regressors", INFINITY);
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  qr.setThreshold(1e-12);
  if (qr.rank() < x.cols()) {
    const double cond = condition_number(x);
    std::ostringstream os;
    os << "least squares: rank-deficient design (rank " << qr.rank() << " < " << x.cols()
       << ", condition number " << cond << ")";
    throw FitError(os.str(), cond);
  }
  LeastSquaresFit fit;
  fit.coef = qr.solve(y);
  fit.residuals = y - x * fit.coef;
  fit.ssr = fit.residuals.squaredNorm();
  return fit;
}

/// Rows of (X'WX)^{-1} X'W, i.e. the linear maps taking y to each weighted
/// least-squares coefficient. Row j, column i is the loading of y_i on beta_j.
inline MatrixXd wls_coefficient_maps(const MatrixXd& x, const VectorXd& w) {
  const MatrixXd xw = x.transpose() * w.asDiagonal();
  const MatrixXd gram = xw * x;
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
    throw FitError("weighted least squares: singular Gram matrix", condition_number(gram));
  }
  return ldlt.solve(xw);
}

/// (X'X)^{-1} for a full-rank design.
inline MatrixXd gram_inverse(const MatrixXd& x) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  qr.setThreshold(1e-12);
  if (qr.rank() < x.cols()) {
    throw FitError("design matrix is rank deficient", condition_number(x));
  }
  // X = Q R P', so (X'X)^{-1} = P R^{-1} R^{-T} P'.
  const auto k = x.cols();
  const MatrixXd r = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
  const MatrixXd rinv = r.template triangularView<Eigen::Upper>().solve(MatrixXd::Identity(k, k));
  const MatrixXd inner = rinv * rinv.transpose();
  return qr.colsPermutation() * inner * qr.colsPermutation().transpose();
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Population variance (divides by n).
inline double variance(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt(variance(v) * static_cast<double>(v.size()) / static_cast<double>(v.size() - 1));
}

}  // namespace rdlab
