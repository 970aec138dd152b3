#pragma once

// Discontinuity estimation and testing at the normalized cutoff x = 0:
//   pq   global piecewise quintic, homoskedastic standard errors
//   ik   local linear at the IK plug-in bandwidth, conventional inference
//   cct  local linear with bias correction from local quadratic fits at a
//        pilot bandwidth; robust standard errors
//   ak   local linear with a fixed worst-case bias bound over a Taylor class
//
// Every estimate is linear in y and carries its weight vector.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdlab/dgp.hpp"
#include "rdlab/error.hpp"
#include "rdlab/kernel.hpp"
#include "rdlab/linalg.hpp"
#include "rdlab/localpoly.hpp"
#include "rdlab/stats.hpp"

namespace rdlab {

enum class Method { pq, ik, cct, ak };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::pq: return "pq";
    case Method::ik: return "ik";
    case Method::cct: return "cct";
    case Method::ak: return "ak";
  }
  return "?";
}

inline Method method_from_name(std::string_view s) {
  if (s == "pq") return Method::pq;
  if (s == "ik") return Method::ik;
  if (s == "cct") return Method::cct;
  if (s == "ak") return Method::ak;
  throw DomainError("unknown method '" + std::string(s) + "'");
}

struct InferenceResult {
  Method method = Method::pq;
  double estimate = 0.0;  // outcome units
  double se = 0.0;
  double t_stat = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool reject = false;
  double level = 0.05;
  double critical_value = 0.0;  // on the t scale (AK: folded-normal quantile)
  std::optional<double> bandwidth;
  std::optional<double> pilot_bandwidth;
  std::optional<double> bias_bound;  // AK worst-case bias
  std::vector<double> weights;       // estimate == dot(weights, y)
};

/// Side-sorted view of a dataset with nearest-neighbour residual variances.
class RdSample {
 public:
  RdSample(std::span<const double> x, std::span<const double> y) : x_(x.begin(), x.end()), y_(y.begin(), y.end()) {
    if (x_.size() != y_.size()) throw DomainError("RdSample: x and y differ in length");
    for (std::size_t i = 0; i < x_.size(); ++i) (x_[i] < 0.0 ? left_ : right_).push_back(i);
    auto by_x = [this](std::size_t a, std::size_t b) { return x_[a] < x_[b]; };
    std::sort(left_.begin(), left_.end(), by_x);
    std::sort(right_.begin(), right_.end(), by_x);
    sigma2_.assign(x_.size(), 0.0);
    for (const auto* side : {&left_, &right_}) {
      std::vector<double> sx, sy;
      for (std::size_t i : *side) {
        sx.push_back(x_[i]);
        sy.push_back(y_[i]);
      }
      const auto s2 = nn_residual_variance(sx, sy, 3);
      for (std::size_t m = 0; m < side->size(); ++m) sigma2_[(*side)[m]] = s2[m];
    }
  }
  explicit RdSample(const Dataset& ds) : RdSample(ds.x, ds.y) {}

  std::size_t size() const noexcept { return x_.size(); }
  const std::vector<double>& x() const noexcept { return x_; }
  const std::vector<double>& y() const noexcept { return y_; }
  /// Indices of x < 0 (ascending x).
  const std::vector<std::size_t>& left() const noexcept { return left_; }
  /// Indices of x >= 0 (ascending x).
  const std::vector<std::size_t>& right() const noexcept { return right_; }
  const std::vector<double>& sigma2() const noexcept { return sigma2_; }

  double max_abs_x() const noexcept {
    double m = 0.0;
    if (!left_.empty()) m = std::max(m, -x_[left_.front()]);
    if (!right_.empty()) m = std::max(m, x_[right_.back()]);
    return m;
  }

  /// The k observations of a side closest to the cutoff.
  std::vector<std::size_t> nearest(bool right_side, std::size_t k) const {
    const auto& s = right_side ? right_ : left_;
    k = std::min(k, s.size());
    return right_side ? std::vector<std::size_t>(s.begin(), s.begin() + static_cast<long>(k))
                      : std::vector<std::size_t>(s.end() - static_cast<long>(k), s.end());
  }

  double dot(std::span<const double> w) const {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * y_[i];
    return s;
  }

  /// Sandwich standard error of a linear estimator.
  double sandwich_se(std::span<const double> w) const {
    double v = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * w[i] * sigma2_[i];
    return std::sqrt(v);
  }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<std::size_t> left_;
  std::vector<std::size_t> right_;
  std::vector<double> sigma2_;
};

// ---------------------------------------------------------------------------
// Piecewise polynomial regression

/// Design [1, x, ..., x^k, D, D x, ..., D x^k] with D = 1[x >= 0]; the
/// discontinuity is the coefficient of D (column k + 1).
inline MatrixXd piecewise_design(std::span<const double> x, int order) {
  MatrixXd m(static_cast<Eigen::Index>(x.size()), 2 * (order + 1));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double xi = x[static_cast<std::size_t>(i)];
    const double d = xi >= 0.0 ? 1.0 : 0.0;
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      m(i, j) = p;
      m(i, order + 1 + j) = d * p;
      p *= xi;
    }
  }
  return m;
}

inline InferenceResult piecewise_poly_test(const Dataset& ds, int order = 5, double level = 0.05) {
  std::vector<double> xl, xr;
  for (double v : ds.x) (v < 0.0 ? xl : xr).push_back(v);
  const auto need = static_cast<std::size_t>(order) + 2;
  if (detail::count_distinct(xl) < need || detail::count_distinct(xr) < need) {
    throw FitError("piecewise polynomial test: need " + std::to_string(need) + " distinct x per side", INFINITY);
  }
  const MatrixXd design = piecewise_design(ds.x, order);
  const MatrixXd inv = gram_inverse(design);
  const Eigen::Index col = order + 1;
  const VectorXd w = design * inv.row(col).transpose();  // loading of each y_i on the jump
  const VectorXd y = to_vector(ds.y);
  const VectorXd beta = inv * (design.transpose() * y);
  const double ssr = (y - design * beta).squaredNorm();
  const double dof = static_cast<double>(design.rows() - design.cols());
  const double s2 = dof > 0 ? ssr / dof : 0.0;

  InferenceResult r;
  r.method = Method::pq;
  r.level = level;
  r.estimate = beta(col);
  r.se = std::sqrt(std::max(0.0, s2 * inv(col, col)));
  r.critical_value = stats::two_sided_z(level);
  r.t_stat = r.se > 0.0 ? r.estimate / r.se : (r.estimate == 0.0 ? 0.0 : std::copysign(INFINITY, r.estimate));
  r.ci_low = r.estimate - r.critical_value * r.se;
  r.ci_high = r.estimate + r.critical_value * r.se;
  r.reject = std::abs(r.t_stat) > r.critical_value;
  r.weights.assign(w.data(), w.data() + w.size());
  return r;
}

inline InferenceResult piecewise_quintic_test(const Dataset& ds, double level = 0.05) {
  return piecewise_poly_test(ds, 5, level);
}

// ---------------------------------------------------------------------------
// Kernel constants

/// Coefficients g with K*_j(u) = (sum_a g_a u^a) K(u), the boundary
/// equivalent kernel for coefficient j of an order-p local polynomial fit.
inline VectorXd equivalent_kernel_poly(const Kernel& k, int p, int j) {
  MatrixXd gamma(p + 1, p + 1);
  for (int a = 0; a <= p; ++a)
    for (int b = 0; b <= p; ++b) gamma(a, b) = k.moment(a + b);
  VectorXd e = VectorXd::Zero(p + 1);
  e(j) = 1.0;
  return gamma.ldlt().solve(e);
}

/// (bias moment int u^(p+1) K*, variance moment int K*^2) on [0, 1].
inline std::pair<double, double> equivalent_kernel_moments(const Kernel& k, int p, int j) {
  const VectorXd g = equivalent_kernel_poly(k, p, j);
  double b = 0.0;
  double v = 0.0;
  for (int a = 0; a <= p; ++a) {
    b += g(a) * k.moment(p + 1 + a);
    for (int c = 0; c <= p; ++c) v += g(a) * g(c) * k.moment_sq(a + c);
  }
  return {b, v};
}

/// MSE-optimal local linear boundary constant (V_K / B_K^2)^(1/5);
/// 3.4375 for the triangular kernel.
inline double ik_constant(const Kernel& k) {
  const auto [b, v] = equivalent_kernel_moments(k, 1, 0);
  return std::pow(v / (b * b), 0.2);
}

/// Pilot constant for the local quadratic estimate of the x^2 coefficient:
/// (90 V / B^2)^(1/7) with B, V the moments of its equivalent kernel.
inline double pilot_constant(const Kernel& k) {
  const auto [b, v] = equivalent_kernel_moments(k, 2, 2);
  return std::pow(90.0 * v / (b * b), 1.0 / 7.0);
}

// ---------------------------------------------------------------------------
// IK bandwidth

struct IkPlugins {
  double density0 = 0.0;       // f(0)
  double sigma2_left = 0.0;    // sigma^2(0-)
  double sigma2_right = 0.0;   // sigma^2(0+)
  double curv_left = 0.0;      // mu''(0-)
  double curv_right = 0.0;     // mu''(0+)
  double regularization = 0.0; // r
};

struct IkBandwidth {
  double h = 0.0;
  double unclipped = 0.0;
  IkPlugins plugins;
  double constant = 0.0;
  std::size_t n = 0;
};

/// h = C (S / (f (mu''+ - mu''-)^2 + r))^(1/5) N^(-1/5), S = sigma^2(0+) + sigma^2(0-).
inline double ik_formula(const IkPlugins& p, std::size_t n, double constant) {
  const double num = p.sigma2_left + p.sigma2_right;
  const double diff = p.curv_right - p.curv_left;
  const double den = p.density0 * diff * diff + p.regularization;
  if (!(num > 0.0)) throw BandwidthError("ik_bandwidth: nonpositive conditional variance estimate");
  if (!(den > 0.0)) return INFINITY;
  return constant * std::pow(num / den, 0.2) * std::pow(static_cast<double>(n), -0.2);
}

namespace detail {

struct SideFit {
  LeastSquaresFit fit;
  double width = 0.0;  // largest |x| used
  std::size_t count = 0;
};

inline SideFit fit_nearest(const RdSample& s, bool right_side, std::size_t k, int order) {
  const auto idx = s.nearest(right_side, k);
  std::vector<double> xs, ys;
  double w = 0.0;
  for (std::size_t i : idx) {
    xs.push_back(s.x()[i]);
    ys.push_back(s.y()[i]);
    w = std::max(w, std::abs(s.x()[i]));
  }
  return {fit_polynomial(xs, ys, order), w, idx.size()};
}

}  // namespace detail

inline IkBandwidth ik_bandwidth(const RdSample& s, const Kernel& kernel = {}) {
  const std::size_t n = s.size();
  if (s.left().size() < 30 || s.right().size() < 30) {
    throw InsufficientData("ik_bandwidth: need at least 30 observations per side");
  }
  IkBandwidth out;
  out.n = n;
  out.constant = ik_constant(kernel);
  auto& p = out.plugins;

  // Density at the cutoff with a uniform-kernel pilot.
  const double sd = sample_sd(s.x());
  const double hs = 1.84 * sd * std::pow(static_cast<double>(n), -0.2);
  std::size_t inside = 0;
  for (double v : s.x()) inside += std::abs(v) <= hs;
  p.density0 = static_cast<double>(inside) / (2.0 * static_cast<double>(n) * hs);
  if (!(p.density0 > 0.0)) throw BandwidthError("ik_bandwidth: no observations near the cutoff");

  // Conditional variances from local linear fits on the nearest q points.
  const auto q = std::max<std::size_t>(20, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n))));
  for (bool right : {false, true}) {
    const auto f = detail::fit_nearest(s, right, q, 1);
    const double s2 = f.fit.ssr / static_cast<double>(f.count - 2);
    (right ? p.sigma2_right : p.sigma2_left) = s2;
  }
  if (!(p.sigma2_left > 0.0) || !(p.sigma2_right > 0.0)) {
    throw BandwidthError("ik_bandwidth: degenerate conditional variance estimate");
  }

  // Second derivatives from quadratic fits on the nearest 20% of points, with
  // the regularization r = sum_side 720 sigma^2 / (N_2 h_2^4).
  const auto k2 = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n)));
  for (bool right : {false, true}) {
    const auto f = detail::fit_nearest(s, right, std::max<std::size_t>(k2, 4), 2);
    (right ? p.curv_right : p.curv_left) = 2.0 * f.fit.coef(2);
    const double s2 = right ? p.sigma2_right : p.sigma2_left;
    const double h2 = f.width;
    p.regularization += 720.0 * s2 / (static_cast<double>(f.count) * std::pow(h2, 4));
  }

  out.unclipped = ik_formula(p, n, out.constant);
  out.h = std::min(out.unclipped, s.max_abs_x());
  return out;
}

inline IkBandwidth ik_bandwidth(const Dataset& ds, const Kernel& kernel = {}) {
  return ik_bandwidth(RdSample(ds), kernel);
}

// ---------------------------------------------------------------------------
// Local linear estimation

struct LocalLinearEstimate {
  double tau = 0.0;
  double se = 0.0;
  double h = 0.0;
  std::vector<double> weights;  // full length; +right intercept map, -left intercept map
};

namespace detail {

/// Local polynomial maps for one side, with indices translated to the sample.
inline LocalPolyMaps side_maps(const RdSample& s, bool right_side, double h, int order, const Kernel& kernel,
                               std::size_t min_points) {
  const auto& idx = right_side ? s.right() : s.left();
  // Only the window [-h, 0) or [0, h] can carry kernel weight.
  std::vector<double> xs;
  std::vector<std::size_t> src;
  for (std::size_t i : idx) {
    if (std::abs(s.x()[i]) <= h) {
      xs.push_back(s.x()[i]);
      src.push_back(i);
    }
  }
  auto maps = local_poly_maps(xs, 0.0, h, order, kernel, min_points);
  for (auto& i : maps.index) i = src[i];
  return maps;
}

}  // namespace detail

inline LocalLinearEstimate local_linear_estimate(const RdSample& s, double h, const Kernel& kernel = {}) {
  if (!(h > 0.0)) throw DomainError("local_linear_estimate: bandwidth must be positive");
  LocalLinearEstimate out;
  out.h = h;
  out.weights.assign(s.size(), 0.0);
  for (bool right : {false, true}) {
    const auto maps = detail::side_maps(s, right, h, 1, kernel, 3);
    const double sign = right ? 1.0 : -1.0;
    for (std::size_t m = 0; m < maps.index.size(); ++m) {
      out.weights[maps.index[m]] = sign * maps.maps(0, static_cast<Eigen::Index>(m));
    }
  }
  out.tau = s.dot(out.weights);
  out.se = s.sandwich_se(out.weights);
  return out;
}

inline LocalLinearEstimate local_linear_estimate(const Dataset& ds, double h, const Kernel& kernel = {}) {
  return local_linear_estimate(RdSample(ds), h, kernel);
}

namespace detail {

inline InferenceResult t_test_result(Method m, double estimate, double se, double cv, double level) {
  InferenceResult r;
  r.method = m;
  r.level = level;
  r.estimate = estimate;
  r.se = se;
  r.critical_value = cv;
  r.t_stat = se > 0.0 ? estimate / se : (estimate == 0.0 ? 0.0 : std::copysign(INFINITY, estimate));
  if (std::isinf(cv)) {
    r.ci_low = -INFINITY;
    r.ci_high = INFINITY;
  } else {
    r.ci_low = estimate - cv * se;
    r.ci_high = estimate + cv * se;
  }
  r.reject = std::abs(r.t_stat) > cv;
  return r;
}

}  // namespace detail

/// Conventional local linear test at a given bandwidth.
inline InferenceResult local_linear_test(const RdSample& s, double h, double level = 0.05,
                                         std::optional<double> critical_value = std::nullopt,
                                         const Kernel& kernel = {}) {
  const auto est = local_linear_estimate(s, h, kernel);
  auto r = detail::t_test_result(Method::ik, est.tau, est.se, critical_value.value_or(stats::two_sided_z(level)),
                                 level);
  r.bandwidth = h;
  r.weights = est.weights;
  return r;
}

inline InferenceResult ik_test(const RdSample& s, double level = 0.05,
                               std::optional<double> critical_value = std::nullopt, const Kernel& kernel = {}) {
  return local_linear_test(s, ik_bandwidth(s, kernel).h, level, critical_value, kernel);
}

inline InferenceResult ik_test(const Dataset& ds, double level = 0.05,
                               std::optional<double> critical_value = std::nullopt, const Kernel& kernel = {}) {
  return ik_test(RdSample(ds), level, critical_value, kernel);
}

// ---------------------------------------------------------------------------
// CCT robust bias-corrected inference

struct PilotBandwidth {
  double b = 0.0;
  double third_left = 0.0;   // mu'''(0-) from a global cubic
  double third_right = 0.0;  // mu'''(0+)
};

/// Pilot bandwidth for the local quadratic curvature fits:
/// b = C_b (S / (f (mu'''+^2 + mu'''-^2)))^(1/7) N^(-1/7), at least h and at
/// most max|x|.
inline PilotBandwidth cct_pilot_bandwidth(const RdSample& s, const IkBandwidth& ik, const Kernel& kernel = {}) {
  PilotBandwidth out;
  for (bool right : {false, true}) {
    const auto& idx = right ? s.right() : s.left();
    std::vector<double> xs, ys;
    for (std::size_t i : idx) {
      xs.push_back(s.x()[i]);
      ys.push_back(s.y()[i]);
    }
    const auto fit = fit_polynomial(xs, ys, 3);
    (right ? out.third_right : out.third_left) = 6.0 * fit.coef(3);
  }
  const auto& p = ik.plugins;
  const double curv = out.third_left * out.third_left + out.third_right * out.third_right;
  const double den = p.density0 * curv;
  double b = den > 0.0 ? pilot_constant(kernel) * std::pow((p.sigma2_left + p.sigma2_right) / den, 1.0 / 7.0) *
                             std::pow(static_cast<double>(s.size()), -1.0 / 7.0)
                       : INFINITY;
  b = std::min(b, s.max_abs_x());
  out.b = std::max(b, ik.h);
  return out;
}

inline InferenceResult cct_robust_test(const RdSample& s, double level = 0.05,
                                       std::optional<double> critical_value = std::nullopt,
                                       const Kernel& kernel = {}) {
  const auto ik = ik_bandwidth(s, kernel);
  const auto pilot = cct_pilot_bandwidth(s, ik, kernel);
  const auto est = local_linear_estimate(s, ik.h, kernel);

  // Bias of each intercept is sum_i w_i c2 x_i^2; c2 comes from a local
  // quadratic fit at b, itself linear in y, so the corrected estimator keeps
  // a single weight vector.
  std::vector<double> w = est.weights;
  for (bool right : {false, true}) {
    const auto& idx = right ? s.right() : s.left();
    double loading = 0.0;
    for (std::size_t i : idx) loading += est.weights[i] * s.x()[i] * s.x()[i];
    const auto q = detail::side_maps(s, right, pilot.b, 2, kernel, 4);
    for (std::size_t m = 0; m < q.index.size(); ++m) {
      w[q.index[m]] -= loading * q.maps(2, static_cast<Eigen::Index>(m));
    }
  }
  const double tau_bc = s.dot(w);
  const double se = s.sandwich_se(w);
  auto r = detail::t_test_result(Method::cct, tau_bc, se, critical_value.value_or(stats::two_sided_z(level)),
                                 level);
  r.bandwidth = ik.h;
  r.pilot_bandwidth = pilot.b;
  r.weights = std::move(w);
  return r;
}

inline InferenceResult cct_robust_test(const Dataset& ds, double level = 0.05,
                                       std::optional<double> critical_value = std::nullopt,
                                       const Kernel& kernel = {}) {
  return cct_robust_test(RdSample(ds), level, critical_value, kernel);
}

// ---------------------------------------------------------------------------
// AK honest confidence intervals

/// Rule-of-thumb bound on |mu''|: global quartic per side, maximum of the
/// absolute second derivative over the observed x of that side.
inline double rot_second_derivative_bound(std::span<const double> x, std::span<const double> y) {
  std::vector<double> xl, yl, xr, yr;
  detail::split_sides(x, y, xl, yl, xr, yr);
  double bound = 0.0;
  for (int side = 0; side < 2; ++side) {
    const auto& sx = side == 0 ? xl : xr;
    const auto& sy = side == 0 ? yl : yr;
    const auto fit = fit_polynomial(sx, sy, 4);
    const Polynomial c(fit.coef.data(), fit.coef.data() + fit.coef.size());
    const Polynomial d2 = poly_derivative(poly_derivative(c));
    for (double v : sx) bound = std::max(bound, std::abs(poly_eval(d2, v)));
  }
  return bound;
}

inline double rot_second_derivative_bound(const Dataset& ds) { return rot_second_derivative_bound(ds.x, ds.y); }

/// 40 log-spaced bandwidths in [3 * smallest positive gap, max|x|].
inline std::vector<double> ak_bandwidth_grid(const RdSample& s, int points = 40) {
  std::vector<double> xs = s.x();
  std::sort(xs.begin(), xs.end());
  double gap = INFINITY;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double g = xs[i] - xs[i - 1];
    if (g > 0.0) gap = std::min(gap, g);
  }
  const double hi = s.max_abs_x();
  double lo = std::isfinite(gap) ? std::min(3.0 * gap, hi) : hi;
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    const double t = points == 1 ? 1.0 : static_cast<double>(k) / (points - 1);
    grid[static_cast<std::size_t>(k)] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
  }
  grid.back() = hi;
  return grid;
}

inline InferenceResult ak_honest_ci(const RdSample& s, double c_t, double level = 0.05,
                                    const Kernel& kernel = {}) {
  if (!std::isfinite(c_t) || c_t < 0.0) throw DomainError("ak_honest_ci: C_T must be finite and nonnegative");
  std::optional<LocalLinearEstimate> best;
  double best_half = INFINITY;
  double best_bias = 0.0;
  double best_cv = 0.0;
  for (double h : ak_bandwidth_grid(s)) {
    LocalLinearEstimate est;
    try {
      est = local_linear_estimate(s, h, kernel);
    } catch (const InsufficientData&) {
      continue;
    }
    if (!(est.se > 0.0)) continue;
    double bias = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) bias += std::abs(est.weights[i]) * s.x()[i] * s.x()[i];
    bias *= c_t;
    const double cv = stats::folded_normal_cv(bias / est.se, level);
    const double half = est.se * cv;
    if (half < best_half) {
      best_half = half;
      best_bias = bias;
      best_cv = cv;
      best = std::move(est);
    }
  }
  if (!best) throw InsufficientData("ak_honest_ci: no admissible bandwidth on the grid");
  InferenceResult r;
  r.method = Method::ak;
  r.level = level;
  r.estimate = best->tau;
  r.se = best->se;
  r.t_stat = r.estimate / r.se;
  r.critical_value = best_cv;
  r.ci_low = r.estimate - best_half;
  r.ci_high = r.estimate + best_half;
  r.reject = r.ci_low > 0.0 || r.ci_high < 0.0;
  r.bandwidth = best->h;
  r.bias_bound = best_bias;
  r.weights = std::move(best->weights);
  return r;
}

inline InferenceResult ak_honest_ci(const Dataset& ds, double c_t, double level = 0.05, const Kernel& kernel = {}) {
  return ak_honest_ci(RdSample(ds), c_t, level, kernel);
}

// ---------------------------------------------------------------------------

/// Smallest c with #{|t| > c} <= target * n, i.e. the (k+1)-th largest |t|
/// for k = floor(target * n).
inline double adjusted_critical_value(std::span<const double> null_t_stats, double target_rate) {
  if (null_t_stats.empty()) throw DomainError("adjusted_critical_value: empty input");
  if (!(target_rate > 0.0)) throw DomainError("adjusted_critical_value: target rate must be positive");
  const std::size_t n = null_t_stats.size();
  const auto allowed = static_cast<std::size_t>(std::floor(target_rate * static_cast<double>(n) + 1e-9));
  if (allowed >= n) return 0.0;
  std::vector<double> mags(n);
  std::transform(null_t_stats.begin(), null_t_stats.end(), mags.begin(), [](double t) { return std::abs(t); });
  std::nth_element(mags.begin(), mags.begin() + static_cast<long>(allowed), mags.end(), std::greater<>());
  return mags[allowed];
}

struct InferenceOptions {
  double level = 0.05;
  std::optional<double> critical_value;  // ik / cct / pq override
  std::optional<double> c_t;             // ak; rule of thumb when absent
  Kernel kernel{};
};

inline InferenceResult run_inference(Method m, const Dataset& ds, const InferenceOptions& opt = {}) {
  switch (m) {
    case Method::pq: {
      auto r = piecewise_quintic_test(ds, opt.level);
      if (opt.critical_value) {
        auto adj = detail::t_test_result(Method::pq, r.estimate, r.se, *opt.critical_value, opt.level);
        adj.weights = std::move(r.weights);
        return adj;
      }
      return r;
    }
    case Method::ik: return ik_test(ds, opt.level, opt.critical_value, opt.kernel);
    case Method::cct: return cct_robust_test(ds, opt.level, opt.critical_value, opt.kernel);
    case Method::ak: {
      const double ct = opt.c_t ? *opt.c_t : rot_second_derivative_bound(ds);
      return ak_honest_ci(ds, ct, opt.level, opt.kernel);
    }
  }
  throw DomainError("run_inference: unknown method");
}

}  // namespace rdlab
