#pragma once

// Power functions, classical and communication risks, and the supporting
// inference utilities used to compare visual and econometric procedures.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "rdlab/error.hpp"
#include "rdlab/linalg.hpp"
#include "rdlab/stats.hpp"

namespace rdlab {

/// The eleven-level discontinuity grid, in multiples of sigma.
inline constexpr std::array<double, 6> kMagnitudeLevels{0.0, 0.1944, 0.324, 0.54, 0.9, 1.5};
inline constexpr double kModalMagnitude = 0.324;
inline constexpr double kLossAversion = 2.0;

enum class BonusChoice { wager, fixed };

struct ClassificationRecord {
  std::string responder_id;
  std::string graph_id;
  std::string dgp_id;
  double d_multiple = 0.0;
  std::string arm;
  bool reported_discontinuity = false;
  BonusChoice bonus = BonusChoice::fixed;
  std::optional<double> magnitude_estimate;
};

struct ClassificationBatch {
  std::vector<ClassificationRecord> records;

  /// Throws when a graph id repeats (graphs are single use).
  void validate() const {
    std::set<std::string> seen;
    for (const auto& r : records) {
      if (!seen.insert(r.graph_id).second) throw DomainError("classification batch: graph '" + r.graph_id + "' repeats");
    }
  }
};

struct PowerPoint {
  double d_multiple = 0.0;  // |d| level
  double p_hat = 0.0;
  int n = 0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Share reporting a discontinuity with a 95% Clopper-Pearson interval.
inline PowerPoint power_point(int reports, int n, double d_multiple = 0.0) {
  if (n <= 0) throw DomainError("power_point: no classifications");
  if (reports < 0 || reports > n) throw DomainError("power_point: report count outside [0, n]");
  PowerPoint p;
  p.d_multiple = d_multiple;
  p.n = n;
  p.p_hat = static_cast<double>(reports) / n;
  std::tie(p.ci_low, p.ci_high) = stats::clopper_pearson(reports, n, 0.05);
  return p;
}

inline PowerPoint power_point(const std::vector<bool>& classifications, double d_multiple = 0.0) {
  const auto k = std::count(classifications.begin(), classifications.end(), true);
  return power_point(static_cast<int>(k), static_cast<int>(classifications.size()), d_multiple);
}

/// p_hat +/- z sqrt(p_hat (1 - p_hat) / n), clipped to [0, 1]. Conservative
/// for Poisson-binomial sums of heterogeneous per-DGP probabilities.
inline std::pair<double, double> conservative_normal_ci(double p_hat, int n, double level = 0.05) {
  const double z = stats::two_sided_z(level);
  const double half = z * std::sqrt(p_hat * (1.0 - p_hat) / n);
  return {std::max(0.0, p_hat - half), std::min(1.0, p_hat + half)};
}

inline double magnitude_key(double d) { return std::round(std::abs(d) * 1e6) / 1e6; }

/// Power curve for one arm, pooling +|d| and -|d|; points ordered by |d|.
inline std::vector<PowerPoint> power_curve(const ClassificationBatch& batch, const std::string& arm) {
  std::map<double, std::pair<int, int>> tally;  // |d| -> (reports, n)
  for (const auto& r : batch.records) {
    if (r.arm != arm) continue;
    auto& t = tally[magnitude_key(r.d_multiple)];
    t.first += r.reported_discontinuity;
    t.second += 1;
  }
  std::vector<PowerPoint> curve;
  for (const auto& [d, t] : tally) {
    PowerPoint p;
    p.d_multiple = d;
    p.n = t.second;
    p.p_hat = static_cast<double>(t.first) / t.second;
    std::tie(p.ci_low, p.ci_high) = conservative_normal_ci(p.p_hat, p.n);
    curve.push_back(p);
  }
  return curve;
}

inline std::optional<PowerPoint> curve_at(const std::vector<PowerPoint>& curve, double d) {
  for (const auto& p : curve)
    if (p.d_multiple == magnitude_key(d)) return p;
  return std::nullopt;
}

inline double type1_rate(const std::vector<PowerPoint>& curve) {
  const auto p = curve_at(curve, 0.0);
  return p ? p->p_hat : NAN;
}

inline double type2_rate(const std::vector<PowerPoint>& curve, double d) {
  const auto p = curve_at(curve, d);
  return p ? 1.0 - p->p_hat : NAN;
}

/// Average type II rate over the nonzero levels present in the curve.
inline double average_type2_rate(const std::vector<PowerPoint>& curve) {
  double s = 0.0;
  int k = 0;
  for (const auto& p : curve) {
    if (p.d_multiple == 0.0) continue;
    s += 1.0 - p.p_hat;
    ++k;
  }
  return k ? s / k : NAN;
}

/// kappa * type I + phi * type II.
inline double classical_risk(double type1, double type2_at, double kappa, double phi = 1.0) {
  return kappa * type1 + phi * type2_at;
}

struct BetaInterval {
  double low = 0.0;
  double high = 0.0;
  double midpoint = 0.0;
  bool degenerate = false;
};

/// Interval for the perceived probability of being correct implied by the
/// bonus choice under loss aversion lambda: the wager is chosen iff
/// beta >= lambda / (1 + lambda).
inline BetaInterval beta_from_bonus(BonusChoice choice, double lambda = kLossAversion) {
  if (!(lambda >= 1.0)) throw DomainError("beta_from_bonus: lambda must be at least 1");
  const double t = lambda / (1.0 + lambda);
  BetaInterval b;
  if (choice == BonusChoice::wager) {
    b.low = t;
    b.high = 1.0;
  } else {
    b.low = 0.5;
    b.high = t;
  }
  b.midpoint = 0.5 * (b.low + b.high);
  b.degenerate = b.high <= b.low;
  return b;
}

/// Mean of 1 - beta midpoint over the arm's records at |d| = d_level.
inline double as_risk(const ClassificationBatch& batch, const std::string& arm, double d_level,
                      double lambda = kLossAversion) {
  double s = 0.0;
  int k = 0;
  const double key = magnitude_key(d_level);
  for (const auto& r : batch.records) {
    if (r.arm != arm || magnitude_key(r.d_multiple) != key) continue;
    s += 1.0 - beta_from_bonus(r.bonus, lambda).midpoint;
    ++k;
  }
  return k ? s / k : NAN;
}

enum class Type2Mode { at_modal, average_nonzero };

struct RiskTableRow {
  std::string arm;
  double type1 = 0.0;
  double type2_at = 0.0;
  double risk_equal = 0.0;
  double risk_kappa4 = 0.0;
};

inline RiskTableRow risk_row(const std::string& arm, double type1, double type2) {
  return {arm, type1, type2, classical_risk(type1, type2, 1.0), classical_risk(type1, type2, 4.0)};
}

inline RiskTableRow classical_risk_row(const ClassificationBatch& batch, const std::string& arm,
                                       Type2Mode mode = Type2Mode::at_modal) {
  const auto curve = power_curve(batch, arm);
  const double t2 = mode == Type2Mode::at_modal ? type2_rate(curve, kModalMagnitude) : average_type2_rate(curve);
  return risk_row(arm, type1_rate(curve), t2);
}

/// AS rows use the same weighting: column 1 is the risk at d = 0, column 2 at
/// the modal magnitude (or averaged over nonzero levels).
inline RiskTableRow as_risk_row(const ClassificationBatch& batch, const std::string& arm,
                                Type2Mode mode = Type2Mode::at_modal, double lambda = kLossAversion) {
  double second = 0.0;
  if (mode == Type2Mode::at_modal) {
    second = as_risk(batch, arm, kModalMagnitude, lambda);
  } else {
    int k = 0;
    for (double d : kMagnitudeLevels) {
      if (d == 0.0) continue;
      const double v = as_risk(batch, arm, d, lambda);
      if (std::isnan(v)) continue;
      second += v;
      ++k;
    }
    second = k ? second / k : NAN;
  }
  return risk_row(arm, as_risk(batch, arm, 0.0, lambda), second);
}

struct MseDecomposition {
  double mse = 0.0;
  double bias_sq = 0.0;
  double variance = 0.0;
};

inline MseDecomposition mse_decomposition(std::span<const double> estimates, double true_d) {
  if (estimates.empty()) throw DomainError("mse_decomposition: no estimates");
  const double m = mean(estimates);
  MseDecomposition out;
  for (double e : estimates) {
    out.mse += (e - true_d) * (e - true_d);
    out.variance += (e - m) * (e - m);
  }
  const auto n = static_cast<double>(estimates.size());
  out.mse /= n;
  out.variance /= n;
  out.bias_sq = (m - true_d) * (m - true_d);
  return out;
}

/// Zero when the test does not reject; otherwise rounded to the nearest
/// hundredth, halves away from zero.
inline double round_and_zero(double estimate, bool reject) {
  if (!reject) return 0.0;
  return std::round(estimate * 100.0) / 100.0;
}

inline bool combined_inference(bool visual, bool econometric) { return visual && econometric; }

/// 2x2 table {{a, b}, {c, d}}; rows are one classifier, columns the other.
using Table2x2 = std::array<std::array<long long, 2>, 2>;

/// One-sided Fisher exact p-value toward positive association: P(A >= a)
/// under the hypergeometric law with the observed margins. Empty when a
/// margin is zero.
inline std::optional<double> fisher_exact_one_sided(const Table2x2& t) {
  for (const auto& row : t)
    for (long long v : row)
      if (v < 0) throw DomainError("fisher_exact_one_sided: negative cell");
  const long long r1 = t[0][0] + t[0][1];
  const long long r2 = t[1][0] + t[1][1];
  const long long c1 = t[0][0] + t[1][0];
  const long long c2 = t[0][1] + t[1][1];
  if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) return std::nullopt;
  const long long n = r1 + r2;
  auto log_pmf = [&](long long a) {
    return stats::log_choose(static_cast<int>(c1), static_cast<int>(a)) +
           stats::log_choose(static_cast<int>(c2), static_cast<int>(r1 - a)) -
           stats::log_choose(static_cast<int>(n), static_cast<int>(r1));
  };
  const long long hi = std::min(r1, c1);
  double p = 0.0;
  for (long long a = t[0][0]; a <= hi; ++a) p += std::exp(log_pmf(a));
  return std::min(1.0, p);
}

/// Discontinuity scaled to a t-statistic: d_multiple * sigma / (sigma * sqrt((X'X)^{-1}_dd)).
inline double tstat_rescale(double d_multiple, double sigma, const MatrixXd& design, Eigen::Index coef) {
  if (d_multiple == 0.0) return 0.0;
  const MatrixXd inv = gram_inverse(design);
  const double factor = std::sqrt(inv(coef, coef));
  if (!(sigma > 0.0)) return d_multiple / factor;
  return d_multiple * sigma / (sigma * factor);
}

struct ClusterSe {
  double coef = 0.0;
  double se = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  double var_ab = 0.0;
  bool floored = false;  // inclusion-exclusion went negative
};

namespace detail {

template <class Key>
MatrixXd cluster_meat(const MatrixXd& x, const VectorXd& e, std::span<const Key> cluster) {
  std::unordered_map<Key, VectorXd> score;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto [it, fresh] = score.try_emplace(cluster[static_cast<std::size_t>(i)], VectorXd::Zero(x.cols()));
    it->second += x.row(i).transpose() * e(i);
  }
  MatrixXd meat = MatrixXd::Zero(x.cols(), x.cols());
  for (const auto& [k, s] : score) meat += s * s.transpose();
  return meat;
}

}  // namespace detail

/// OLS with two-way cluster-robust variance V_A + V_B - V_{A and B} for
/// coefficient `coef`. Negative combined variance falls back to the larger
/// one-way variance.
inline ClusterSe two_way_cluster_se(const MatrixXd& x, const VectorXd& y, std::span<const std::string> cluster_a,
                                    std::span<const std::string> cluster_b, Eigen::Index coef) {
  if (static_cast<std::size_t>(x.rows()) != cluster_a.size() || cluster_a.size() != cluster_b.size()) {
    throw DomainError("two_way_cluster_se: cluster labels must match the rows");
  }
  const MatrixXd bread = gram_inverse(x);
  const VectorXd beta = bread * (x.transpose() * y);
  const VectorXd e = y - x * beta;
  std::vector<std::string> both(cluster_a.size());
  for (std::size_t i = 0; i < both.size(); ++i) both[i] = cluster_a[i] + '\x1f' + cluster_b[i];
  auto var = [&](std::span<const std::string> c) {
    const MatrixXd v = bread * detail::cluster_meat<std::string>(x, e, c) * bread;
    return v(coef, coef);
  };
  ClusterSe out;
  out.coef = beta(coef);
  out.var_a = var(cluster_a);
  out.var_b = var(cluster_b);
  out.var_ab = var(both);
  double v = out.var_a + out.var_b - out.var_ab;
  if (v < 0.0) {
    v = std::max(out.var_a, out.var_b);
    out.floored = true;
  }
  out.se = std::sqrt(v);
  return out;
}

/// Stacked comparison y = b0 + b1 * group + e; returns the clustered SE of b1.
inline ClusterSe stacked_difference_se(std::span<const double> y, std::span<const double> group,
                                       std::span<const std::string> cluster_a,
                                       std::span<const std::string> cluster_b) {
  MatrixXd x(static_cast<Eigen::Index>(y.size()), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = group[static_cast<std::size_t>(i)];
  }
  return two_way_cluster_se(x, to_vector(y), cluster_a, cluster_b, 1);
}

/// Heteroskedasticity-robust (HC0) variance for coefficient `coef`.
inline double hc0_se(const MatrixXd& x, const VectorXd& y, Eigen::Index coef) {
  const MatrixXd bread = gram_inverse(x);
  const VectorXd e = y - x * (bread * (x.transpose() * y));
  MatrixXd meat = MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) meat += x.row(i).transpose() * x.row(i) * e(i) * e(i);
  const MatrixXd v = bread * meat * bread;
  return std::sqrt(v(coef, coef));
}

}  // namespace rdlab
