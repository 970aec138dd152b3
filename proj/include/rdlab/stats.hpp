#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "rdlab/error.hpp"

namespace rdlab::stats {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Two-sided critical value z_{1 - level/2}.
inline double two_sided_z(double level) { return normal_quantile(1.0 - level / 2.0); }

/// P(|N(t,1)| <= c).
inline double folded_normal_cdf(double c, double t) {
  if (c <= 0.0) return 0.0;
  return normal_cdf(c - t) - normal_cdf(-c - t);
}

/// 1-level quantile of |N(t,1)|: the critical value for a two-sided test
/// whose estimator may carry a bias of up to t standard errors.
inline double folded_normal_cv(double t, double level) {
  t = std::abs(t);
  const double z = two_sided_z(level);
  // The root lies in [max(t, z), t + z].
  double lo = std::max(t, z) - 1e-12;
  double hi = t + z + 1e-12;
  if (t == 0.0) return z;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (folded_normal_cdf(mid, t) < 1.0 - level) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// P(X >= k) for X ~ Binomial(n, p), summed term by term.
inline double binomial_upper_tail(int k, int n, double p) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  double s = 0.0;
  for (int j = k; j <= n; ++j) s += std::exp(log_choose(n, j) + j * lp + (n - j) * lq);
  return std::min(1.0, s);
}

/// P(X <= k).
inline double binomial_lower_tail(int k, int n, double p) {
  if (k >= n) return 1.0;
  if (k < 0) return 0.0;
  return std::max(0.0, 1.0 - binomial_upper_tail(k + 1, n, p));
}

/// Exact (Clopper-Pearson) interval for a binomial proportion, found by
/// inverting the binomial tails with bisection.
inline std::pair<double, double> clopper_pearson(int successes, int trials, double level = 0.05) {
  if (trials <= 0 || successes < 0 || successes > trials) {
    throw DomainError("clopper_pearson: need 0 <= successes <= trials, trials > 0");
  }
  const double a = level / 2.0;
  auto bisect = [](auto&& f, double lo, double hi) {
    // f increasing in p; find p with f(p) = 0.
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  double lower = 0.0;
  double upper = 1.0;
  if (successes > 0) {
    lower = bisect([&](double p) { return binomial_upper_tail(successes, trials, p) - a; }, 0.0, 1.0);
  }
  if (successes < trials) {
    upper = bisect([&](double p) { return a - binomial_lower_tail(successes, trials, p); }, 0.0, 1.0);
  }
  return {lower, upper};
}

}  // namespace rdlab::stats
