#pragma once

// Data-driven bin selection (IMSE-optimal and mimicking-variance) and binned
// means for RD scatter plots.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rdlab/dgp.hpp"
#include "rdlab/error.hpp"
#include "rdlab/linalg.hpp"

namespace rdlab {

enum class BinSelector { imse, mv };
enum class Spacing { even, quantile };
enum class Side { left, right };

/// J = max(1, ceil((2 Bias / Var)^(1/3) n^(1/3))).
inline int imse_bins_from_constants(double bias_const, double var_const, long long n) {
  if (!(var_const > 0.0)) throw DomainError("imse_bins: variance constant must be positive");
  if (bias_const < 0.0) throw DomainError("imse_bins: bias constant must be nonnegative");
  if (n < 1) throw DomainError("imse_bins: n must be at least 1");
  const double j = std::cbrt(2.0 * bias_const / var_const) * std::cbrt(static_cast<double>(n));
  return std::max(1, static_cast<int>(std::ceil(j)));
}

/// J = max(1, ceil((V / Var) n / ln(n)^2)).
inline int mv_bins_from_constants(double v_total, double var_const, long long n) {
  if (!(var_const > 0.0)) throw DomainError("mv_bins: variance constant must be positive");
  if (!(v_total > 0.0)) throw DomainError("mv_bins: total variance must be positive");
  if (n < 3) throw DomainError("mv_bins: n must be at least 3");
  const double ln = std::log(static_cast<double>(n));
  const double j = (v_total / var_const) * static_cast<double>(n) / (ln * ln);
  return std::max(1, static_cast<int>(std::ceil(j)));
}

struct BinConstants {
  double bias_const = 0.0;
  double var_const = 0.0;
  double v_total = 0.0;
};

/// Plug-in selector constants for one side from a quintic fit on that side:
///   Bias = (xbar^2 / 12) * (1/N) * sum_side mu'(x_i)^2
///   Var  = mean squared residual on the side
///   V    = sample variance of y on the side
/// where xbar is the largest |x| on the side and N the total sample size.
inline BinConstants estimate_bin_constants(std::span<const double> x, std::span<const double> y, Side side) {
  std::vector<double> sx, sy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if ((side == Side::left) == (x[i] < 0.0)) {
      sx.push_back(x[i]);
      sy.push_back(y[i]);
    }
  }
  if (sx.size() < 10) throw InsufficientData("estimate_bin_constants: fewer than 10 points on the side");
  const int order = std::min<int>(5, static_cast<int>(detail::count_distinct(sx)) - 2);
  if (order < 0) throw FitError("estimate_bin_constants: degenerate running variable", INFINITY);
  const auto fit = fit_polynomial(sx, sy, order);
  const Polynomial coef(fit.coef.data(), fit.coef.data() + fit.coef.size());
  const Polynomial slope = poly_derivative(coef);
  double xbar = 0.0;
  double sq = 0.0;
  for (double v : sx) {
    xbar = std::max(xbar, std::abs(v));
    const double d = poly_eval(slope, v);
    sq += d * d;
  }
  BinConstants c;
  c.bias_const = xbar * xbar / 12.0 * sq / static_cast<double>(x.size());
  c.var_const = fit.ssr / static_cast<double>(sx.size());
  c.v_total = variance(sy) * static_cast<double>(sy.size()) / static_cast<double>(sy.size() - 1);
  return c;
}

inline BinConstants estimate_bin_constants(const Dataset& ds, Side side) {
  return estimate_bin_constants(ds.x, ds.y, side);
}

struct BinPlan {
  int j_minus = 1;
  int j_plus = 1;
  Spacing spacing = Spacing::even;
  std::vector<double> edges_left;   // ascending, j_minus + 1 values ending at 0
  std::vector<double> edges_right;  // ascending, j_plus + 1 values starting at 0
};

struct BinPoint {
  double x_pos = 0.0;
  double y_mean = 0.0;
  std::size_t count = 0;
};

struct BinnedSeries {
  std::vector<BinPoint> points;
  std::size_t empty_bins = 0;  // even spacing only; empty bins hold no observations
};

namespace detail {

inline std::vector<double> even_edges(double a, double b, int j) {
  std::vector<double> e(static_cast<std::size_t>(j) + 1);
  for (int k = 0; k <= j; ++k) e[static_cast<std::size_t>(k)] = a + (b - a) * k / j;
  e.front() = a;
  e.back() = b;
  return e;
}

/// Rank boundaries for splitting n sorted values into j groups of size
/// floor(n/j) or floor(n/j) + 1.
inline std::size_t quantile_rank(std::size_t n, int j, int k) {
  return static_cast<std::size_t>((static_cast<unsigned long long>(n) * static_cast<unsigned>(k)) /
                                  static_cast<unsigned>(j));
}

inline std::vector<double> quantile_edges(std::vector<double> sorted, int j, double a, double b) {
  std::vector<double> e(static_cast<std::size_t>(j) + 1);
  e.front() = a;
  e.back() = b;
  for (int k = 1; k < j; ++k) e[static_cast<std::size_t>(k)] = sorted[quantile_rank(sorted.size(), j, k)];
  return e;
}

}  // namespace detail

inline BinPlan make_bin_plan(std::span<const double> x, int j_minus, int j_plus, Spacing spacing) {
  std::vector<double> xl, xr;
  for (double v : x) (v < 0.0 ? xl : xr).push_back(v);
  if (xl.empty() || xr.empty()) throw InsufficientData("bin plan: both sides need observations");
  std::sort(xl.begin(), xl.end());
  std::sort(xr.begin(), xr.end());
  BinPlan plan;
  plan.spacing = spacing;
  plan.j_minus = std::max(1, j_minus);
  plan.j_plus = std::max(1, j_plus);
  const double lo = xl.front();
  const double hi = std::max(xr.back(), 0.0);
  if (spacing == Spacing::even) {
    plan.edges_left = detail::even_edges(lo, 0.0, plan.j_minus);
    plan.edges_right = detail::even_edges(0.0, hi, plan.j_plus);
  } else {
    plan.j_minus = std::min<int>(plan.j_minus, static_cast<int>(xl.size()));
    plan.j_plus = std::min<int>(plan.j_plus, static_cast<int>(xr.size()));
    plan.edges_left = detail::quantile_edges(xl, plan.j_minus, lo, 0.0);
    plan.edges_right = detail::quantile_edges(xr, plan.j_plus, 0.0, hi);
  }
  return plan;
}

/// Chooses J- and J+ with the requested selector (N is the full sample size)
/// and lays out the edges.
inline BinPlan select_bins(const Dataset& ds, BinSelector selector, Spacing spacing) {
  const auto n = static_cast<long long>(ds.size());
  auto count = [&](Side s) {
    const auto c = estimate_bin_constants(ds, s);
    return selector == BinSelector::imse ? imse_bins_from_constants(c.bias_const, c.var_const, n)
                                         : mv_bins_from_constants(c.v_total, c.var_const, n);
  };
  return make_bin_plan(ds.x, count(Side::left), count(Side::right), spacing);
}

/// Bin averages of y. Even spacing places each point at the bin midpoint and
/// drops empty bins; quantile spacing assigns observations by rank within a
/// side (so no bin is empty) and places each point at the mean x of its bin.
inline BinnedSeries bin_means(std::span<const double> x, std::span<const double> y, const BinPlan& plan) {
  BinnedSeries out;
  std::vector<std::size_t> left, right;
  for (std::size_t i = 0; i < x.size(); ++i) (x[i] < 0.0 ? left : right).push_back(i);
  auto by_x = [&](std::size_t a, std::size_t b) { return x[a] < x[b] || (x[a] == x[b] && a < b); };
  std::sort(left.begin(), left.end(), by_x);
  std::sort(right.begin(), right.end(), by_x);

  auto do_side = [&](const std::vector<std::size_t>& idx, const std::vector<double>& edges, int j) {
    if (plan.spacing == Spacing::quantile) {
      const int jj = std::min<int>(j, static_cast<int>(idx.size()));
      for (int k = 0; k < jj; ++k) {
        const auto a = detail::quantile_rank(idx.size(), jj, k);
        const auto b = detail::quantile_rank(idx.size(), jj, k + 1);
        BinPoint p;
        double sx = 0.0;
        double sy = 0.0;
        for (auto r = a; r < b; ++r) {
          sx += x[idx[r]];
          sy += y[idx[r]];
        }
        p.count = b - a;
        p.x_pos = sx / static_cast<double>(p.count);
        p.y_mean = sy / static_cast<double>(p.count);
        out.points.push_back(p);
      }
      return;
    }
    std::vector<double> sum(static_cast<std::size_t>(j), 0.0);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(j), 0);
    for (std::size_t i : idx) {
      auto it = std::upper_bound(edges.begin(), edges.end(), x[i]);
      auto k = static_cast<long>(it - edges.begin()) - 1;
      k = std::clamp<long>(k, 0, j - 1);
      sum[static_cast<std::size_t>(k)] += y[i];
      cnt[static_cast<std::size_t>(k)] += 1;
    }
    for (int k = 0; k < j; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (cnt[kk] == 0) {
        ++out.empty_bins;
        continue;
      }
      out.points.push_back({0.5 * (edges[kk] + edges[kk + 1]), sum[kk] / static_cast<double>(cnt[kk]), cnt[kk]});
    }
  };
  do_side(left, plan.edges_left, plan.j_minus);
  do_side(right, plan.edges_right, plan.j_plus);
  return out;
}

inline BinnedSeries bin_means(const Dataset& ds, const BinPlan& plan) { return bin_means(ds.x, ds.y, plan); }

/// Gini coefficient of bin counts: mean absolute pairwise difference / (2 mean).
inline double bin_count_gini(std::span<const long long> counts) {
  if (counts.empty()) throw DomainError("bin_count_gini: empty input");
  std::vector<double> c(counts.begin(), counts.end());
  double total = 0.0;
  for (double v : c) {
    if (v < 0.0) throw DomainError("bin_count_gini: negative count");
    total += v;
  }
  if (!(total > 0.0)) throw DomainError("bin_count_gini: counts sum to zero");
  std::sort(c.begin(), c.end());
  // sum_{i,j} |c_i - c_j| = 2 sum_i (2i - n + 1) c_(i) over sorted values (0-based i).
  const double n = static_cast<double>(c.size());
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += (2.0 * static_cast<double>(i) - n + 1.0) * c[i];
  const double mean_abs_diff = 2.0 * s / (n * n);
  return mean_abs_diff / (2.0 * total / n);
}

}  // namespace rdlab
