#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rdlab/binning.hpp"
#include "rdlab/bundled.hpp"

using namespace rdlab;

namespace {

double gini_oracle(const std::vector<long long>& c) {
  double s = 0.0, total = 0.0;
  for (auto a : c) {
    total += static_cast<double>(a);
    for (auto b : c) s += std::abs(static_cast<double>(a - b));
  }
  const double n = static_cast<double>(c.size());
  return (s / (n * n)) / (2.0 * total / n);
}

Dataset uniform_linear(std::size_t n, double lo, double hi, double slope, std::uint64_t seed) {
  Dataset ds;
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng);
    ds.x.push_back(x);
    ds.y.push_back(slope * x + z(rng));
  }
  return ds;
}

}  // namespace

TEST(BinSelectors, AnalyticCases) {
  EXPECT_EQ(imse_bins_from_constants(1.0 / 12.0, 1.0, 1000), 6);
  EXPECT_EQ(imse_bins_from_constants(0.0, 1.0, 1000), 1);
  EXPECT_EQ(mv_bins_from_constants(1.0, 1.0, 1000), 21);
  EXPECT_EQ(mv_bins_from_constants(2.5, 2.5, 3), 3);
}

TEST(BinSelectors, DomainErrors) {
  EXPECT_THROW(imse_bins_from_constants(1.0, 0.0, 10), DomainError);
  EXPECT_THROW(imse_bins_from_constants(1.0, 1.0, 0), DomainError);
  EXPECT_THROW(mv_bins_from_constants(1.0, -1.0, 10), DomainError);
  EXPECT_THROW(mv_bins_from_constants(1.0, 1.0, 2), DomainError);
}

TEST(BinSelectors, ImseScalesAsCubeRoot) {
  // bias/var chosen so the pre-ceiling value is an exact multiple: (2*4/1)^(1/3) = 2.
  EXPECT_EQ(imse_bins_from_constants(4.0, 1.0, 1000), 20);
  EXPECT_EQ(imse_bins_from_constants(4.0, 1.0, 8000), 40);
}

TEST(BinSelectors, Monotonicity) {
  int prev = 0;
  for (double b = 0.0; b < 5.0; b += 0.1) {
    const int j = imse_bins_from_constants(b, 1.0, 500);
    EXPECT_GE(j, prev);
    prev = j;
  }
  prev = 0;
  for (long long n = 1; n < 100000; n = n * 3 + 1) {
    const int j = imse_bins_from_constants(0.3, 1.0, n);
    EXPECT_GE(j, prev);
    prev = j;
  }
  prev = 1 << 30;
  for (double v = 0.1; v < 5.0; v += 0.1) {
    const int j = imse_bins_from_constants(0.3, v, 500);
    EXPECT_LE(j, prev);
    prev = j;
  }
}

TEST(BinSelectors, MvOutgrowsImse) {
  double prev = 0.0;
  for (long long n : {1000LL, 10000LL, 100000LL}) {
    const double ratio = static_cast<double>(mv_bins_from_constants(1.1, 1.0, n)) / imse_bins_from_constants(1.0 / 12, 1.0, n);
    EXPECT_GT(ratio, prev);
    prev = ratio;
  }
}

TEST(BinConstants, ConstantCefHasNoBias) {
  // With a flat CEF the plug-in only picks up the sampling noise of the
  // quintic slope. On uniform [0, 1] with orthonormal shifted Legendre
  // polynomials, E mean(mu'^2) = sigma^2 / N * sum_{j=1..5} 2 (2j+1) j (j+1)
  // = 1260 / N.
  for (std::size_t n : {2000u, 8000u}) {
    double bias = 0.0;
    const int reps = 150;
    for (int r = 0; r < reps; ++r) {
      const auto c = estimate_bin_constants(uniform_linear(n, 0.0, 1.0, 0.0, derive_seed(3, r)), Side::right);
      bias += c.bias_const / reps;
      EXPECT_NEAR(c.v_total / c.var_const, 1.0, 0.10);
    }
    EXPECT_NEAR(bias / (1260.0 / 12.0 / static_cast<double>(n)), 1.0, 0.25) << n;
  }
}

TEST(BinConstants, LinearCefMatchesAnalyticIntegrals) {
  // mu(x) = x, f uniform on [0, 1], sigma = 1: Bias = 1/12, Var = 1, V = 1 + 1/12.
  double bias = 0.0, var = 0.0, v = 0.0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    const auto c = estimate_bin_constants(uniform_linear(10000, 0.0, 1.0, 1.0, derive_seed(8, r)), Side::right);
    bias += c.bias_const / reps;
    var += c.var_const / reps;
    v += c.v_total / reps;
    EXPECT_GE(c.v_total, c.var_const - 0.05);
  }
  EXPECT_NEAR(bias / (1.0 / 12.0), 1.0, 0.15);
  EXPECT_NEAR(var, 1.0, 0.05);
  EXPECT_NEAR(v / (1.0 + 1.0 / 12.0), 1.0, 0.05);
}

TEST(BinConstants, TooFewPoints) {
  Dataset ds = uniform_linear(9, 0.0, 1.0, 1.0, 1);
  EXPECT_THROW(estimate_bin_constants(ds, Side::right), InsufficientData);
}

TEST(SelectBins, ImseNeverExceedsMvOnBundledDgps) {
  for (const auto& name : bundled_names()) {
    const auto dgp = bundled_dgp(name);
    const auto ds = sample_dataset(dgp, 0.0, 5);
    const auto imse = select_bins(ds, BinSelector::imse, Spacing::even);
    const auto mv = select_bins(ds, BinSelector::mv, Spacing::even);
    EXPECT_LE(imse.j_minus, mv.j_minus) << name;
    EXPECT_LE(imse.j_plus, mv.j_plus) << name;
    EXPECT_EQ(imse.edges_left.size(), static_cast<std::size_t>(imse.j_minus) + 1);
    EXPECT_EQ(mv.edges_right.size(), static_cast<std::size_t>(mv.j_plus) + 1);
    EXPECT_DOUBLE_EQ(imse.edges_left.back(), 0.0);
    EXPECT_DOUBLE_EQ(imse.edges_right.front(), 0.0);
    EXPECT_LE(imse.edges_left.front(), *std::min_element(ds.x.begin(), ds.x.end()));
    EXPECT_GE(imse.edges_right.back(), *std::max_element(ds.x.begin(), ds.x.end()));
  }
}

TEST(BinMeans, QuantileBinsAreBalanced) {
  const auto ds = uniform_linear(1003, -1.0, 1.0, 2.0, 4);
  const auto plan = make_bin_plan(ds.x, 7, 9, Spacing::quantile);
  const auto s = bin_means(ds, plan);
  ASSERT_EQ(s.points.size(), 16u);
  EXPECT_EQ(s.empty_bins, 0u);
  std::size_t nl = 0;
  for (double v : ds.x) nl += v < 0;
  std::size_t total = 0;
  for (std::size_t k = 0; k < s.points.size(); ++k) {
    const std::size_t side_n = k < 7 ? nl : ds.size() - nl;
    const std::size_t j = k < 7 ? 7 : 9;
    EXPECT_LE(std::abs(static_cast<long>(s.points[k].count) - static_cast<long>(side_n / j)), 1);
    EXPECT_GT(s.points[k].count, 0u);
    total += s.points[k].count;
    if (k > 0) EXPECT_LT(s.points[k - 1].x_pos, s.points[k].x_pos);
  }
  EXPECT_EQ(total, ds.size());
}

TEST(BinMeans, EvenBinsUniformCountRatio) {
  const auto ds = uniform_linear(5000, -1.0, 1.0, 0.0, 6);
  const auto s = bin_means(ds, make_bin_plan(ds.x, 20, 20, Spacing::even));
  std::size_t lo = ds.size(), hi = 0;
  for (const auto& p : s.points) {
    lo = std::min(lo, p.count);
    hi = std::max(hi, p.count);
  }
  EXPECT_LE(static_cast<double>(hi) / lo, 2.0);
}

TEST(BinMeans, IdentityOutcomeGivesMeanX) {
  auto ds = uniform_linear(4000, -1.0, 1.0, 0.0, 7);
  ds.y = ds.x;
  const auto plan = make_bin_plan(ds.x, 10, 10, Spacing::even);
  const auto s = bin_means(ds, plan);
  for (const auto& p : s.points) EXPECT_NEAR(p.y_mean, p.x_pos, 0.02);
}

TEST(BinMeans, SingleBinPerSide) {
  const auto ds = uniform_linear(300, -1.0, 1.0, 1.0, 9);
  double sxl = 0, syl = 0, sxr = 0, syr = 0;
  int nl = 0, nr = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.x[i] < 0) sxl += ds.x[i], syl += ds.y[i], ++nl;
    else sxr += ds.x[i], syr += ds.y[i], ++nr;
  }
  const auto q = bin_means(ds, make_bin_plan(ds.x, 1, 1, Spacing::quantile));
  ASSERT_EQ(q.points.size(), 2u);
  EXPECT_NEAR(q.points[0].x_pos, sxl / nl, 1e-12);
  EXPECT_NEAR(q.points[0].y_mean, syl / nl, 1e-12);
  EXPECT_NEAR(q.points[1].x_pos, sxr / nr, 1e-12);
  const auto plan = make_bin_plan(ds.x, 1, 1, Spacing::even);
  const auto e = bin_means(ds, plan);
  ASSERT_EQ(e.points.size(), 2u);
  EXPECT_NEAR(e.points[0].x_pos, 0.5 * plan.edges_left.front(), 1e-12);
  EXPECT_NEAR(e.points[1].y_mean, syr / nr, 1e-12);
}

TEST(BinMeans, EmptyBinsDroppedAndCountsConserved) {
  Dataset ds;
  for (int i = 0; i < 50; ++i) {
    ds.x.push_back(-0.95 + 0.001 * i);
    ds.x.push_back(0.9 + 0.001 * i);
  }
  ds.x.push_back(-0.01);
  ds.y.assign(ds.x.size(), 1.0);
  const auto s = bin_means(ds, make_bin_plan(ds.x, 10, 10, Spacing::even));
  std::size_t total = 0;
  for (const auto& p : s.points) total += p.count;
  EXPECT_EQ(total, ds.size());
  EXPECT_GT(s.empty_bins, 0u);
  EXPECT_EQ(s.points.size() + s.empty_bins, 20u);
}

TEST(BinMeans, WeightedMeanEqualsSideMean) {
  const auto ds = uniform_linear(2000, -1.0, 1.0, 3.0, 10);
  for (auto spacing : {Spacing::even, Spacing::quantile}) {
    const auto s = bin_means(ds, make_bin_plan(ds.x, 13, 8, spacing));
    double wl = 0, cl = 0, yl = 0, nl = 0;
    for (const auto& p : s.points)
      if (p.x_pos < 0) wl += p.y_mean * p.count, cl += p.count;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.x[i] < 0) yl += ds.y[i], ++nl;
    EXPECT_NEAR(wl / cl, yl / nl, 1e-10);
  }
}

TEST(Gini, KnownValues) {
  EXPECT_DOUBLE_EQ(bin_count_gini(std::vector<long long>{5, 5, 5, 5}), 0.0);
  EXPECT_DOUBLE_EQ(bin_count_gini(std::vector<long long>{0, 7}), 0.5);
  EXPECT_THROW(bin_count_gini(std::vector<long long>{0, 0}), DomainError);
  EXPECT_THROW(bin_count_gini(std::vector<long long>{}), DomainError);
}

TEST(Gini, MatchesPairwiseOracle) {
  Rng rng = make_rng(12);
  std::uniform_int_distribution<long long> cnt(0, 500);
  std::uniform_int_distribution<int> len(1, 60);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<long long> c(static_cast<std::size_t>(len(rng)));
    for (auto& v : c) v = cnt(rng);
    if (std::accumulate(c.begin(), c.end(), 0LL) == 0) c[0] = 1;
    const double g = bin_count_gini(c);
    EXPECT_NEAR(g, gini_oracle(c), 1e-12);
    EXPECT_GE(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
}
