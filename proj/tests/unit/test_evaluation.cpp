#include <gtest/gtest.h>

#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <map>

#include "fixtures/risk_rows.hpp"
#include "rdlab/econometrics.hpp"
#include "rdlab/evaluation.hpp"
#include "rdlab/random.hpp"

using namespace rdlab;

namespace {

std::pair<double, double> cp_oracle(int k, int n, double level) {
  const double lo = k == 0 ? 0.0 : boost::math::ibeta_inv(k, n - k + 1, level / 2);
  const double hi = k == n ? 1.0 : boost::math::ibeta_inv(k + 1, n - k, 1 - level / 2);
  return {lo, hi};
}

unsigned long long choose(int n, int k) {
  if (k < 0 || k > n) return 0;
  unsigned long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<unsigned long long>(n - k + i) / static_cast<unsigned long long>(i);
  return r;
}

/// Enumerates every table with the observed margins and sums the
/// probabilities of those with an agreement cell at least as large.
double fisher_oracle(const Table2x2& t) {
  const long long r1 = t[0][0] + t[0][1], c1 = t[0][0] + t[1][0];
  const long long n = t[0][0] + t[0][1] + t[1][0] + t[1][1];
  const long long c2 = n - c1;
  unsigned long long num = 0, den = 0;
  for (long long a = 0; a <= r1; ++a) {
    const long long b = r1 - a, c = c1 - a, d = c2 - b;
    if (b < 0 || c < 0 || d < 0) continue;
    const auto w = choose(static_cast<int>(c1), static_cast<int>(a)) * choose(static_cast<int>(c2), static_cast<int>(b));
    den += w;
    if (a >= t[0][0]) num += w;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

ClassificationRecord rec(std::string arm, double d, bool report, BonusChoice bonus, int id) {
  ClassificationRecord r;
  r.responder_id = "r" + std::to_string(id % 7);
  r.graph_id = "g" + std::to_string(id);
  r.dgp_id = "dgp" + std::to_string(id % 11);
  r.d_multiple = d;
  r.arm = std::move(arm);
  r.reported_discontinuity = report;
  r.bonus = bonus;
  return r;
}

/// Brute-force sandwich: bread * (sum over same-cluster pairs x_i e_i e_j x_j') * bread.
double sandwich_oracle(const MatrixXd& x, const VectorXd& y, const std::vector<std::string>& g, Eigen::Index coef) {
  const MatrixXd bread = (x.transpose() * x).inverse();
  const VectorXd e = y - x * (bread * x.transpose() * y);
  MatrixXd meat = MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      if (g[static_cast<std::size_t>(i)] == g[static_cast<std::size_t>(j)])
        meat += x.row(i).transpose() * e(i) * e(j) * x.row(j);
  return (bread * meat * bread)(coef, coef);
}

}  // namespace

TEST(ClopperPearson, TwoOfEight) {
  const auto p = power_point(std::vector<bool>{true, true, false, false, false, false, false, false});
  EXPECT_DOUBLE_EQ(p.p_hat, 0.25);
  const auto [lo, hi] = cp_oracle(2, 8, 0.05);
  EXPECT_NEAR(p.ci_low, lo, 1e-4);
  EXPECT_NEAR(p.ci_high, hi, 1e-4);
  EXPECT_NEAR(p.ci_low, 0.0319, 1e-4);
  EXPECT_NEAR(p.ci_high, 0.6509, 1e-4);
}

TEST(ClopperPearson, Extremes) {
  const auto all = power_point(std::vector<bool>(8, true));
  EXPECT_DOUBLE_EQ(all.p_hat, 1.0);
  EXPECT_DOUBLE_EQ(all.ci_high, 1.0);
  const auto none = power_point(std::vector<bool>(8, false));
  EXPECT_DOUBLE_EQ(none.p_hat, 0.0);
  EXPECT_DOUBLE_EQ(none.ci_low, 0.0);
  EXPECT_THROW(power_point(std::vector<bool>{}), DomainError);
}

TEST(ClopperPearson, MatchesBetaQuantileOracle) {
  for (int n = 1; n <= 60; n += 3) {
    for (int k = 0; k <= n; ++k) {
      const auto [lo, hi] = stats::clopper_pearson(k, n, 0.05);
      const auto [olo, ohi] = cp_oracle(k, n, 0.05);
      EXPECT_NEAR(lo, olo, 1e-9) << k << "/" << n;
      EXPECT_NEAR(hi, ohi, 1e-9) << k << "/" << n;
      EXPECT_LE(lo, static_cast<double>(k) / n);
      EXPECT_GE(hi, static_cast<double>(k) / n);
    }
  }
}

TEST(ConservativeNormal, ClosedForm) {
  const auto [lo, hi] = conservative_normal_ci(0.5, 88);
  EXPECT_NEAR(lo, 0.3955, 1e-4);
  EXPECT_NEAR(hi, 0.6045, 1e-4);
  const auto [a, b] = conservative_normal_ci(0.0, 10);
  EXPECT_EQ(a, 0.0);
  EXPECT_EQ(b, 0.0);
}

TEST(ConservativeNormal, PoissonBinomialCoverage) {
  // 11 DGPs with heterogeneous probabilities, 8 classifications each.
  Rng rng = make_rng(17);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::vector<double> probs(11);
  for (auto& p : probs) p = u(rng);
  const double target = mean(probs);
  int covered = 0;
  const int sims = 2000;
  for (int s = 0; s < sims; ++s) {
    int k = 0;
    for (double p : probs)
      for (int m = 0; m < 8; ++m) k += std::bernoulli_distribution(p)(rng);
    const auto [lo, hi] = conservative_normal_ci(k / 88.0, 88);
    covered += lo <= target && target <= hi;
  }
  EXPECT_GE(covered / static_cast<double>(sims), 0.93);
}

TEST(PowerCurve, PoolsSignsAndOrdersLevels) {
  ClassificationBatch b;
  int id = 0;
  for (int i = 0; i < 10; ++i) b.records.push_back(rec("A", 0.0, i < 2, BonusChoice::fixed, id++));
  for (int i = 0; i < 10; ++i) b.records.push_back(rec("A", i % 2 ? 0.324 : -0.324, i < 6, BonusChoice::wager, id++));
  for (int i = 0; i < 4; ++i) b.records.push_back(rec("A", 1.5, true, BonusChoice::wager, id++));
  for (int i = 0; i < 4; ++i) b.records.push_back(rec("B", 1.5, false, BonusChoice::wager, id++));
  b.validate();
  const auto curve = power_curve(b, "A");
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_DOUBLE_EQ(curve[0].d_multiple, 0.0);
  EXPECT_DOUBLE_EQ(curve[1].d_multiple, 0.324);
  EXPECT_EQ(curve[1].n, 10);
  EXPECT_DOUBLE_EQ(type1_rate(curve), 0.2);
  EXPECT_DOUBLE_EQ(type2_rate(curve, 0.324), 0.4);
  EXPECT_DOUBLE_EQ(type2_rate(curve, -0.324), 0.4);
  EXPECT_DOUBLE_EQ(average_type2_rate(curve), 0.2);
  for (const auto& p : curve) {
    EXPECT_GE(p.p_hat, 0.0);
    EXPECT_LE(p.p_hat, 1.0);
    EXPECT_LE(p.ci_low, p.p_hat);
    EXPECT_GE(p.ci_high, p.p_hat);
  }
  const auto row = classical_risk_row(b, "A");
  EXPECT_DOUBLE_EQ(row.risk_equal, 0.6);
  EXPECT_DOUBLE_EQ(row.risk_kappa4, 1.2);
  EXPECT_TRUE(power_curve(b, "missing").empty());
  b.records.push_back(rec("A", 0.0, true, BonusChoice::fixed, 3));
  EXPECT_THROW(b.validate(), DomainError);
}

TEST(ClassicalRisk, ReportedRowsAndIdentities) {
  EXPECT_NEAR(classical_risk(0.306, 0.439, 1), 0.745, 1e-12);
  EXPECT_NEAR(classical_risk(0.306, 0.439, 4), 1.663, 1e-12);
  EXPECT_EQ(classical_risk(0, 0, 4), 0.0);
  EXPECT_NEAR(classical_risk(0.055, 0.634, 4), 0.853, 0.002);
  for (const auto& rows : {fixtures::kClassicalRows, fixtures::kAsRows}) {
    for (const auto& r : rows) {
      const auto row = risk_row(r.label, r.c1, r.c2);
      EXPECT_NEAR(row.risk_equal, r.c3, 0.002 + 1e-9) << r.label;
      EXPECT_NEAR(row.risk_kappa4, r.c4, 0.002 + 1e-9) << r.label;
    }
  }
  const auto as = risk_row("as", 0.212, 0.233);
  EXPECT_NEAR(as.risk_equal, 0.445, 1e-12);
  EXPECT_NEAR(as.risk_kappa4, 1.081, 1e-12);
}

TEST(ClassicalRisk, LinearAndHomogeneous) {
  Rng rng = make_rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng), k = 5 * u(rng), f = 5 * u(rng), s = 3 * u(rng);
    EXPECT_NEAR(classical_risk(a, b, s * k, s * f), s * classical_risk(a, b, k, f), 1e-12);
    EXPECT_NEAR(classical_risk(a + b, b, k, f), classical_risk(a, b, k, f) + k * b, 1e-12);
  }
}

TEST(BetaFromBonus, Midpoints) {
  const auto w = beta_from_bonus(BonusChoice::wager);
  EXPECT_DOUBLE_EQ(w.low, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(w.high, 1.0);
  EXPECT_NEAR(w.midpoint, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(beta_from_bonus(BonusChoice::fixed).midpoint, 7.0 / 12.0, 1e-15);
  const auto neutral = beta_from_bonus(BonusChoice::fixed, 1.0);
  EXPECT_TRUE(neutral.degenerate);
  EXPECT_DOUBLE_EQ(neutral.midpoint, 0.5);
  EXPECT_THROW(beta_from_bonus(BonusChoice::wager, 0.5), DomainError);
}

TEST(AsRisk, AveragesAndRange) {
  ClassificationBatch b;
  int id = 0;
  for (int i = 0; i < 6; ++i) b.records.push_back(rec("A", 0.0, false, BonusChoice::wager, id++));
  for (int i = 0; i < 6; ++i) b.records.push_back(rec("A", 0.324, true, i % 2 ? BonusChoice::wager : BonusChoice::fixed, id++));
  EXPECT_NEAR(as_risk(b, "A", 0.0), 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(as_risk(b, "A", 0.324), 7.0 / 24.0, 1e-12);
  EXPECT_TRUE(std::isnan(as_risk(b, "A", 0.9)));
  const auto row = as_risk_row(b, "A");
  EXPECT_NEAR(row.risk_equal, 1.0 / 6.0 + 7.0 / 24.0, 1e-12);
  Rng rng = make_rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    ClassificationBatch r;
    for (int i = 0; i < 20; ++i)
      r.records.push_back(rec("A", 0.54, true, std::bernoulli_distribution(0.4)(rng) ? BonusChoice::wager : BonusChoice::fixed, i));
    const double v = as_risk(r, "A", 0.54);
    EXPECT_GE(v, 1.0 / 6.0 - 1e-12);
    EXPECT_LE(v, 5.0 / 12.0 + 1e-12);
  }
}

TEST(MseDecomposition, ExamplesAndIdentity) {
  auto m = mse_decomposition(std::vector<double>{1, 1, 1, 1}, 1.0);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.bias_sq, 0.0);
  EXPECT_EQ(m.variance, 0.0);
  m = mse_decomposition(std::vector<double>{0, 2}, 1.0);
  EXPECT_DOUBLE_EQ(m.mse, 1.0);
  EXPECT_DOUBLE_EQ(m.bias_sq, 0.0);
  EXPECT_DOUBLE_EQ(m.variance, 1.0);
  m = mse_decomposition(std::vector<double>{0, 0}, 1.0);
  EXPECT_DOUBLE_EQ(m.mse, 1.0);
  EXPECT_DOUBLE_EQ(m.bias_sq, 1.0);
  EXPECT_DOUBLE_EQ(m.variance, 0.0);
  Rng rng = make_rng(4);
  std::normal_distribution<double> z(0.3, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> e(1 + rep % 50);
    for (auto& v : e) v = z(rng);
    const auto d = mse_decomposition(e, 0.25);
    EXPECT_NEAR(d.mse, d.bias_sq + d.variance, 1e-12);
  }
}

TEST(RoundAndZero, Rules) {
  EXPECT_DOUBLE_EQ(round_and_zero(0.2349, true), 0.23);
  EXPECT_DOUBLE_EQ(round_and_zero(5.0, false), 0.0);
  EXPECT_DOUBLE_EQ(round_and_zero(-0.005, true), -0.01);
  EXPECT_DOUBLE_EQ(round_and_zero(0.125, true), 0.13);
  EXPECT_TRUE(combined_inference(true, true));
  EXPECT_FALSE(combined_inference(true, false));
  EXPECT_FALSE(combined_inference(false, true));
  EXPECT_FALSE(combined_inference(false, false));
}

TEST(Fisher, KnownTables) {
  EXPECT_NEAR(*fisher_exact_one_sided({{{3, 1}, {1, 3}}}), 17.0 / 70.0, 1e-12);
  EXPECT_NEAR(*fisher_exact_one_sided({{{2, 0}, {0, 2}}}), 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(*fisher_exact_one_sided({{{0, 2}, {2, 0}}}), 1.0, 1e-12);
  EXPECT_FALSE(fisher_exact_one_sided({{{0, 0}, {3, 4}}}).has_value());
  EXPECT_FALSE(fisher_exact_one_sided({{{2, 0}, {5, 0}}}).has_value());
}

TEST(Fisher, MatchesMarginEnumeration) {
  Rng rng = make_rng(5);
  int checked = 0;
  while (checked < 500) {
    std::uniform_int_distribution<int> total(1, 30);
    const int n = total(rng);
    Table2x2 t{};
    for (int i = 0; i < n; ++i) {
      const int cell = std::uniform_int_distribution<int>(0, 3)(rng);
      ++t[cell / 2][cell % 2];
    }
    const auto p = fisher_exact_one_sided(t);
    const bool zero_margin = t[0][0] + t[0][1] == 0 || t[1][0] + t[1][1] == 0 || t[0][0] + t[1][0] == 0 ||
                             t[0][1] + t[1][1] == 0;
    EXPECT_EQ(p.has_value(), !zero_margin);
    if (!p) continue;
    EXPECT_NEAR(*p, fisher_oracle(t), 1e-12);
    EXPECT_GT(*p, 0.0);
    EXPECT_LE(*p, 1.0);
    ++checked;
  }
}

TEST(TstatRescale, BlockDiagonalDesign) {
  std::vector<double> x;
  for (int i = 0; i < 50; ++i) x.push_back(-0.9 + 0.01 * i);
  for (int i = 0; i < 50; ++i) x.push_back(0.01 + 0.01 * i);
  const MatrixXd design = piecewise_design(x, 0);
  EXPECT_NEAR(tstat_rescale(1.0, 2.0, design, 1), 5.0, 1e-10);
  EXPECT_EQ(tstat_rescale(0.0, 2.0, design, 1), 0.0);
  const MatrixXd q = piecewise_design(x, 5);
  EXPECT_GT(tstat_rescale(1.0, 1.0, q, 6), 0.0);
}

TEST(TwoWayCluster, SingletonsMatchHc0) {
  Rng rng = make_rng(6);
  std::normal_distribution<double> z;
  MatrixXd x(40, 2);
  VectorXd y(40);
  std::vector<std::string> a, b;
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i % 2;
    y(i) = 0.5 * x(i, 1) + z(rng) * (1 + x(i, 1));
    a.push_back("a" + std::to_string(i));
    b.push_back("b" + std::to_string(i));
  }
  const auto r = two_way_cluster_se(x, y, a, b, 1);
  EXPECT_NEAR(r.se, hc0_se(x, y, 1), 1e-10);
}

TEST(TwoWayCluster, DuplicatedRowsInSharedCluster) {
  MatrixXd x(4, 2);
  x << 1, 0, 1, 0, 1, 1, 1, 1;
  VectorXd y(4);
  y << 0.3, 1.1, 2.0, 1.2;
  MatrixXd xd(8, 2);
  VectorXd yd(8);
  std::vector<std::string> a, b;
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 2; ++c) {
      xd.row(2 * i + c) = x.row(i);
      yd(2 * i + c) = y(i);
      a.push_back("p" + std::to_string(i));
      b.push_back("g" + std::to_string(i));
    }
  }
  const auto r = two_way_cluster_se(xd, yd, a, b, 1);
  EXPECT_NEAR(r.se, hc0_se(x, y, 1), 1e-12);
  EXPECT_FALSE(r.floored);
}

TEST(TwoWayCluster, MatchesExplicitSandwichOracle) {
  Rng rng = make_rng(7);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> ca(0, 9), cb(0, 6);
  for (int rep = 0; rep < 20; ++rep) {
    MatrixXd x(50, 2);
    VectorXd y(50);
    std::vector<std::string> a, b, ab;
    for (int i = 0; i < 50; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = i < 25 ? 0.0 : 1.0;
      y(i) = z(rng) + 0.2 * x(i, 1);
      a.push_back(std::to_string(ca(rng)));
      b.push_back(std::to_string(cb(rng)));
      ab.push_back(a.back() + "|" + b.back());
    }
    const auto r = two_way_cluster_se(x, y, a, b, 1);
    const double va = sandwich_oracle(x, y, a, 1), vb = sandwich_oracle(x, y, b, 1), vab = sandwich_oracle(x, y, ab, 1);
    EXPECT_NEAR(r.var_a, va, 1e-10);
    EXPECT_NEAR(r.var_b, vb, 1e-10);
    EXPECT_NEAR(r.var_ab, vab, 1e-10);
    const double v = va + vb - vab;
    const double expect = v < 0 ? std::sqrt(std::max(va, vb)) : std::sqrt(v);
    EXPECT_NEAR(r.se, expect, 1e-10);
    EXPECT_EQ(r.floored, v < 0);
  }
}

TEST(TwoWayCluster, StackedDifference) {
  std::vector<double> y{1, 2, 3, 4, 2, 5, 7, 1};
  std::vector<double> g{0, 0, 0, 0, 1, 1, 1, 1};
  std::vector<std::string> a{"p1", "p2", "p3", "p4", "p1", "p2", "p3", "p4"};
  std::vector<std::string> b{"d1", "d2", "d1", "d2", "d1", "d2", "d1", "d2"};
  const auto r = stacked_difference_se(y, g, a, b);
  EXPECT_NEAR(r.coef, 3.75 - 2.5, 1e-12);
  EXPECT_GT(r.se, 0.0);
  EXPECT_THROW(two_way_cluster_se(MatrixXd::Ones(3, 1), VectorXd::Ones(3), a, b, 0), DomainError);
}
