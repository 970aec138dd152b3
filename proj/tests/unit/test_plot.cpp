#include <gtest/gtest.h>

#include <map>
#include <regex>

#include "rdlab/bundled.hpp"
#include "rdlab/plot.hpp"

using namespace rdlab;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

std::vector<GraphicalParams> all_gammas() {
  std::vector<GraphicalParams> out;
  for (auto sel : {BinSelector::imse, BinSelector::mv})
    for (auto sp : {Spacing::even, Spacing::quantile})
      for (std::optional<int> fit : {std::optional<int>{}, std::optional<int>{4}})
        for (bool v : {false, true})
          for (auto ys : {YScale::default_range, YScale::doubled}) out.push_back({sel, sp, fit, v, ys});
  return out;
}

}  // namespace

TEST(RenderRdPlot, StructureMatchesSummary) {
  const auto dgp = bundled_dgp("vote_share");
  const auto ds = sample_dataset(dgp, 0.54, 3);
  for (const auto& g : all_gammas()) {
    const auto r = render_rd_plot(ds, g, "g-1");
    const auto bins = bin_means(ds, select_bins(ds, g.bin_selector, g.spacing));
    EXPECT_EQ(count(r.svg, "<circle"), bins.points.size()) << g.label();
    EXPECT_EQ(r.summary.n_points, bins.points.size());
    EXPECT_EQ(count(r.svg, "class=\"vline\"") == 1, g.vertical_line) << g.label();
    EXPECT_EQ(r.summary.has_vline, g.vertical_line);
    EXPECT_EQ(count(r.svg, "<polyline"), g.fit_order ? 2u : 0u) << g.label();
    EXPECT_EQ(r.summary.has_fitlines, g.fit_order.has_value());
    EXPECT_EQ(r.truth.gamma, g);
    EXPECT_EQ(r.truth.graph_id, "g-1");
  }
}

TEST(RenderRdPlot, YRangeRules) {
  const auto ds = sample_dataset(bundled_dgp("curved"), 0.9, 5);
  GraphicalParams g;
  const auto bins = bin_means(ds, select_bins(ds, g.bin_selector, g.spacing));
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& p : bins.points) lo = std::min(lo, p.y_mean), hi = std::max(hi, p.y_mean);
  const auto def = render_rd_plot(ds, g).summary;
  EXPECT_NEAR(def.y_min, lo - 0.05 * (hi - lo), 1e-12);
  EXPECT_NEAR(def.y_max, hi + 0.05 * (hi - lo), 1e-12);
  g.y_scale = YScale::doubled;
  const auto dbl = render_rd_plot(ds, g).summary;
  EXPECT_NEAR(dbl.y_max - dbl.y_min, 2.0 * (def.y_max - def.y_min), 1e-9);
  EXPECT_NEAR(0.5 * (dbl.y_max + dbl.y_min), 0.5 * (lo + hi), 1e-9);
}

TEST(RenderRdPlot, FitLinesStayInsideObservedRange) {
  const auto ds = sample_dataset(bundled_dgp("age_threshold"), 0.0, 6);
  GraphicalParams g;
  g.fit_order = 4;
  const auto layers = prepare_layers(ds, g);
  double lmin = INFINITY, lmax = -INFINITY, rmin = INFINITY, rmax = -INFINITY;
  for (double v : ds.x) {
    if (v < 0) lmin = std::min(lmin, v), lmax = std::max(lmax, v);
    else rmin = std::min(rmin, v), rmax = std::max(rmax, v);
  }
  ASSERT_EQ(layers.fit_left.size(), 200u);
  ASSERT_EQ(layers.fit_right.size(), 200u);
  for (const auto& [x, y] : layers.fit_left) {
    EXPECT_GE(x, lmin);
    EXPECT_LE(x, lmax);
  }
  for (const auto& [x, y] : layers.fit_right) {
    EXPECT_GE(x, rmin);
    EXPECT_LE(x, rmax);
  }
  const auto svg = render_rd_plot(ds, g).svg;
  const auto pos = svg.find("class=\"fit-left\" points=\"");
  ASSERT_NE(pos, std::string::npos);
  const auto end = svg.find('"', pos + 26);
  EXPECT_EQ(count(svg.substr(pos, end - pos), ","), 200u);
}

TEST(RenderRdPlot, DeterministicAndTruthFree) {
  const auto ds = sample_dataset(bundled_dgp("test_score"), -0.9, 7);
  GraphicalParams g{BinSelector::mv, Spacing::quantile, 4, true, YScale::doubled};
  const auto a = render_rd_plot(ds, g, "graph-7");
  const auto b = render_rd_plot(ds, g, "graph-7");
  EXPECT_EQ(a.svg, b.svg);
  EXPECT_EQ(a.truth.dgp_id, "test_score");
  EXPECT_DOUBLE_EQ(a.truth.d_multiple, -0.9);
  for (const char* leak : {"test_score", "graph-7", "d_multiple", "dgp", "seed", "-0.9"}) {
    EXPECT_EQ(a.svg.find(leak), std::string::npos) << leak;
  }
  EXPECT_EQ(a.svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(a.svg.find("width=\"800\" height=\"600\""), std::string::npos);
}

TEST(RenderRdPlot, RejectsBadFitOrder) {
  const auto ds = sample_dataset(bundled_dgp("linear"), 0.0, 1);
  GraphicalParams g;
  g.fit_order = 9;
  EXPECT_THROW(render_rd_plot(ds, g), DomainError);
  EXPECT_EQ(GraphicalParams{}.label(), "imse-even-nofit-vline-default");
}

TEST(RenderLineup, TwentyPanelsWithSeparateAnswer) {
  const auto dgp = bundled_dgp("vote_share");
  const auto real = sample_dataset(dgp, 0.0, 99);
  const auto l = render_lineup(real, dgp, 1234);
  EXPECT_EQ(count(l.svg, "class=\"panel\""), 20u);
  EXPECT_GE(l.answer, 1);
  EXPECT_LE(l.answer, 20);
  EXPECT_EQ((l.answer_row - 1) * 5 + l.answer_col, l.answer);
  ASSERT_EQ(l.decoy_seeds.size(), 19u);
  std::set<std::uint64_t> seeds(l.decoy_seeds.begin(), l.decoy_seeds.end());
  EXPECT_EQ(seeds.size(), 19u);
  EXPECT_EQ(seeds.count(real.seed), 0u);
  for (auto s : l.decoy_seeds) EXPECT_EQ(sample_dataset(dgp, 0.0, s).true_d, 0.0);
  EXPECT_EQ(render_lineup(real, dgp, 1234).svg, l.svg);
  EXPECT_EQ(l.svg.find("answer"), std::string::npos);
  EXPECT_EQ(l.svg.find("vote_share"), std::string::npos);
  // Every panel shares the lineup's axis range: all points inside the frame.
  std::regex cy("cy=\"([0-9.]+)\"");
  for (auto it = std::sregex_iterator(l.svg.begin(), l.svg.end(), cy); it != std::sregex_iterator(); ++it) {
    const double v = std::stod((*it)[1]);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 720.0);
  }
}

TEST(RenderLineup, AnswerSlotIsUniform) {
  std::vector<int> hits(20, 0);
  const int n = 20000;
  for (int s = 0; s < n; ++s) ++hits[static_cast<std::size_t>(lineup_answer_slot(derive_seed(5, s)))];
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - n / 20.0) * (h - n / 20.0) / (n / 20.0);
  EXPECT_LT(chi2, 43.8);  // 0.999 quantile of chi-square with 19 df
}
