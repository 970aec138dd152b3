#include <gtest/gtest.h>

#include <sstream>

#include "rdlab/bundled.hpp"
#include "rdlab/io.hpp"

using namespace rdlab;

TEST(Csv, ReadsMicrodata) {
  std::istringstream in("x, y\r\n1,2\n-3.5,4e1\n\n0.25 , -1\n");
  const auto m = read_microdata_csv(in, 0.5, true);
  EXPECT_EQ(m.raw_x, (std::vector<double>{1.0, -3.5, 0.25}));
  EXPECT_EQ(m.y, (std::vector<double>{2.0, 40.0, -1.0}));
  EXPECT_EQ(m.cutoff, 0.5);
  EXPECT_TRUE(m.semi_discrete);
}

TEST(Csv, RejectsBadInput) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_microdata_csv(in, 0.0);
  };
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("a,b\n1,2\n"), ParseError);
  EXPECT_THROW(parse("x,y\n1\n"), ParseError);
  EXPECT_THROW(parse("x,y\n1,2,3\n"), ParseError);
  EXPECT_THROW(parse("x,y\n1,abc\n"), ParseError);
  EXPECT_THROW(parse("x,y\n1,nan\n"), ParseError);
  try {
    parse("x,y\n1,2\n3,oops\n");
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, DatasetRoundTripIsExact) {
  const auto ds = sample_dataset(bundled_dgp("curved"), 0.54, 3);
  std::stringstream s;
  write_dataset_csv(s, ds);
  const auto back = read_dataset_csv(s);
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.y, ds.y);
}

TEST(Json, DgpRoundTripIsExact) {
  for (const auto& dgp : {bundled_dgp("vote_share"),
                          bundled_dgp("age_threshold", {CefKind::local_linear, NoiseKind::fan_yao})}) {
    const json j = dgp;
    EXPECT_EQ(j.at("schema_version"), kDgpSchemaVersion);
    EXPECT_EQ(j.at("provenance").at("source_hash").get<std::string>().size(), 16u);
    const auto back = json::parse(j.dump()).get<Dgp>();
    EXPECT_EQ(back.x_pool, dgp.x_pool);
    EXPECT_EQ(back.sigma, dgp.sigma);
    for (double x : {-0.9, -0.3, -1e-9, 0.0, 0.4, 0.98}) {
      EXPECT_EQ(back.mean_at(x), dgp.mean_at(x));
      EXPECT_EQ(back.noise_sd(x), dgp.noise_sd(x));
    }
    EXPECT_EQ(sample_dataset(back, 0.3, 8).y, sample_dataset(dgp, 0.3, 8).y);
  }
}

TEST(Json, DgpSchemaIsChecked) {
  json j = bundled_dgp("linear");
  j["schema_version"] = 99;
  EXPECT_THROW(j.get<Dgp>(), ParseError);
  j = bundled_dgp("linear");
  j["cef"]["kind"] = "spline";
  EXPECT_THROW(j.get<Dgp>(), ParseError);
}

TEST(Json, GraphicalParamsAndTruth) {
  GraphicalParams g{BinSelector::mv, Spacing::quantile, 4, false, YScale::doubled};
  const json j = g;
  EXPECT_EQ(j.at("bin_selector"), "mv");
  EXPECT_EQ(j.at("y_scale"), "doubled");
  EXPECT_EQ(j.get<GraphicalParams>(), g);
  EXPECT_EQ(json::parse(R"({"fit_order": null})").get<GraphicalParams>(), GraphicalParams{});
  EXPECT_THROW(json::parse(R"({"fit_order": 12})").get<GraphicalParams>(), DomainError);

  const GraphTruth t{"g-1", "curved", -0.324, 0xFFFFFFFFFFFFFFFFULL, g};
  const json tj = t;
  std::set<std::string> keys;
  for (const auto& [k, v] : tj.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"graph_id", "dgp_id", "d_multiple", "seed", "gamma"}));
  const auto back = tj.get<GraphTruth>();
  EXPECT_EQ(back.seed, t.seed);
  EXPECT_EQ(back.gamma, g);
}

TEST(Json, BinsAndInference) {
  const auto ds = sample_dataset(bundled_dgp("vote_share"), 0.0, 4);
  const auto plan = select_bins(ds, BinSelector::imse, Spacing::quantile);
  const auto back = json(plan).get<BinPlan>();
  EXPECT_EQ(back.edges_left, plan.edges_left);
  EXPECT_EQ(back.j_plus, plan.j_plus);
  const auto series = bin_means(ds, plan);
  const auto sb = json(series).get<BinnedSeries>();
  ASSERT_EQ(sb.points.size(), series.points.size());
  EXPECT_EQ(sb.points[0].y_mean, series.points[0].y_mean);

  const auto r = run_inference(Method::ik, ds);
  const auto j = inference_json(r);
  EXPECT_EQ(j.at("method"), "ik");
  EXPECT_FALSE(j.contains("weights"));
  EXPECT_EQ(j.at("bandwidth").get<double>(), *r.bandwidth);
  EXPECT_TRUE(j.at("bias_bound").is_null());
  EXPECT_EQ(inference_json(r, true).at("weights").size(), ds.size());
}

TEST(Csv, EvaluationTables) {
  const std::vector<PowerPoint> curve{power_point(2, 8, 0.0), power_point(5, 8, 0.324)};
  const auto csv = power_curves_csv({{"arm1", curve}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "arm,d_multiple,p_hat,n,ci_low,ci_high");
  EXPECT_NE(csv.find("arm1,0,0.25,8,"), std::string::npos);
  EXPECT_NE(csv.find("arm1,0.324,0.625,8,"), std::string::npos);
  const auto risk = risk_table_csv({risk_row("a", 0.306, 0.439)}, {risk_row("a", 0.212, 0.233)});
  EXPECT_NE(risk.find("classical,a,0.306,0.439,0.745,1.663"), std::string::npos);
  EXPECT_NE(risk.find("as,a,0.212,0.233,0.445,1.081"), std::string::npos);
}
