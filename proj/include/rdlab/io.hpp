#pragma once

// CSV and JSON wire formats: microdata, DGPs, bin plans, inference results,
// graph sidecars and the evaluation tables.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rdlab/binning.hpp"
#include "rdlab/dgp.hpp"
#include "rdlab/econometrics.hpp"
#include "rdlab/error.hpp"
#include "rdlab/evaluation.hpp"
#include "rdlab/plot.hpp"

namespace rdlab {

using json = nlohmann::json;

inline constexpr int kDgpSchemaVersion = 1;

NLOHMANN_JSON_SERIALIZE_ENUM(BinSelector, {{BinSelector::imse, "imse"}, {BinSelector::mv, "mv"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Spacing, {{Spacing::even, "even"}, {Spacing::quantile, "quantile"}})
NLOHMANN_JSON_SERIALIZE_ENUM(YScale, {{YScale::default_range, "default"}, {YScale::doubled, "doubled"}})
NLOHMANN_JSON_SERIALIZE_ENUM(BonusChoice, {{BonusChoice::wager, "wager"}, {BonusChoice::fixed, "fixed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NoiseKind, {{NoiseKind::homoskedastic, "homoskedastic"}, {NoiseKind::fan_yao, "fan_yao"}})

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline double parse_number(const std::string& field, std::size_t line) {
  const std::string t = trim(field);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": not a finite number: '" + t + "'");
  }
  return v;
}

// Shortest text that round-trips.
inline std::string csv_num(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> json_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

// ---- CSV ------------------------------------------------------------------

/// Reads a two-column `x,y` CSV (header required). The cutoff is not part of the file.
inline Microdata read_microdata_csv(std::istream& in, double cutoff, bool semi_discrete = false) {
  Microdata m;
  m.cutoff = cutoff;
  m.semi_discrete = semi_discrete;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (!header) {
      std::string h;
      for (char c : t) {
        if (!std::isspace(static_cast<unsigned char>(c))) h += static_cast<char>(std::tolower(c));
      }
      if (h != "x,y") throw ParseError("line " + std::to_string(lineno) + ": expected header 'x,y'");
      header = true;
      continue;
    }
    const auto comma = t.find(',');
    if (comma == std::string::npos || t.find(',', comma + 1) != std::string::npos) {
      throw ParseError("line " + std::to_string(lineno) + ": expected two fields");
    }
    m.raw_x.push_back(detail::parse_number(t.substr(0, comma), lineno));
    m.y.push_back(detail::parse_number(t.substr(comma + 1), lineno));
  }
  if (!header) throw ParseError("empty CSV: expected header 'x,y'");
  return m;
}

inline Microdata read_microdata_csv_file(const std::string& path, double cutoff, bool semi_discrete = false) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_microdata_csv(in, cutoff, semi_discrete);
}

inline void write_xy_csv(std::ostream& out, std::span<const double> x, std::span<const double> y) {
  out << "x,y\n";
  for (std::size_t i = 0; i < x.size(); ++i) out << detail::csv_num(x[i]) << ',' << detail::csv_num(y[i]) << '\n';
}

inline void write_dataset_csv(std::ostream& out, const Dataset& ds) { write_xy_csv(out, ds.x, ds.y); }

inline Dataset read_dataset_csv(std::istream& in) {
  auto m = read_microdata_csv(in, 0.0);
  Dataset ds;
  ds.x = std::move(m.raw_x);
  ds.y = std::move(m.y);
  return ds;
}

/// Power curves in long form, one row per arm and |d| level.
inline std::string power_curves_csv(const std::vector<std::pair<std::string, std::vector<PowerPoint>>>& curves) {
  std::ostringstream out;
  out << "arm,d_multiple,p_hat,n,ci_low,ci_high\n";
  for (const auto& [arm, curve] : curves) {
    for (const auto& p : curve) {
      out << arm << ',' << detail::csv_num(p.d_multiple) << ',' << detail::csv_num(p.p_hat) << ',' << p.n << ','
          << detail::csv_num(p.ci_low) << ',' << detail::csv_num(p.ci_high) << '\n';
    }
  }
  return out.str();
}

/// Risk table: type I, type II, equal-weight risk, 4x-at-zero risk.
inline std::string risk_table_csv(const std::vector<RiskTableRow>& classical, const std::vector<RiskTableRow>& as) {
  std::ostringstream out;
  out << "panel,arm,type1,type2,risk_equal,risk_kappa4\n";
  auto emit = [&out](const char* panel, const std::vector<RiskTableRow>& rows) {
    for (const auto& r : rows) {
      out << panel << ',' << r.arm << ',' << detail::csv_num(r.type1) << ',' << detail::csv_num(r.type2_at) << ','
          << detail::csv_num(r.risk_equal) << ',' << detail::csv_num(r.risk_kappa4) << '\n';
    }
  };
  emit("classical", classical);
  emit("as", as);
  return out.str();
}

// ---- JSON -----------------------------------------------------------------

inline void to_json(json& j, const GriddedCurve& c) { j = json{{"knots", c.knots}, {"values", c.values}}; }
inline void from_json(const json& j, GriddedCurve& c) {
  j.at("knots").get_to(c.knots);
  j.at("values").get_to(c.values);
  if (c.knots.size() != c.values.size()) throw ParseError("curve: knots and values differ in length");
}

inline void to_json(json& j, const SidedCurve& c) { j = json{{"left", c.left}, {"right", c.right}}; }
inline void from_json(const json& j, SidedCurve& c) {
  j.at("left").get_to(c.left);
  j.at("right").get_to(c.right);
}

inline json cef_to_json(const CefSpec& cef) {
  if (const auto* p = std::get_if<PiecewisePolyCef>(&cef)) {
    return json{{"kind", "piecewise_poly"}, {"order", p->order}, {"left", p->left}, {"right", p->right}};
  }
  const auto& s = std::get<SidedCurve>(cef);
  return json{{"kind", "gridded"}, {"left", s.left}, {"right", s.right}};
}

inline CefSpec cef_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "piecewise_poly") {
    PiecewisePolyCef p;
    j.at("order").get_to(p.order);
    j.at("left").get_to(p.left);
    j.at("right").get_to(p.right);
    return p;
  }
  if (kind == "gridded") return SidedCurve{j.at("left").get<GriddedCurve>(), j.at("right").get<GriddedCurve>()};
  throw ParseError("unknown cef kind '" + kind + "'");
}

inline void to_json(json& j, const Provenance& p) {
  j = json{{"source_hash", p.source_hash},     {"cef_kind", p.cef_kind},         {"noise_kind", p.noise_kind},
           {"normalization", p.normalization}, {"semi_discrete", p.semi_discrete}, {"jitter_seed", p.jitter_seed},
           {"rows_in", p.rows_in}};
}
inline void from_json(const json& j, Provenance& p) {
  j.at("source_hash").get_to(p.source_hash);
  j.at("cef_kind").get_to(p.cef_kind);
  j.at("noise_kind").get_to(p.noise_kind);
  j.at("normalization").get_to(p.normalization);
  j.at("semi_discrete").get_to(p.semi_discrete);
  j.at("jitter_seed").get_to(p.jitter_seed);
  j.at("rows_in").get_to(p.rows_in);
}

inline void to_json(json& j, const Dgp& d) {
  j = json{{"schema_version", kDgpSchemaVersion},
           {"id", d.id},
           {"sigma", d.sigma},
           {"n", d.n},
           {"alpha_left", d.alpha_left},
           {"alpha_right", d.alpha_right},
           {"variance_ratio", detail::finite_or_null(d.variance_ratio)},
           {"cef", cef_to_json(d.cef)},
           {"noise", {{"kind", d.noise.kind}}},
           {"x_pool", d.x_pool},
           {"provenance", d.provenance}};
  if (d.noise.kind == NoiseKind::fan_yao) j["noise"]["variance"] = d.noise.variance;
}

inline void from_json(const json& j, Dgp& d) {
  const int version = j.at("schema_version").get<int>();
  if (version != kDgpSchemaVersion) throw ParseError("unsupported DGP schema version " + std::to_string(version));
  j.at("id").get_to(d.id);
  j.at("sigma").get_to(d.sigma);
  j.at("n").get_to(d.n);
  j.at("alpha_left").get_to(d.alpha_left);
  j.at("alpha_right").get_to(d.alpha_right);
  d.variance_ratio = j.at("variance_ratio").is_null() ? INFINITY : j.at("variance_ratio").get<double>();
  d.cef = cef_from_json(j.at("cef"));
  j.at("noise").at("kind").get_to(d.noise.kind);
  if (d.noise.kind == NoiseKind::fan_yao) j.at("noise").at("variance").get_to(d.noise.variance);
  j.at("x_pool").get_to(d.x_pool);
  j.at("provenance").get_to(d.provenance);
  if (!(d.sigma > 0.0)) throw ParseError("DGP sigma must be positive");
  if (d.x_pool.empty()) throw ParseError("DGP has an empty running-variable pool");
}

inline Dgp read_dgp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return json::parse(in).get<Dgp>();
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void to_json(json& j, const GraphicalParams& g) {
  j = json{{"bin_selector", g.bin_selector},
           {"spacing", g.spacing},
           {"fit_order", detail::optional_json(g.fit_order)},
           {"vertical_line", g.vertical_line},
           {"y_scale", g.y_scale}};
}

inline void from_json(const json& j, GraphicalParams& g) {
  g = GraphicalParams{};
  if (j.contains("bin_selector")) j.at("bin_selector").get_to(g.bin_selector);
  if (j.contains("spacing")) j.at("spacing").get_to(g.spacing);
  g.fit_order = detail::json_optional<int>(j, "fit_order");
  if (j.contains("vertical_line")) j.at("vertical_line").get_to(g.vertical_line);
  if (j.contains("y_scale")) j.at("y_scale").get_to(g.y_scale);
  g.validate();
}

inline void to_json(json& j, const GraphTruth& t) {
  j = json{{"graph_id", t.graph_id}, {"dgp_id", t.dgp_id}, {"d_multiple", t.d_multiple}, {"seed", t.seed},
           {"gamma", t.gamma}};
}
inline void from_json(const json& j, GraphTruth& t) {
  j.at("graph_id").get_to(t.graph_id);
  j.at("dgp_id").get_to(t.dgp_id);
  j.at("d_multiple").get_to(t.d_multiple);
  j.at("seed").get_to(t.seed);
  j.at("gamma").get_to(t.gamma);
}

inline void to_json(json& j, const BinPlan& p) {
  j = json{{"j_minus", p.j_minus},
           {"j_plus", p.j_plus},
           {"spacing", p.spacing},
           {"edges_left", p.edges_left},
           {"edges_right", p.edges_right}};
}
inline void from_json(const json& j, BinPlan& p) {
  j.at("j_minus").get_to(p.j_minus);
  j.at("j_plus").get_to(p.j_plus);
  j.at("spacing").get_to(p.spacing);
  j.at("edges_left").get_to(p.edges_left);
  j.at("edges_right").get_to(p.edges_right);
}

inline void to_json(json& j, const BinnedSeries& s) {
  j = json{{"empty_bins", s.empty_bins}, {"points", json::array()}};
  for (const auto& p : s.points) j["points"].push_back({{"x", p.x_pos}, {"y", p.y_mean}, {"count", p.count}});
}
inline void from_json(const json& j, BinnedSeries& s) {
  j.at("empty_bins").get_to(s.empty_bins);
  s.points.clear();
  for (const auto& p : j.at("points")) {
    s.points.push_back({p.at("x").get<double>(), p.at("y").get<double>(), p.at("count").get<std::size_t>()});
  }
}

/// Weights are omitted unless asked for; they are as long as the sample.
inline json inference_json(const InferenceResult& r, bool with_weights = false) {
  json j{{"method", method_name(r.method)},
         {"estimate", r.estimate},
         {"se", r.se},
         {"t_stat", detail::finite_or_null(r.t_stat)},
         {"ci_low", r.ci_low},
         {"ci_high", r.ci_high},
         {"reject", r.reject},
         {"level", r.level},
         {"critical_value", r.critical_value},
         {"bandwidth", detail::optional_json(r.bandwidth)},
         {"pilot_bandwidth", detail::optional_json(r.pilot_bandwidth)},
         {"bias_bound", detail::optional_json(r.bias_bound)}};
  if (with_weights) j["weights"] = r.weights;
  return j;
}

inline void to_json(json& j, const PowerPoint& p) {
  j = json{{"d_multiple", p.d_multiple}, {"p_hat", p.p_hat}, {"n", p.n}, {"ci_low", p.ci_low}, {"ci_high", p.ci_high}};
}

inline void to_json(json& j, const RiskTableRow& r) {
  j = json{{"arm", r.arm},
           {"type1", detail::finite_or_null(r.type1)},
           {"type2", detail::finite_or_null(r.type2_at)},
           {"risk_equal", detail::finite_or_null(r.risk_equal)},
           {"risk_kappa4", detail::finite_or_null(r.risk_kappa4)}};
}

inline void to_json(json& j, const ClassificationRecord& r) {
  j = json{{"responder_id", r.responder_id},
           {"graph_id", r.graph_id},
           {"dgp_id", r.dgp_id},
           {"d_multiple", r.d_multiple},
           {"arm", r.arm},
           {"reported_discontinuity", r.reported_discontinuity},
           {"bonus", r.bonus},
           {"magnitude_estimate", detail::optional_json(r.magnitude_estimate)}};
}

inline void from_json(const json& j, ClassificationRecord& r) {
  j.at("responder_id").get_to(r.responder_id);
  j.at("graph_id").get_to(r.graph_id);
  j.at("dgp_id").get_to(r.dgp_id);
  j.at("d_multiple").get_to(r.d_multiple);
  j.at("arm").get_to(r.arm);
  j.at("reported_discontinuity").get_to(r.reported_discontinuity);
  j.at("bonus").get_to(r.bonus);
  r.magnitude_estimate = detail::json_optional<double>(j, "magnitude_estimate");
}

}  // namespace rdlab
