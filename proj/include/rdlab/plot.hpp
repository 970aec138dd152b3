#pragma once

// SVG rendering of binned RD scatter plots and 4x5 lineups. Output is a pure
// function of the inputs and the style constants below, so the same dataset
// and parameters always give byte-identical documents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "rdlab/binning.hpp"
#include "rdlab/dgp.hpp"
#include "rdlab/error.hpp"
#include "rdlab/linalg.hpp"
#include "rdlab/random.hpp"

namespace rdlab {

enum class YScale { default_range, doubled };

struct GraphicalParams {
  BinSelector bin_selector = BinSelector::imse;
  Spacing spacing = Spacing::even;
  std::optional<int> fit_order;  // none when empty
  bool vertical_line = true;
  YScale y_scale = YScale::default_range;

  void validate() const {
    if (fit_order && (*fit_order < 0 || *fit_order > 8)) throw DomainError("fit line order must lie in [0, 8]");
  }

  /// Short stable label, e.g. "imse-even-fit4-vline-default".
  std::string label() const {
    std::string s = bin_selector == BinSelector::imse ? "imse" : "mv";
    s += spacing == Spacing::even ? "-even" : "-quantile";
    s += fit_order ? "-fit" + std::to_string(*fit_order) : "-nofit";
    s += vertical_line ? "-vline" : "-novline";
    s += y_scale == YScale::default_range ? "-default" : "-doubled";
    return s;
  }

  bool operator==(const GraphicalParams&) const = default;
};

inline constexpr int kDefaultFitOrder = 4;
inline constexpr int kFitGridPoints = 200;

namespace style {
inline constexpr int width = 800;
inline constexpr int height = 600;
inline constexpr double margin_left = 70.0;
inline constexpr double margin_right = 20.0;
inline constexpr double margin_top = 20.0;
inline constexpr double margin_bottom = 50.0;
inline constexpr double point_radius = 4.0;
inline constexpr double y_pad = 0.05;          // default range pad, share of the bin-mean extent
inline constexpr double doubled_extra = 0.5;   // doubled range: add this share of the default range each way
inline constexpr const char* font = "DejaVu Sans, Arial, sans-serif";
inline constexpr int lineup_rows = 4;
inline constexpr int lineup_cols = 5;
inline constexpr int panel_width = 200;
inline constexpr int panel_height = 180;
}  // namespace style

struct PlotSummary {
  std::size_t n_points = 0;
  bool has_vline = false;
  bool has_fitlines = false;
  double y_min = 0.0;  // axis range
  double y_max = 0.0;
};

/// Hidden metadata that travels beside the SVG, never inside it.
struct GraphTruth {
  std::string graph_id;
  std::string dgp_id;
  double d_multiple = 0.0;
  std::uint64_t seed = 0;
  GraphicalParams gamma;
};

struct RenderedGraph {
  std::string svg;
  GraphTruth truth;
  PlotSummary summary;
};

/// Everything drawn in one panel, in data coordinates.
struct PlotLayers {
  BinnedSeries bins;
  std::vector<std::pair<double, double>> fit_left;
  std::vector<std::pair<double, double>> fit_right;
  bool vline = false;
  double data_min = 0.0;  // extent of the binned means
  double data_max = 0.0;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  if (std::abs(v) < 0.005) v = 0.0;
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v, double step) {
  char buf[32];
  const int digits = std::clamp(static_cast<int>(std::ceil(-std::log10(step))), 0, 6);
  if (std::abs(v) < 0.5 * step * 1e-6) v = 0.0;
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double nice = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
  return nice * mag;
}

inline std::vector<std::pair<double, double>> fit_curve(const std::vector<double>& x, const std::vector<double>& y,
                                                        int order) {
  if (x.size() < 2) return {};
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = static_cast<int>(count_distinct(sorted));
  const int k = std::min(order, distinct - 1);
  const auto fit = fit_polynomial(x, y, k);
  const Polynomial c(fit.coef.data(), fit.coef.data() + fit.coef.size());
  const double lo = sorted.front();
  const double hi = sorted.back();
  std::vector<std::pair<double, double>> pts(kFitGridPoints);
  for (int g = 0; g < kFitGridPoints; ++g) {
    const double xv = g + 1 == kFitGridPoints ? hi : lo + (hi - lo) * g / (kFitGridPoints - 1);
    pts[static_cast<std::size_t>(g)] = {xv, poly_eval(c, xv)};
  }
  return pts;
}

}  // namespace detail

inline PlotLayers prepare_layers(const Dataset& ds, const GraphicalParams& gamma) {
  gamma.validate();
  PlotLayers layers;
  const auto plan = select_bins(ds, gamma.bin_selector, gamma.spacing);
  layers.bins = bin_means(ds, plan);
  if (layers.bins.points.empty()) throw InsufficientData("plot: no nonempty bins");
  layers.data_min = INFINITY;
  layers.data_max = -INFINITY;
  for (const auto& p : layers.bins.points) {
    layers.data_min = std::min(layers.data_min, p.y_mean);
    layers.data_max = std::max(layers.data_max, p.y_mean);
  }
  if (gamma.fit_order) {
    std::vector<double> xl, yl, xr, yr;
    detail::split_sides(ds.x, ds.y, xl, yl, xr, yr);
    layers.fit_left = detail::fit_curve(xl, yl, *gamma.fit_order);
    layers.fit_right = detail::fit_curve(xr, yr, *gamma.fit_order);
  }
  layers.vline = gamma.vertical_line;
  return layers;
}

/// Axis range from a bin-mean extent. The default range pads the extent by
/// 5% each way; the doubled range takes the default range and adds half of
/// its width on each side, so it is twice as tall.
inline std::pair<double, double> y_axis_range(double lo, double hi, YScale scale) {
  double extent = hi - lo;
  if (!(extent > 0.0)) extent = std::max(1.0, std::abs(lo)) * 0.1;
  double a = lo - style::y_pad * extent;
  double b = hi + style::y_pad * extent;
  if (scale == YScale::doubled) {
    const double w = b - a;
    a -= style::doubled_extra * w;
    b += style::doubled_extra * w;
  }
  return {a, b};
}

namespace detail {

struct Viewport {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

/// Appends one panel. `clip_id` must be unique within the document.
inline void draw_panel(std::string& out, const PlotLayers& layers, const Viewport& vp, double y_lo, double y_hi,
                       const std::string& clip_id, bool tick_labels) {
  auto px = [&](double x) { return vp.x + (x + 1.0) / 2.0 * vp.w; };
  auto py = [&](double y) { return vp.y + (y_hi - y) / (y_hi - y_lo) * vp.h; };

  out += "<clipPath id=\"" + clip_id + "\"><rect x=\"" + num(vp.x) + "\" y=\"" + num(vp.y) + "\" width=\"" +
         num(vp.w) + "\" height=\"" + num(vp.h) + "\"/></clipPath>\n";
  out += "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\" fill=\"none\">\n";
  out += "<rect x=\"" + num(vp.x) + "\" y=\"" + num(vp.y) + "\" width=\"" + num(vp.w) + "\" height=\"" + num(vp.h) +
         "\"/>\n";
  out += "</g>\n";

  if (tick_labels) {
    out += "<g class=\"ticks\" font-family=\"" + std::string(style::font) + "\" font-size=\"12\" fill=\"black\">\n";
    for (double t : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
      out += "<line x1=\"" + num(px(t)) + "\" y1=\"" + num(vp.y + vp.h) + "\" x2=\"" + num(px(t)) + "\" y2=\"" +
             num(vp.y + vp.h + 5) + "\" stroke=\"black\"/>\n";
      out += "<text x=\"" + num(px(t)) + "\" y=\"" + num(vp.y + vp.h + 20) + "\" text-anchor=\"middle\">" +
             tick_label(t, 0.5) + "</text>\n";
    }
    const double step = nice_step(y_hi - y_lo, 5);
    for (double t = std::ceil(y_lo / step) * step; t <= y_hi + 1e-9 * step; t += step) {
      out += "<line x1=\"" + num(vp.x - 5) + "\" y1=\"" + num(py(t)) + "\" x2=\"" + num(vp.x) + "\" y2=\"" +
             num(py(t)) + "\" stroke=\"black\"/>\n";
      out += "<text x=\"" + num(vp.x - 8) + "\" y=\"" + num(py(t) + 4) + "\" text-anchor=\"end\">" +
             tick_label(t, step) + "</text>\n";
    }
    out += "</g>\n";
  }

  out += "<g class=\"points\" fill=\"black\" clip-path=\"url(#" + clip_id + ")\">\n";
  for (const auto& p : layers.bins.points) {
    out += "<circle class=\"bin\" cx=\"" + num(px(p.x_pos)) + "\" cy=\"" + num(py(p.y_mean)) + "\" r=\"" +
           num(style::point_radius) + "\"/>\n";
  }
  out += "</g>\n";

  if (!layers.fit_left.empty() || !layers.fit_right.empty()) {
    out += "<g class=\"fit\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" clip-path=\"url(#" + clip_id +
           ")\">\n";
    for (const auto* curve : {&layers.fit_left, &layers.fit_right}) {
      if (curve->empty()) continue;
      out += std::string("<polyline class=\"") + (curve == &layers.fit_left ? "fit-left" : "fit-right") +
             "\" points=\"";
      for (std::size_t i = 0; i < curve->size(); ++i) {
        if (i) out += ' ';
        out += num(px((*curve)[i].first)) + "," + num(py((*curve)[i].second));
      }
      out += "\"/>\n";
    }
    out += "</g>\n";
  }

  if (layers.vline) {
    out += "<line class=\"vline\" x1=\"" + num(px(0.0)) + "\" y1=\"" + num(vp.y) + "\" x2=\"" + num(px(0.0)) +
           "\" y2=\"" + num(vp.y + vp.h) + "\" stroke=\"black\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
  }
}

inline std::string svg_open(int w, int h) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" "
         "width=\"" +
         std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\">\n<rect class=\"background\" x=\"0\" y=\"0\" width=\"" + std::to_string(w) +
         "\" height=\"" + std::to_string(h) + "\" fill=\"white\"/>\n";
}

}  // namespace detail

inline RenderedGraph render_rd_plot(const Dataset& ds, const GraphicalParams& gamma, std::string graph_id = {}) {
  const auto layers = prepare_layers(ds, gamma);
  const auto [lo, hi] = y_axis_range(layers.data_min, layers.data_max, gamma.y_scale);
  RenderedGraph g;
  const detail::Viewport vp{style::margin_left, style::margin_top,
                            style::width - style::margin_left - style::margin_right,
                            style::height - style::margin_top - style::margin_bottom};
  g.svg = detail::svg_open(style::width, style::height);
  detail::draw_panel(g.svg, layers, vp, lo, hi, "plot-area", true);
  g.svg += "</svg>\n";
  g.summary.n_points = layers.bins.points.size();
  g.summary.has_vline = layers.vline;
  g.summary.has_fitlines = !layers.fit_left.empty() || !layers.fit_right.empty();
  g.summary.y_min = lo;
  g.summary.y_max = hi;
  g.truth.graph_id = std::move(graph_id);
  g.truth.dgp_id = ds.dgp_id;
  g.truth.d_multiple = ds.d_multiple;
  g.truth.seed = ds.seed;
  g.truth.gamma = gamma;
  return g;
}

struct LineupOptions {
  GraphicalParams gamma{BinSelector::mv, Spacing::even, std::nullopt, true, YScale::default_range};
};

struct Lineup {
  std::string svg;
  int answer = 0;  // 1-based panel index, row-major
  int answer_row = 0;
  int answer_col = 0;
  std::vector<std::uint64_t> decoy_seeds;
  double y_min = 0.0;
  double y_max = 0.0;
};

inline constexpr int kLineupPanels = style::lineup_rows * style::lineup_cols;

/// Lineup stream layout: stream 0 places the real panel, streams 1..19 seed
/// the null decoys.
inline int lineup_answer_slot(std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, 0));
  return std::uniform_int_distribution<int>(0, kLineupPanels - 1)(rng);
}

inline Lineup render_lineup(const Dataset& real, const Dgp& dgp, std::uint64_t seed, const LineupOptions& opt = {}) {
  Lineup out;
  const int slot = lineup_answer_slot(seed);
  out.answer = slot + 1;
  out.answer_row = slot / style::lineup_cols + 1;
  out.answer_col = slot % style::lineup_cols + 1;

  std::vector<PlotLayers> panels(kLineupPanels);
  int decoy = 0;
  for (int k = 0; k < kLineupPanels; ++k) {
    if (k == slot) {
      panels[static_cast<std::size_t>(k)] = prepare_layers(real, opt.gamma);
      continue;
    }
    const auto s = derive_seed(seed, static_cast<std::uint64_t>(1 + decoy++));
    out.decoy_seeds.push_back(s);
    panels[static_cast<std::size_t>(k)] = prepare_layers(sample_dataset(dgp, 0.0, s), opt.gamma);
  }
  double lo = INFINITY;
  double hi = -INFINITY;
  for (const auto& p : panels) {
    lo = std::min(lo, p.data_min);
    hi = std::max(hi, p.data_max);
  }
  std::tie(out.y_min, out.y_max) = y_axis_range(lo, hi, opt.gamma.y_scale);

  const int w = style::lineup_cols * style::panel_width;
  const int h = style::lineup_rows * style::panel_height;
  out.svg = detail::svg_open(w, h);
  for (int k = 0; k < kLineupPanels; ++k) {
    const double ox = (k % style::lineup_cols) * style::panel_width;
    const double oy = (k / style::lineup_cols) * style::panel_height;
    const detail::Viewport vp{ox + 10.0, oy + 22.0, style::panel_width - 20.0, style::panel_height - 32.0};
    out.svg += "<g class=\"panel\">\n";
    out.svg += "<text x=\"" + detail::num(ox + 10.0) + "\" y=\"" + detail::num(oy + 16.0) +
               "\" font-family=\"" + std::string(style::font) + "\" font-size=\"12\">" + std::to_string(k + 1) +
               "</text>\n";
    detail::draw_panel(out.svg, panels[static_cast<std::size_t>(k)], vp, out.y_min, out.y_max,
                       "panel-" + std::to_string(k + 1), false);
    out.svg += "</g>\n";
  }
  out.svg += "</svg>\n";
  return out;
}

}  // namespace rdlab
