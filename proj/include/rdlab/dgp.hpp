#pragma once

// Data generating processes: calibration from microdata and simulation of
// RD datasets with an injected discontinuity at the normalized cutoff 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rdlab/error.hpp"
#include "rdlab/kernel.hpp"
#include "rdlab/linalg.hpp"
#include "rdlab/localpoly.hpp"
#include "rdlab/random.hpp"

namespace rdlab {

inline constexpr double kTrimBound = 0.99;
inline constexpr std::size_t kMinRowsPerSide = 20;
inline constexpr int kCefGridPoints = 401;  // per side, including 0 and the endpoint

/// Raw (running variable, outcome) pairs with the policy cutoff.
struct Microdata {
  std::vector<double> raw_x;
  std::vector<double> y;
  double cutoff = 0.0;
  bool semi_discrete = false;
};

enum class Normalization { per_side, single_scale };

struct NormalizedRunning {
  std::vector<double> x;            // trimmed, in [-0.99, 0.99]
  std::vector<std::size_t> kept;    // source row of each surviving value
  double scale_left = 1.0;          // |min(raw - cutoff)|
  double scale_right = 1.0;         // max(raw - cutoff)
};

/// Maps the running variable to [-1, 1] with the cutoff at 0 and drops
/// |x| > 0.99. Per-side scaling puts both extremes at exactly -1 and 1.
inline NormalizedRunning normalize_running(const Microdata& micro,
                                           Normalization mode = Normalization::per_side) {
  if (micro.raw_x.empty()) throw CalibrationError("normalize_running: no observations");
  double lo = INFINITY;
  double hi = -INFINITY;
  for (double r : micro.raw_x) {
    if (!std::isfinite(r)) throw CalibrationError("normalize_running: non-finite running variable");
    lo = std::min(lo, r - micro.cutoff);
    hi = std::max(hi, r - micro.cutoff);
  }
  if (!(lo < 0.0) || !(hi > 0.0)) {
    throw CalibrationError("normalize_running: cutoff is not strictly inside the observed support");
  }
  NormalizedRunning out;
  out.scale_left = -lo;
  out.scale_right = hi;
  if (mode == Normalization::single_scale) {
    out.scale_left = out.scale_right = std::max(-lo, hi);
  }
  for (std::size_t i = 0; i < micro.raw_x.size(); ++i) {
    const double c = micro.raw_x[i] - micro.cutoff;
    const double x = c < 0.0 ? c / out.scale_left : c / out.scale_right;
    if (std::abs(x) <= kTrimBound) {
      out.x.push_back(x);
      out.kept.push_back(i);
    }
  }
  return out;
}

inline double jitter_sd(std::size_t n_minus, std::size_t n_plus) {
  if (n_minus < 1 || n_plus < 1) throw DomainError("jitter: both sides need at least one observation");
  return 1.0 / static_cast<double>(std::min(n_minus, n_plus));
}

struct Jittered {
  std::vector<double> x;
  double sd = 0.0;
  bool degenerate = false;  // min(N-, N+) == 1: noise as wide as the support
};

/// Adds N(0, (1/min(N-, N+))^2) noise to a semi-discrete running variable.
inline Jittered jitter_semidiscrete(std::span<const double> x, std::size_t n_minus, std::size_t n_plus,
                                   std::uint64_t seed) {
  Jittered out;
  out.sd = jitter_sd(n_minus, n_plus);
  out.degenerate = std::min(n_minus, n_plus) == 1;
  Rng rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, out.sd);
  out.x.reserve(x.size());
  for (double v : x) out.x.push_back(v + noise(rng));
  return out;
}

struct PiecewiseFit {
  Polynomial left;
  Polynomial right;
  double rmse = 0.0;
  double alpha_left = 0.0;
  double alpha_right = 0.0;
};

namespace detail {

inline std::size_t count_distinct(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

inline void split_sides(std::span<const double> x, std::span<const double> y, std::vector<double>& xl,
                        std::vector<double>& yl, std::vector<double>& xr, std::vector<double>& yr) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) {
      xl.push_back(x[i]);
      yl.push_back(y[i]);
    } else {
      xr.push_back(x[i]);
      yr.push_back(y[i]);
    }
  }
}

}  // namespace detail

/// Polynomial fit of one side; coefficients in ascending powers of x.
inline LeastSquaresFit fit_polynomial(std::span<const double> x, std::span<const double> y, int order) {
  if (detail::count_distinct({x.begin(), x.end()}) < static_cast<std::size_t>(order) + 1) {
    throw FitError("polynomial fit: too few distinct x values for order " + std::to_string(order), INFINITY);
  }
  return ols(vandermonde(x, order), to_vector(y));
}

/// Separate OLS polynomial fits on x < 0 and x >= 0; RMSE pooled as sqrt(SSR/N).
inline PiecewiseFit fit_piecewise_poly(std::span<const double> x, std::span<const double> y, int order) {
  if (x.size() != y.size()) throw DomainError("fit_piecewise_poly: x and y differ in length");
  std::vector<double> xl, yl, xr, yr;
  detail::split_sides(x, y, xl, yl, xr, yr);
  const auto need = static_cast<std::size_t>(order) + 2;
  if (detail::count_distinct(xl) < need || detail::count_distinct(xr) < need) {
    throw FitError("fit_piecewise_poly: need at least " + std::to_string(need) +
                       " distinct x values on each side",
                   INFINITY);
  }
  const auto left = ols(vandermonde(xl, order), to_vector(yl));
  const auto right = ols(vandermonde(xr, order), to_vector(yr));
  PiecewiseFit fit;
  fit.left.assign(left.coef.data(), left.coef.data() + left.coef.size());
  fit.right.assign(right.coef.data(), right.coef.data() + right.coef.size());
  fit.rmse = std::sqrt((left.ssr + right.ssr) / static_cast<double>(x.size()));
  fit.alpha_left = fit.left.front();
  fit.alpha_right = fit.right.front();
  return fit;
}

/// Piecewise-linear interpolant on strictly increasing knots; flat beyond the ends.
struct GriddedCurve {
  std::vector<double> knots;
  std::vector<double> values;

  double operator()(double x) const {
    if (knots.empty()) return 0.0;
    if (x <= knots.front()) return values.front();
    if (x >= knots.back()) return values.back();
    const auto it = std::upper_bound(knots.begin(), knots.end(), x);
    const auto j = static_cast<std::size_t>(it - knots.begin());
    const double t = (x - knots[j - 1]) / (knots[j] - knots[j - 1]);
    return values[j - 1] + t * (values[j] - values[j - 1]);
  }
};

/// A function on [-1, 1] stored as one curve per side of the cutoff; the left
/// curve serves x < 0 and the right curve x >= 0.
struct SidedCurve {
  GriddedCurve left;
  GriddedCurve right;
  double operator()(double x) const { return x < 0.0 ? left(x) : right(x); }
};

inline std::vector<double> side_grid(bool right_side, int points = kCefGridPoints) {
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / (points - 1);
    g[static_cast<std::size_t>(i)] = right_side ? t : -1.0 + t;
  }
  return g;
}

struct LocalLinearSmooth {
  std::vector<double> grid;
  std::vector<double> value;
  std::vector<double> se;
};

/// Rule-of-thumb smoothing bandwidth for one side: 2.34 * sd(x) * n^(-1/5).
inline double smoothing_bandwidth(std::span<const double> x) {
  const double sd = sample_sd(x);
  return std::max(1e-3, 2.34 * sd * std::pow(static_cast<double>(x.size()), -0.2));
}

/// Triangular-kernel local linear regression of y on x evaluated at each grid
/// point. The window widens locally until it holds at least five observations.
/// Standard errors are the sandwich form with local-line residuals.
inline LocalLinearSmooth local_linear_smooth(std::span<const double> x, std::span<const double> y,
                                             std::vector<double> grid, double h) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> xs(x.size()), ys(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  constexpr std::size_t kMinWindow = 5;
  if (xs.size() < kMinWindow) throw InsufficientData("local_linear_smooth: fewer than 5 observations");
  const Kernel tri{KernelKind::triangular};
  LocalLinearSmooth out;
  out.grid = std::move(grid);
  out.value.reserve(out.grid.size());
  out.se.reserve(out.grid.size());
  std::vector<double> dist(xs.size());
  for (double g : out.grid) {
    double hg = h;
    auto lo = std::lower_bound(xs.begin(), xs.end(), g - hg);
    auto hi = std::upper_bound(xs.begin(), xs.end(), g + hg);
    if (static_cast<std::size_t>(hi - lo) < kMinWindow + 1) {
      for (std::size_t i = 0; i < xs.size(); ++i) dist[i] = std::abs(xs[i] - g);
      std::nth_element(dist.begin(), dist.begin() + kMinWindow, dist.end());
      hg = std::max(h, dist[kMinWindow] * 1.0001);
      lo = std::lower_bound(xs.begin(), xs.end(), g - hg);
      hi = std::upper_bound(xs.begin(), xs.end(), g + hg);
    }
    const auto off = static_cast<std::size_t>(lo - xs.begin());
    const std::span<const double> wx(&*lo, static_cast<std::size_t>(hi - lo));
    const std::span<const double> wy(ys.data() + off, wx.size());
    LocalPolyMaps maps;
    try {
      maps = local_poly_maps(wx, g, hg, 1, tri, 3);
    } catch (const InsufficientData&) {
      // Ties can leave a single distinct design point; fall back to the full side.
      maps = local_poly_maps(xs, g, 4.0, 1, tri, 3);
      const double a = maps.coefficient(0, ys);
      out.value.push_back(a);
      out.se.push_back(0.0);
      continue;
    }
    const double a = maps.coefficient(0, wy);
    const double b = maps.coefficient(1, wy);
    double var = 0.0;
    for (std::size_t m = 0; m < maps.index.size(); ++m) {
      const std::size_t i = maps.index[m];
      const double r = wy[i] - (a + b * (wx[i] - g));
      const double l = maps.maps(0, static_cast<Eigen::Index>(m));
      var += l * l * r * r;
    }
    out.value.push_back(a);
    out.se.push_back(std::sqrt(var));
  }
  return out;
}

struct PiecewisePolyCef {
  int order = 5;
  Polynomial left;
  Polynomial right;
};

/// Conditional expectation function, continuous at 0 once calibrated.
using CefSpec = std::variant<PiecewisePolyCef, SidedCurve>;

inline double cef_value(const CefSpec& cef, double x) {
  return std::visit(
      [x](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PiecewisePolyCef>) {
          return x < 0.0 ? poly_eval(c.left, x) : poly_eval(c.right, x);
        } else {
          return c(x);
        }
      },
      cef);
}

enum class CefKind { piecewise_quintic, local_linear };
enum class NoiseKind { homoskedastic, fan_yao };

/// Fan-Yao conditional variance: side-wise local linear smooth of squared
/// residuals, clipped below at 1e-12 * mean(r^2). Bandwidth defaults to the
/// per-side rule of thumb when not supplied.
inline SidedCurve fan_yao_variance(std::span<const double> x, std::span<const double> squared_residuals,
                                   std::optional<double> bandwidth = std::nullopt) {
  if (x.size() != squared_residuals.size()) throw DomainError("fan_yao_variance: length mismatch");
  std::vector<double> xl, rl, xr, rr;
  detail::split_sides(x, squared_residuals, xl, rl, xr, rr);
  const double floor = 1e-12 * mean(squared_residuals);
  auto side = [&](const std::vector<double>& sx, const std::vector<double>& sr, bool right) {
    const double h = bandwidth.value_or(smoothing_bandwidth(sx));
    auto fit = local_linear_smooth(sx, sr, side_grid(right), h);
    GriddedCurve c;
    c.knots = std::move(fit.grid);
    c.values = std::move(fit.value);
    for (double& v : c.values) v = std::max(v, floor);
    return c;
  };
  SidedCurve out;
  out.left = side(xl, rl, false);
  out.right = side(xr, rr, true);
  return out;
}

struct NoiseModel {
  NoiseKind kind = NoiseKind::homoskedastic;
  SidedCurve variance;  // used when kind == fan_yao
};

struct Provenance {
  std::string source_hash;
  std::string cef_kind;
  std::string noise_kind;
  std::string normalization;
  bool semi_discrete = false;
  std::uint64_t jitter_seed = 0;
  std::size_t rows_in = 0;
};

/// A calibrated probability model for (X, Y) without the discontinuity.
struct Dgp {
  std::string id;
  std::vector<double> x_pool;  // empirical running-variable distribution, |x| <= 0.99
  CefSpec cef;
  double sigma = 0.0;          // piecewise-quintic RMSE, the unit of discontinuities
  std::size_t n = 0;
  NoiseModel noise;
  double alpha_left = 0.0;
  double alpha_right = 0.0;
  double variance_ratio = 0.0; // Var(u) / Var(E[Y|X]) over the pool
  Provenance provenance;

  double mean_at(double x) const { return cef_value(cef, x); }
  double noise_sd(double x) const {
    return noise.kind == NoiseKind::homoskedastic ? sigma : std::sqrt(noise.variance(x));
  }
};

/// Builds a homoskedastic DGP directly from its parts (simulation studies,
/// tests); n defaults to the pool size.
inline Dgp make_dgp(std::string id, std::vector<double> x_pool, CefSpec cef, double sigma, std::size_t n = 0) {
  Dgp d;
  d.id = std::move(id);
  d.n = n ? n : x_pool.size();
  d.x_pool = std::move(x_pool);
  d.cef = std::move(cef);
  d.sigma = sigma;
  d.alpha_left = cef_value(d.cef, -1e-12);
  d.alpha_right = cef_value(d.cef, 0.0);
  d.provenance.cef_kind = std::holds_alternative<PiecewisePolyCef>(d.cef) ? "piecewise_poly" : "gridded";
  d.provenance.noise_kind = "homoskedastic";
  return d;
}

struct CalibrationOptions {
  CefKind cef_kind = CefKind::piecewise_quintic;
  NoiseKind noise_kind = NoiseKind::homoskedastic;
  Normalization normalization = Normalization::per_side;
  std::uint64_t jitter_seed = 0x5EED;
  std::string id = "dgp";
};

inline std::string microdata_hash(const Microdata& micro) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](double v) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h);
  };
  feed(micro.cutoff);
  for (std::size_t i = 0; i < micro.raw_x.size(); ++i) {
    feed(micro.raw_x[i]);
    feed(micro.y[i]);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void validate_microdata(const Microdata& micro) {
  if (micro.raw_x.size() != micro.y.size()) throw CalibrationError("microdata: x and y differ in length");
  std::size_t left = 0;
  std::size_t right = 0;
  for (std::size_t i = 0; i < micro.raw_x.size(); ++i) {
    if (!std::isfinite(micro.raw_x[i]) || !std::isfinite(micro.y[i])) {
      throw CalibrationError("microdata: non-finite value in row " + std::to_string(i));
    }
    (micro.raw_x[i] < micro.cutoff ? left : right) += 1;
  }
  if (left < kMinRowsPerSide || right < kMinRowsPerSide) {
    throw CalibrationError("microdata: need at least 20 rows on each side of the cutoff (have " +
                           std::to_string(left) + " below, " + std::to_string(right) + " above)");
  }
}

/// normalize -> trim -> jitter (semi-discrete only) -> fit CEF -> make it
/// continuous at 0 by shifting the right arm -> sigma from the quintic RMSE.
inline Dgp calibrate_dgp(const Microdata& micro, const CalibrationOptions& opt = {}) {
  validate_microdata(micro);
  const auto norm = normalize_running(micro, opt.normalization);
  std::vector<double> x = norm.x;
  std::vector<double> y;
  y.reserve(x.size());
  for (std::size_t i : norm.kept) y.push_back(micro.y[i]);

  if (micro.semi_discrete) {
    std::size_t nm = 0;
    for (double v : x) nm += v < 0.0;
    const auto jit = jitter_semidiscrete(x, nm, x.size() - nm, opt.jitter_seed);
    std::vector<double> jx, jy;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(jit.x[i]) <= kTrimBound) {
        jx.push_back(jit.x[i]);
        jy.push_back(y[i]);
      }
    }
    x = std::move(jx);
    y = std::move(jy);
  }
  std::size_t nl = 0;
  for (double v : x) nl += v < 0.0;
  if (nl < kMinRowsPerSide || x.size() - nl < kMinRowsPerSide) {
    throw CalibrationError("calibrate_dgp: fewer than 20 observations on a side after trimming");
  }

  const auto quintic = fit_piecewise_poly(x, y, 5);
  // exact polynomial data leaves only rounding noise in the residuals
  if (!(quintic.rmse > 1e-10 * (1.0 + std::sqrt(variance(y))))) {
    throw CalibrationError("calibrate_dgp: quintic fit has zero RMSE");
  }

  Dgp dgp;
  dgp.id = opt.id;
  dgp.sigma = quintic.rmse;
  dgp.n = x.size();
  std::vector<double> fitted(x.size());

  if (opt.cef_kind == CefKind::piecewise_quintic) {
    PiecewisePolyCef cef{5, quintic.left, quintic.right};
    for (std::size_t i = 0; i < x.size(); ++i) {
      fitted[i] = x[i] < 0.0 ? poly_eval(cef.left, x[i]) : poly_eval(cef.right, x[i]);
    }
    dgp.alpha_left = quintic.alpha_left;
    dgp.alpha_right = quintic.alpha_right;
    cef.right[0] -= quintic.alpha_right - quintic.alpha_left;
    dgp.cef = std::move(cef);
  } else {
    std::vector<double> xl, yl, xr, yr;
    detail::split_sides(x, y, xl, yl, xr, yr);
    auto side = [](const std::vector<double>& sx, const std::vector<double>& sy, bool right) {
      auto fit = local_linear_smooth(sx, sy, side_grid(right), smoothing_bandwidth(sx));
      return GriddedCurve{std::move(fit.grid), std::move(fit.value)};
    };
    SidedCurve curve{side(xl, yl, false), side(xr, yr, true)};
    for (std::size_t i = 0; i < x.size(); ++i) fitted[i] = curve(x[i]);
    dgp.alpha_left = curve.left.values.back();
    dgp.alpha_right = curve.right.values.front();
    for (double& v : curve.right.values) v -= dgp.alpha_right - dgp.alpha_left;
    dgp.cef = std::move(curve);
  }

  if (opt.noise_kind == NoiseKind::fan_yao) {
    std::vector<double> r2(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r2[i] = (y[i] - fitted[i]) * (y[i] - fitted[i]);
    dgp.noise = {NoiseKind::fan_yao, fan_yao_variance(x, r2)};
  }

  std::vector<double> cef_at_pool(x.size());
  double noise_var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cef_at_pool[i] = cef_value(dgp.cef, x[i]);
    const double sd = dgp.noise_sd(x[i]);
    noise_var += sd * sd;
  }
  noise_var /= static_cast<double>(x.size());
  const double signal_var = variance(cef_at_pool);
  dgp.variance_ratio = signal_var > 0.0 ? noise_var / signal_var : INFINITY;
  dgp.x_pool = std::move(x);

  dgp.provenance.source_hash = microdata_hash(micro);
  dgp.provenance.cef_kind = opt.cef_kind == CefKind::piecewise_quintic ? "piecewise_quintic" : "local_linear";
  dgp.provenance.noise_kind = opt.noise_kind == NoiseKind::homoskedastic ? "homoskedastic" : "fan_yao";
  dgp.provenance.normalization = opt.normalization == Normalization::per_side ? "per_side" : "single_scale";
  dgp.provenance.semi_discrete = micro.semi_discrete;
  dgp.provenance.jitter_seed = opt.jitter_seed;
  dgp.provenance.rows_in = micro.raw_x.size();
  return dgp;
}

/// One simulated RD dataset W(g, d).
struct Dataset {
  std::vector<double> x;
  std::vector<double> y;
  double d_multiple = 0.0;
  double true_d = 0.0;  // outcome units: d_multiple * sigma
  std::string dgp_id;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return x.size(); }
};

struct SampleOptions {
  std::optional<double> noise_scale;  // multiplies the noise draw; 0 gives the noiseless limit
  bool fixed_x = false;               // use the pool as-is instead of resampling
};

/// y_i = cef(x_i) + d_multiple * sigma * 1[x_i >= 0] + u_i with x_i drawn from
/// the pool with replacement. Pure in (dgp, d_multiple, seed, options).
inline Dataset sample_dataset(const Dgp& dgp, double d_multiple, std::uint64_t seed,
                              const SampleOptions& opt = {}) {
  if (!std::isfinite(d_multiple)) throw DomainError("sample_dataset: d_multiple must be finite");
  if (dgp.x_pool.empty()) throw DomainError("sample_dataset: empty running-variable pool");
  Dataset ds;
  ds.d_multiple = d_multiple;
  ds.true_d = d_multiple * dgp.sigma;
  ds.dgp_id = dgp.id;
  ds.seed = seed;
  const std::size_t n = dgp.n;
  if (opt.fixed_x) {
    ds.x = dgp.x_pool;
  } else {
    Rng xr = make_rng(derive_seed(seed, 0));
    std::uniform_int_distribution<std::size_t> pick(0, dgp.x_pool.size() - 1);
    ds.x.resize(n);
    for (auto& v : ds.x) v = dgp.x_pool[pick(xr)];
  }
  Rng ur = make_rng(derive_seed(seed, 1));
  std::normal_distribution<double> z(0.0, 1.0);
  const double scale = opt.noise_scale.value_or(1.0);
  ds.y.resize(ds.x.size());
  for (std::size_t i = 0; i < ds.x.size(); ++i) {
    const double xi = ds.x[i];
    const double u = z(ur) * dgp.noise_sd(xi) * scale;
    ds.y[i] = cef_value(dgp.cef, xi) + (xi >= 0.0 ? ds.true_d : 0.0) + u;
  }
  return ds;
}

/// The microdata itself on the normalized scale (no jitter); the real panel of a lineup.
inline Dataset observed_dataset(const Microdata& micro, Normalization normalization = Normalization::per_side,
                                std::string id = {}) {
  validate_microdata(micro);
  const auto norm = normalize_running(micro, normalization);
  Dataset ds;
  ds.x = norm.x;
  ds.y.reserve(norm.kept.size());
  for (std::size_t i : norm.kept) ds.y.push_back(micro.y[i]);
  ds.dgp_id = std::move(id);
  return ds;
}

}  // namespace rdlab
