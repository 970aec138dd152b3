#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rdlab/error.hpp"
#include "rdlab/kernel.hpp"
#include "rdlab/linalg.hpp"

namespace rdlab {

/// Kernel-weighted polynomial regression around `center`, in linear-map form.
/// `maps(j, m)` is the loading of y[index[m]] on the coefficient of (x - center)^j.
struct LocalPolyMaps {
  std::vector<std::size_t> index;
  MatrixXd maps;

  double coefficient(int j, std::span<const double> y) const {
    double s = 0.0;
    for (std::size_t m = 0; m < index.size(); ++m) s += maps(j, static_cast<Eigen::Index>(m)) * y[index[m]];
    return s;
  }
};

inline LocalPolyMaps local_poly_maps(std::span<const double> x, double center, double h, int order,
                                     const Kernel& kernel, std::size_t min_points = 0) {
  if (!(h > 0.0)) throw DomainError("local polynomial: bandwidth must be positive");
  min_points = std::max<std::size_t>(min_points, static_cast<std::size_t>(order) + 1);
  LocalPolyMaps out;
  std::vector<double> w;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double k = kernel((x[i] - center) / h);
    if (k > 0.0) {
      out.index.push_back(i);
      w.push_back(k);
    }
  }
  if (out.index.size() < min_points) {
    throw InsufficientData("local polynomial: " + std::to_string(out.index.size()) +
                           " observations inside the bandwidth, need " + std::to_string(min_points));
  }
  const auto m = static_cast<Eigen::Index>(out.index.size());
  MatrixXd design(m, order + 1);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double u = x[out.index[static_cast<std::size_t>(r)]] - center;
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      design(r, j) = p;
      p *= u;
    }
  }
  try {
    out.maps = wls_coefficient_maps(design, Eigen::Map<const VectorXd>(w.data(), m));
  } catch (const FitError&) {
    throw InsufficientData("local polynomial: too few distinct design points inside the bandwidth");
  }
  return out;
}

/// Nearest-neighbour residual variances (matching on x within one side):
/// sigma2_i = J/(J+1) * (y_i - mean of the J nearest neighbours' y)^2.
/// `x` must be sorted ascending.
inline std::vector<double> nn_residual_variance(std::span<const double> x, std::span<const double> y,
                                                std::size_t neighbours = 3) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  if (n <= neighbours) {
    const double m = mean(y);
    for (std::size_t i = 0; i < n; ++i) out[i] = (y[i] - m) * (y[i] - m);
    return out;
  }
  const double factor = static_cast<double>(neighbours) / (neighbours + 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i;
    std::size_t hi = i;
    double sum = 0.0;
    for (std::size_t taken = 0; taken < neighbours; ++taken) {
      const bool can_left = lo > 0;
      const bool can_right = hi + 1 < n;
      bool go_left;
      if (can_left && can_right) {
        go_left = (x[i] - x[lo - 1]) <= (x[hi + 1] - x[i]);
      } else {
        go_left = can_left;
      }
      if (go_left) {
        --lo;
        sum += y[lo];
      } else {
        ++hi;
        sum += y[hi];
      }
    }
    const double r = y[i] - sum / static_cast<double>(neighbours);
    out[i] = factor * r * r;
  }
  return out;
}

}  // namespace rdlab
