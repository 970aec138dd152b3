#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "rdlab/error.hpp"

namespace rdlab {

enum class KernelKind { triangular, uniform };

/// Symmetric kernel on [-1, 1], integrating to one.
struct Kernel {
  KernelKind kind = KernelKind::triangular;

  double operator()(double u) const noexcept {
    const double a = std::abs(u);
    if (a >= 1.0 && kind == KernelKind::triangular) return 0.0;
    if (a > 1.0) return 0.0;
    return kind == KernelKind::triangular ? 1.0 - a : 0.5;
  }

  /// One-sided moment int_0^1 u^j K(u) du.
  double moment(int j) const noexcept {
    if (kind == KernelKind::uniform) return 0.5 / (j + 1.0);
    return 1.0 / ((j + 1.0) * (j + 2.0));
  }

  /// One-sided moment of the squared kernel, int_0^1 u^j K(u)^2 du.
  double moment_sq(int j) const noexcept {
    if (kind == KernelKind::uniform) return 0.25 / (j + 1.0);
    return 2.0 / ((j + 1.0) * (j + 2.0) * (j + 3.0));
  }

  std::string_view name() const noexcept {
    return kind == KernelKind::triangular ? "triangular" : "uniform";
  }
};

inline Kernel kernel_from_name(std::string_view name) {
  if (name == "triangular") return {KernelKind::triangular};
  if (name == "uniform") return {KernelKind::uniform};
  throw DomainError("unknown kernel '" + std::string(name) + "'");
}

}  // namespace rdlab
