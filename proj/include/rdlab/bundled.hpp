#pragma once

// Synthetic example microdata shipped with the library. Each generator is
// deterministic; the shapes mimic common RD applications (close elections,
// test-score cutoffs, age thresholds) without reproducing any real study.

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "rdlab/dgp.hpp"
#include "rdlab/error.hpp"
#include "rdlab/random.hpp"

namespace rdlab {

inline const std::vector<std::string>& bundled_names() {
  static const std::vector<std::string> names{"vote_share",  "test_score",      "age_threshold", "curved",
                                              "linear",      "means_test",      "class_size",    "scholarship",
                                              "distance",    "incumbent_share", "birth_quarter"};
  return names;
}

inline Microdata bundled_microdata(std::string_view name) {
  Microdata m;
  if (name == "vote_share") {
    // Margin of victory in [-40, 60] percentage points, more mass near 0.
    Rng rng = make_rng(101);
    std::normal_distribution<double> margin(4.0, 18.0);
    std::normal_distribution<double> noise(0.0, 9.0);
    m.cutoff = 0.0;
    while (m.raw_x.size() < 1800) {
      const double r = margin(rng);
      if (r < -40.0 || r > 60.0) continue;
      const double s = r / 50.0;
      const double mu = 45.0 + 8.0 * s + 3.0 * s * s - 2.0 * s * s * s + (r >= 0 ? 2.5 : 0.0);
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "test_score") {
    // Integer scores 0..100 with many ties; cutoff at 60.
    Rng rng = make_rng(202);
    std::normal_distribution<double> score(58.0, 16.0);
    std::normal_distribution<double> noise(0.0, 11.0);
    m.cutoff = 59.5;
    m.semi_discrete = true;
    while (m.raw_x.size() < 2400) {
      const double r = std::round(score(rng));
      if (r < 0.0 || r > 100.0) continue;
      const double s = (r - 60.0) / 40.0;
      const double mu = 62.0 + 10.0 * s - 4.0 * s * s + 5.0 * std::sin(2.0 * s);
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "age_threshold") {
    // Age in months around a 65-year threshold, uniform support.
    Rng rng = make_rng(303);
    std::uniform_real_distribution<double> age(720.0, 840.0);
    std::normal_distribution<double> noise(0.0, 0.35);
    m.cutoff = 780.0;
    for (int i = 0; i < 1500; ++i) {
      const double r = age(rng);
      const double s = (r - 780.0) / 60.0;
      const double mu = 2.4 + 0.3 * s + 0.15 * std::exp(s) - 0.1 * s * s;
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "curved") {
    // Strong curvature concentrated near the cutoff.
    Rng rng = make_rng(404);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    m.cutoff = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double r = u(rng);
      const double mu = r < 0.0 ? 20.0 + 6.0 * r + 14.0 * r * r + 9.0 * r * r * r
                                : 20.0 - 5.0 * r - 12.0 * r * r + 10.0 * r * r * r;
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "linear") {
    Rng rng = make_rng(505);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    m.cutoff = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double r = u(rng);
      m.raw_x.push_back(r);
      m.y.push_back(10.0 + 0.8 * r + noise(rng));
    }
  } else if (name == "means_test") {
    // Household income around an eligibility threshold; skewed right.
    Rng rng = make_rng(606);
    std::lognormal_distribution<double> income(10.3, 0.35);
    std::normal_distribution<double> noise(0.0, 4.0);
    m.cutoff = 30000.0;
    while (m.raw_x.size() < 2000) {
      const double r = income(rng);
      if (r < 12000.0 || r > 60000.0) continue;
      const double s = (r - 30000.0) / 15000.0;
      const double mu = 30.0 - 6.0 * s + 2.5 * s * s + 1.2 * std::tanh(3.0 * s);
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "class_size") {
    // Enrollment counts with a 40-student rule; heavy ties.
    Rng rng = make_rng(707);
    std::poisson_distribution<int> enrol(44);
    std::normal_distribution<double> noise(0.0, 6.0);
    m.cutoff = 40.5;
    m.semi_discrete = true;
    while (m.raw_x.size() < 1600) {
      const double r = enrol(rng);
      if (r < 20.0 || r > 70.0) continue;
      const double s = (r - 40.5) / 20.0;
      const double mu = 70.0 + 3.0 * s - 5.0 * s * s + 2.0 * s * s * s;
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "scholarship") {
    // GPA on a 0-4 scale with a 3.0 merit threshold.
    Rng rng = make_rng(808);
    std::normal_distribution<double> gpa(2.9, 0.5);
    std::normal_distribution<double> noise(0.0, 0.12);
    m.cutoff = 3.0;
    while (m.raw_x.size() < 1400) {
      const double r = gpa(rng);
      if (r < 1.5 || r > 4.0) continue;
      const double s = r - 3.0;
      const double mu = 0.55 + 0.2 * s + 0.08 * s * s - 0.06 * s * s * s;
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "distance") {
    // Signed distance to a boundary in km; outcome flattens far away.
    Rng rng = make_rng(909);
    std::uniform_real_distribution<double> dist(-25.0, 25.0);
    std::normal_distribution<double> noise(0.0, 0.6);
    m.cutoff = 0.0;
    for (int i = 0; i < 1200; ++i) {
      const double r = dist(rng);
      const double mu = 3.0 + 1.5 / (1.0 + std::exp(-r / 6.0)) + 0.02 * r;
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else if (name == "incumbent_share") {
    // Lagged margin with heteroskedastic outcome noise.
    Rng rng = make_rng(1010);
    std::normal_distribution<double> margin(0.0, 20.0);
    std::normal_distribution<double> z(0.0, 1.0);
    m.cutoff = 0.0;
    while (m.raw_x.size() < 2200) {
      const double r = margin(rng);
      if (std::abs(r) > 50.0) continue;
      const double s = r / 50.0;
      const double mu = 50.0 + 12.0 * s - 6.0 * s * s * s;
      m.raw_x.push_back(r);
      m.y.push_back(mu + (6.0 + 4.0 * std::abs(s)) * z(rng));
    }
  } else if (name == "birth_quarter") {
    // Birth date in days around a school-entry cutoff, seasonal density.
    Rng rng = make_rng(1111);
    std::uniform_real_distribution<double> day(-180.0, 180.0);
    std::uniform_real_distribution<double> accept(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 8.0);
    m.cutoff = 0.0;
    while (m.raw_x.size() < 1800) {
      const double r = day(rng);
      if (accept(rng) > 0.75 + 0.25 * std::cos(r / 58.0)) continue;
      const double s = r / 180.0;
      const double mu = 100.0 - 4.0 * s + 3.0 * std::sin(3.0 * s);
      m.raw_x.push_back(r);
      m.y.push_back(mu + noise(rng));
    }
  } else {
    throw DomainError("unknown bundled example '" + std::string(name) + "'");
  }
  return m;
}

inline Dgp bundled_dgp(std::string_view name, CalibrationOptions opt = {}) {
  if (opt.id == "dgp") opt.id = std::string(name);
  return calibrate_dgp(bundled_microdata(name), opt);
}

}  // namespace rdlab
