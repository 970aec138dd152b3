#pragma once

// Size / power / coverage simulations for the econometric procedures.
// Replication r draws its dataset from derive_seed(seed, r) for every d, so
// methods and jump sizes are compared on common random numbers.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rdlab/dgp.hpp"
#include "rdlab/econometrics.hpp"
#include "rdlab/evaluation.hpp"
#include "rdlab/io.hpp"
#include "rdlab/random.hpp"

namespace rdlab {

struct MonteCarloSpec {
  std::vector<Method> methods{Method::pq, Method::ik, Method::cct, Method::ak};
  std::vector<double> d_multiples{0.0};
  int reps = 1000;
  std::uint64_t seed = 1;
  InferenceOptions inference;
  SampleOptions sample;
  unsigned threads = 0;  // 0 = hardware concurrency
};

struct MonteCarloCell {
  Method method = Method::pq;
  double d_multiple = 0.0;
  double true_d = 0.0;
  int reps = 0;       // replications that produced a result
  int failures = 0;   // replications where the procedure threw
  int rejections = 0;
  int covered = 0;    // CI contains true_d
  std::vector<double> estimates;
  std::vector<double> t_stats;

  double rejection_rate() const { return reps ? static_cast<double>(rejections) / reps : NAN; }
  double coverage() const { return reps ? static_cast<double>(covered) / reps : NAN; }
  /// Binomial Monte Carlo standard error of the rejection rate.
  double mc_se() const {
    const double p = rejection_rate();
    return reps ? std::sqrt(p * (1.0 - p) / reps) : NAN;
  }
  MseDecomposition mse() const { return mse_decomposition(estimates, true_d); }
};

struct MonteCarloResult {
  std::string dgp_id;
  std::vector<MonteCarloCell> cells;  // d-major, then method

  const MonteCarloCell& at(Method m, double d) const {
    for (const auto& c : cells) {
      if (c.method == m && c.d_multiple == d) return c;
    }
    throw DomainError("MonteCarloResult: no cell for " + std::string(method_name(m)) + " at d = " + std::to_string(d));
  }

  /// Rejection rates over the requested d values, in input order.
  std::vector<const MonteCarloCell*> curve(Method m) const {
    std::vector<const MonteCarloCell*> out;
    for (const auto& c : cells) {
      if (c.method == m) out.push_back(&c);
    }
    return out;
  }
};

inline MonteCarloResult run_monte_carlo(const Dgp& dgp, const MonteCarloSpec& spec) {
  if (spec.reps < 1) throw DomainError("run_monte_carlo: reps must be positive");
  if (spec.methods.empty() || spec.d_multiples.empty()) throw DomainError("run_monte_carlo: nothing to run");
  const std::size_t nd = spec.d_multiples.size();
  const std::size_t nm = spec.methods.size();
  const auto reps = static_cast<std::size_t>(spec.reps);

  struct Outcome {
    bool ok = false;
    bool reject = false;
    bool covered = false;
    double estimate = 0.0;
    double t = 0.0;
  };
  std::vector<Outcome> out(nd * nm * reps);

  auto one_rep = [&](std::size_t r) {
    const std::uint64_t seed = derive_seed(spec.seed, r);
    for (std::size_t di = 0; di < nd; ++di) {
      const auto ds = sample_dataset(dgp, spec.d_multiples[di], seed, spec.sample);
      for (std::size_t mi = 0; mi < nm; ++mi) {
        Outcome& o = out[(di * nm + mi) * reps + r];
        try {
          const auto res = run_inference(spec.methods[mi], ds, spec.inference);
          o.ok = true;
          o.reject = res.reject;
          o.covered = res.ci_low <= ds.true_d && ds.true_d <= res.ci_high;
          o.estimate = res.estimate;
          o.t = res.t_stat;
        } catch (const Error&) {
          o.ok = false;
        }
      }
    }
  };

  unsigned threads = spec.threads ? spec.threads : std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, reps));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < reps;) {
      try {
        one_rep(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = reps;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  MonteCarloResult result;
  result.dgp_id = dgp.id;
  for (std::size_t di = 0; di < nd; ++di) {
    for (std::size_t mi = 0; mi < nm; ++mi) {
      MonteCarloCell c;
      c.method = spec.methods[mi];
      c.d_multiple = spec.d_multiples[di];
      c.true_d = c.d_multiple * dgp.sigma;
      for (std::size_t r = 0; r < reps; ++r) {
        const Outcome& o = out[(di * nm + mi) * reps + r];
        if (!o.ok) {
          ++c.failures;
          continue;
        }
        ++c.reps;
        c.rejections += o.reject;
        c.covered += o.covered;
        c.estimates.push_back(o.estimate);
        c.t_stats.push_back(o.t);
      }
      result.cells.push_back(std::move(c));
    }
  }
  return result;
}

/// A nondecreasing check that tolerates Monte Carlo noise: every later point
/// may fall below an earlier one by at most `k` combined standard errors.
inline bool monotone_within(const std::vector<const MonteCarloCell*>& curve, double k = 2.0) {
  for (std::size_t i = 0; i < curve.size(); ++i) {
    for (std::size_t j = i + 1; j < curve.size(); ++j) {
      const double drop = curve[i]->rejection_rate() - curve[j]->rejection_rate();
      const double se = std::hypot(curve[i]->mc_se(), curve[j]->mc_se());
      if (drop > k * se + 1e-12) return false;
    }
  }
  return true;
}

inline std::string monte_carlo_csv(const MonteCarloResult& r) {
  std::ostringstream out;
  out << "dgp,method,d_multiple,reps,failures,rejection_rate,mc_se,coverage,bias,variance,mse\n";
  for (const auto& c : r.cells) {
    const auto m = c.reps ? c.mse() : MseDecomposition{NAN, NAN, NAN};
    out << r.dgp_id << ',' << method_name(c.method) << ',' << detail::csv_num(c.d_multiple) << ',' << c.reps << ','
        << c.failures << ',' << detail::csv_num(c.rejection_rate()) << ',' << detail::csv_num(c.mc_se()) << ','
        << detail::csv_num(c.coverage()) << ','
        << detail::csv_num(c.reps ? mean(c.estimates) - c.true_d : NAN) << ',' << detail::csv_num(m.variance) << ','
        << detail::csv_num(m.mse) << '\n';
  }
  return out.str();
}

inline json monte_carlo_json(const MonteCarloResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json j{{"method", method_name(c.method)},
           {"d_multiple", c.d_multiple},
           {"true_d", c.true_d},
           {"reps", c.reps},
           {"failures", c.failures},
           {"rejection_rate", detail::finite_or_null(c.rejection_rate())},
           {"mc_se", detail::finite_or_null(c.mc_se())},
           {"coverage", detail::finite_or_null(c.coverage())}};
    if (c.reps) {
      const auto m = c.mse();
      j["bias_sq"] = m.bias_sq;
      j["variance"] = m.variance;
      j["mse"] = m.mse;
    }
    cells.push_back(std::move(j));
  }
  return json{{"dgp", r.dgp_id}, {"cells", cells}};
}

}  // namespace rdlab
