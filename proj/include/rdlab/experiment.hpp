#pragma once

// Classification experiments: single-use graph pools, arm assignment, trial
// serving, earnings and aggregation. Every mutation is an event appended to a
// JSON-lines log; replaying the log rebuilds the state.

#include <array>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rdlab/bundled.hpp"
#include "rdlab/dgp.hpp"
#include "rdlab/error.hpp"
#include "rdlab/evaluation.hpp"
#include "rdlab/io.hpp"
#include "rdlab/plot.hpp"
#include "rdlab/random.hpp"

namespace rdlab {

enum class ServiceErrc { invalid_argument, not_found, conflict, study_full, invalid_state };

class ServiceError : public Error {
 public:
  ServiceError(ServiceErrc code, const std::string& what) : Error(what), code_(code) {}
  ServiceErrc code() const noexcept { return code_; }

 private:
  ServiceErrc code_;
};

inline constexpr int kTrialsPerSession = 11;

/// Signed magnitudes by rotation position; the sign of the last one is drawn per session.
inline constexpr std::array<double, kTrialsPerSession> kRotationMagnitudes{
    0.0, 0.0, 0.1944, -0.1944, 0.324, -0.324, 0.54, -0.54, 0.9, -0.9, 1.5};

struct Payment {
  int base_cents = 300;
  int wager_win_cents = 40;
  int fixed_cents = 20;
  bool operator==(const Payment&) const = default;
};

struct StudyConfig {
  std::vector<GraphicalParams> arms;
  std::vector<std::string> dgps;  // exactly one per trial
  int participants_per_arm = 88;
  Payment payment;
  bool magnitude_elicitation = false;  // expert mode
  bool forward_only = true;
  std::vector<std::string> survey_fields;

  bool operator==(const StudyConfig&) const = default;

  void validate() const {
    auto bad = [](const std::string& m) { throw ServiceError(ServiceErrc::invalid_argument, "study config: " + m); };
    if (arms.empty()) bad("at least one arm is required");
    for (const auto& g : arms) {
      try {
        g.validate();
      } catch (const DomainError& e) {
        bad(e.what());
      }
    }
    if (dgps.size() != kTrialsPerSession) bad("exactly 11 DGP ids are required");
    if (std::set<std::string>(dgps.begin(), dgps.end()).size() != dgps.size()) bad("DGP ids repeat");
    if (participants_per_arm < 1) bad("participants_per_arm must be positive");
    if (payment.base_cents < 0 || payment.wager_win_cents < 0 || payment.fixed_cents < 0) {
      bad("payments must be nonnegative");
    }
    std::set<std::string> seen;
    for (const auto& f : survey_fields) {
      if (f.empty() || !seen.insert(f).second) bad("survey fields must be distinct and nonempty");
    }
  }
};

inline void to_json(json& j, const Payment& p) {
  j = json{{"base_cents", p.base_cents}, {"wager_win_cents", p.wager_win_cents}, {"fixed_cents", p.fixed_cents}};
}
inline void from_json(const json& j, Payment& p) {
  p = Payment{};
  if (j.contains("base_cents")) j.at("base_cents").get_to(p.base_cents);
  if (j.contains("wager_win_cents")) j.at("wager_win_cents").get_to(p.wager_win_cents);
  if (j.contains("fixed_cents")) j.at("fixed_cents").get_to(p.fixed_cents);
}

inline void to_json(json& j, const StudyConfig& c) {
  j = json{{"arms", c.arms},
           {"dgps", c.dgps},
           {"participants_per_arm", c.participants_per_arm},
           {"payment", c.payment},
           {"magnitude_elicitation", c.magnitude_elicitation},
           {"forward_only", c.forward_only},
           {"survey_fields", c.survey_fields}};
}
inline void from_json(const json& j, StudyConfig& c) {
  c = StudyConfig{};
  j.at("arms").get_to(c.arms);
  j.at("dgps").get_to(c.dgps);
  if (j.contains("participants_per_arm")) j.at("participants_per_arm").get_to(c.participants_per_arm);
  if (j.contains("payment")) j.at("payment").get_to(c.payment);
  if (j.contains("magnitude_elicitation")) j.at("magnitude_elicitation").get_to(c.magnitude_elicitation);
  if (j.contains("forward_only")) j.at("forward_only").get_to(c.forward_only);
  if (j.contains("survey_fields")) j.at("survey_fields").get_to(c.survey_fields);
}

/// A DGP available to studies, plus the microdata it came from when known.
struct DgpSource {
  Dgp dgp;
  std::optional<Dataset> observed;
};

using DgpRegistry = std::map<std::string, DgpSource, std::less<>>;

inline DgpRegistry bundled_registry() {
  DgpRegistry reg;
  for (const auto& name : bundled_names()) {
    const auto micro = bundled_microdata(name);
    CalibrationOptions opt;
    opt.id = name;
    reg[name] = DgpSource{calibrate_dgp(micro, opt), observed_dataset(micro, opt.normalization, name)};
  }
  return reg;
}

/// The eleven bundled examples in registry order, ready for StudyConfig::dgps.
inline std::vector<std::string> bundled_study_dgps() {
  auto names = bundled_names();
  names.resize(kTrialsPerSession);
  return names;
}

// ---- deterministic study layout --------------------------------------------

namespace detail {

inline constexpr std::uint64_t kArrivalStream = 1;
inline constexpr std::uint64_t kSessionStream = 2;
inline constexpr std::uint64_t kGraphSeedStream = 3;
inline constexpr std::uint64_t kGraphIdStream = 4;
inline constexpr std::uint64_t kStudyIdStream = 5;

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fisher-Yates with a SplitMix stream and rejection sampling, so the order is
// the same under every standard library.
inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  std::uint64_t state = seed;
  for (int i = n - 1; i > 0; --i) {
    const auto bound = static_cast<std::uint64_t>(i) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r;
    do {
      r = splitmix64(state);
    } while (r >= limit);
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(r % bound)]);
  }
  return v;
}

inline std::string iso_now() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto t = system_clock::to_time_t(now);
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

}  // namespace detail

inline std::string study_id_for(std::uint64_t master_seed) {
  return "st-" + detail::hex16(derive_seed(master_seed, detail::kStudyIdStream));
}

/// Participant slot p of arm a has linear index a * participants_per_arm + p.
inline std::uint64_t session_seed(std::uint64_t master_seed, std::size_t slot_index) {
  return derive_seed(master_seed, detail::kSessionStream, slot_index);
}

inline std::string session_id_for(std::uint64_t master_seed, std::size_t slot_index) {
  return "se-" + detail::hex16(derive_seed(session_seed(master_seed, slot_index), 7));
}

/// Rotation: DGP j of participant slot p sits at magnitude position (j + p) mod 11.
inline double rotation_magnitude(std::uint64_t master_seed, std::size_t slot_index, int slot, int dgp_index) {
  const int pos = (dgp_index + slot) % kTrialsPerSession;
  double d = kRotationMagnitudes[static_cast<std::size_t>(pos)];
  if (pos == kTrialsPerSession - 1 && (derive_seed(session_seed(master_seed, slot_index), 1) & 1U)) d = -d;
  return d;
}

/// Block-randomized arrival: each block of `arms` arrivals is a permutation of the arms.
inline std::vector<int> arrival_order(int arms, int participants_per_arm, std::uint64_t master_seed) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(arms) * static_cast<std::size_t>(participants_per_arm));
  for (int b = 0; b < participants_per_arm; ++b) {
    const auto perm = detail::shuffled_indices(arms, derive_seed(master_seed, detail::kArrivalStream, b));
    order.insert(order.end(), perm.begin(), perm.end());
  }
  return order;
}

inline std::size_t pool_index(const StudyConfig& c, int arm, int slot, int dgp_index) {
  return (static_cast<std::size_t>(arm) * c.participants_per_arm + slot) * kTrialsPerSession + dgp_index;
}

/// Renders arms x participants_per_arm x 11 graphs. Pure in (config, seed, registry).
inline std::vector<RenderedGraph> generate_pool(const StudyConfig& config, std::uint64_t master_seed,
                                                const DgpRegistry& registry, unsigned threads = 0) {
  config.validate();
  std::vector<const Dgp*> dgps;
  for (const auto& id : config.dgps) {
    const auto it = registry.find(id);
    if (it == registry.end()) throw ServiceError(ServiceErrc::invalid_argument, "study config: unknown DGP '" + id + "'");
    dgps.push_back(&it->second.dgp);
  }
  const int arms = static_cast<int>(config.arms.size());
  const std::size_t total = static_cast<std::size_t>(arms) * config.participants_per_arm * kTrialsPerSession;
  std::vector<RenderedGraph> pool(total);

  auto render_one = [&](std::size_t g) {
    const int j = static_cast<int>(g % kTrialsPerSession);
    const std::size_t slot_index = g / kTrialsPerSession;
    const int arm = static_cast<int>(slot_index / config.participants_per_arm);
    const int slot = static_cast<int>(slot_index % config.participants_per_arm);
    const double d = rotation_magnitude(master_seed, slot_index, slot, j);
    const std::uint64_t seed = derive_seed(master_seed, detail::kGraphSeedStream, g);
    const auto ds = sample_dataset(*dgps[static_cast<std::size_t>(j)], d, seed);
    pool[g] = render_rd_plot(ds, config.arms[static_cast<std::size_t>(arm)],
                             "g-" + detail::hex16(derive_seed(master_seed, detail::kGraphIdStream, g)));
  };

  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t g; (g = next.fetch_add(1)) < total;) {
      try {
        render_one(g);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = total;
      }
    }
  };
  std::vector<std::thread> pool_threads;
  for (unsigned t = 1; t < threads; ++t) pool_threads.emplace_back(worker);
  worker();
  for (auto& t : pool_threads) t.join();
  if (failure) std::rethrow_exception(failure);

  std::set<std::string> ids;
  std::set<std::uint64_t> seeds;
  for (const auto& g : pool) {
    if (!ids.insert(g.truth.graph_id).second || !seeds.insert(g.truth.seed).second) {
      throw ServiceError(ServiceErrc::conflict, "graph pool: id or seed collision; choose another master seed");
    }
  }
  return pool;
}

inline std::string pool_hash(const std::vector<RenderedGraph>& pool) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& g : pool) {
    h = fnv1a64(g.truth.graph_id, h);
    h = fnv1a64(detail::hex16(g.truth.seed), h);
    h = fnv1a64(g.svg, h);
  }
  return detail::hex16(h);
}

// ---- sessions -----------------------------------------------------------------

enum class SessionState { open, in_progress, finished };

NLOHMANN_JSON_SERIALIZE_ENUM(SessionState, {{SessionState::open, "open"},
                                            {SessionState::in_progress, "in_progress"},
                                            {SessionState::finished, "finished"}})

struct TrialAssignment {
  std::size_t pool_index = 0;
  std::string graph_id;
  int dgp_index = 0;
  std::string dgp_id;
  double d_multiple = 0.0;
  std::uint64_t seed = 0;
  bool operator==(const TrialAssignment&) const = default;
};

struct TrialResponse {
  bool reported = false;
  BonusChoice bonus = BonusChoice::fixed;
  std::optional<double> magnitude;
  bool operator==(const TrialResponse&) const = default;
};

struct FinalizeResult {
  int n_correct = 0;
  int earnings_cents = 0;
  bool operator==(const FinalizeResult&) const = default;
};

struct ExitSurvey {
  std::optional<bool> attention_check_passed;
  std::map<std::string, std::string> fields;
};

struct Session {
  std::string session_id;
  std::string study_id;
  int arm = 0;
  int slot = 0;
  std::size_t arrival = 0;  // position in the study's arrival order
  std::vector<TrialAssignment> trials;  // presentation order
  std::vector<bool> served;
  std::vector<std::optional<TrialResponse>> responses;
  SessionState state = SessionState::open;
  int current = 0;  // first unanswered trial
  std::optional<bool> attention_check_passed;
  std::map<std::string, std::string> survey;
  std::optional<FinalizeResult> result;

  bool operator==(const Session&) const = default;
};

struct Study {
  std::string study_id;
  StudyConfig config;
  std::uint64_t master_seed = 0;
  std::vector<int> arrival;
  std::size_t next_arrival = 0;
  std::vector<std::string> session_ids;
  std::string pool_hash;
  std::shared_ptr<const std::vector<RenderedGraph>> pool;
  std::shared_ptr<const std::unordered_map<std::string, std::size_t>> graph_index;

  std::size_t capacity() const { return arrival.size(); }

  bool operator==(const Study& o) const {
    return study_id == o.study_id && config == o.config && master_seed == o.master_seed && arrival == o.arrival &&
           next_arrival == o.next_arrival && session_ids == o.session_ids && pool_hash == o.pool_hash;
  }
};

inline bool trial_correct(const TrialAssignment& t, const TrialResponse& r) {
  return r.reported == (t.d_multiple != 0.0);
}

inline FinalizeResult compute_earnings(const Session& s, const Payment& pay) {
  FinalizeResult out;
  out.earnings_cents = pay.base_cents;
  for (std::size_t k = 0; k < s.trials.size(); ++k) {
    const auto& r = *s.responses[k];
    const bool ok = trial_correct(s.trials[k], r);
    out.n_correct += ok;
    out.earnings_cents += r.bonus == BonusChoice::wager ? (ok ? pay.wager_win_cents : 0) : pay.fixed_cents;
  }
  return out;
}

inline std::string arm_label(int arm) { return "arm" + std::to_string(arm + 1); }

// ---- aggregation ----------------------------------------------------------------

struct AggregateOptions {
  bool exclude_failed_attention = false;
  bool include_unfinished = false;
  Type2Mode type2 = Type2Mode::at_modal;
};

struct ArmSummary {
  std::string arm;
  GraphicalParams gamma;
  std::vector<PowerPoint> curve;
  std::optional<RiskTableRow> classical;
  std::optional<RiskTableRow> as;
  int responses = 0;
};

struct StudyAggregate {
  std::string study_id;
  std::vector<ArmSummary> arms;
  int sessions_open = 0;
  int sessions_in_progress = 0;
  int sessions_finished = 0;
  std::size_t capacity = 0;
};

inline json aggregate_json(const StudyAggregate& a) {
  json arms = json::array();
  for (const auto& s : a.arms) {
    arms.push_back({{"arm", s.arm},
                    {"gamma", s.gamma},
                    {"label", s.gamma.label()},
                    {"responses", s.responses},
                    {"curve", s.curve},
                    {"classical", s.classical ? json(*s.classical) : json(nullptr)},
                    {"as", s.as ? json(*s.as) : json(nullptr)}});
  }
  return json{{"study_id", a.study_id},
              {"arms", arms},
              {"progress",
               {{"open", a.sessions_open},
                {"in_progress", a.sessions_in_progress},
                {"finished", a.sessions_finished},
                {"capacity", a.capacity}}}};
}

enum class ExportTable { power, risk, responses };

inline ExportTable export_table_from_name(std::string_view s) {
  if (s.empty() || s == "power") return ExportTable::power;
  if (s == "risk") return ExportTable::risk;
  if (s == "responses") return ExportTable::responses;
  throw ServiceError(ServiceErrc::invalid_argument, "unknown export table '" + std::string(s) + "'");
}

// ---- participant views (no truth fields) ---------------------------------------

inline json session_view(const Session& s, const StudyConfig& c) {
  return json{{"session_id", s.session_id},
              {"n_trials", kTrialsPerSession},
              {"next_trial", s.current},
              {"forward_only", c.forward_only},
              {"magnitude_elicitation", c.magnitude_elicitation},
              {"survey_fields", c.survey_fields}};
}

inline json trial_view(int k, const std::string& svg) {
  return json{{"trial_index", k}, {"n_trials", kTrialsPerSession}, {"svg", svg}};
}

inline json ack_view(const std::string& session_id, int k) {
  return json{{"session_id", session_id}, {"trial_index", k}, {"accepted", true}};
}

inline json finalize_view(const FinalizeResult& r) {
  return json{{"n_correct", r.n_correct}, {"earnings_cents", r.earnings_cents}};
}

/// Keys that may never appear in a participant payload.
inline const std::set<std::string>& truth_keys() {
  static const std::set<std::string> keys{"d_multiple", "dgp_id", "dgp", "graph_id", "seed",    "truth",
                                          "gamma",      "answer", "correct", "arm",  "d",      "magnitude_truth"};
  return keys;
}

// ---- service ----------------------------------------------------------------------

struct ServiceOptions {
  std::optional<std::filesystem::path> data_dir;  // events.jsonl and snapshot.json live here
  std::size_t snapshot_every = 500;
  std::function<std::string()> clock = detail::iso_now;
  unsigned threads = 0;  // pool rendering; 0 = hardware concurrency
};

class ExperimentService {
 public:
  using Options = ServiceOptions;

  explicit ExperimentService(std::shared_ptr<const DgpRegistry> registry, Options opt = {})
      : registry_(std::move(registry)), opt_(std::move(opt)) {
    if (!registry_) throw DomainError("ExperimentService: null registry");
    if (opt_.data_dir) recover_from_disk();
  }

  ExperimentService(const ExperimentService&) = delete;
  ExperimentService& operator=(const ExperimentService&) = delete;

  const DgpRegistry& registry() const { return *registry_; }

  std::string create_study(const StudyConfig& config, std::uint64_t master_seed) {
    const std::string id = study_id_for(master_seed);
    {
      std::lock_guard lock(mu_);
      if (studies_.count(id)) throw ServiceError(ServiceErrc::conflict, "study " + id + " already exists");
    }
    auto pool = generate_pool(config, master_seed, *registry_, opt_.threads);
    std::lock_guard lock(mu_);
    json ev{{"type", "study_created"},
            {"study_id", id},
            {"master_seed", master_seed},
            {"config", config},
            {"pool_hash", pool_hash(pool)}};
    apply_study_created(ev, std::move(pool));
    append(std::move(ev));
    return id;
  }

  /// Returns the participant view of the new session.
  json open_session(const std::string& study_id) {
    std::lock_guard lock(mu_);
    const Study& st = study_at(study_id);
    if (st.next_arrival >= st.capacity()) throw ServiceError(ServiceErrc::study_full, "study " + study_id + " is full");
    json ev{{"type", "session_created"}, {"study_id", study_id}};
    const std::string sid = apply_session_created(ev);
    append(std::move(ev));
    const Session& s = sessions_.at(sid);
    return session_view(s, studies_.at(s.study_id).config);
  }

  json get_trial(const std::string& session_id, int k) {
    std::lock_guard lock(mu_);
    json ev{{"type", "trial_served"}, {"session_id", session_id}, {"trial_index", k}};
    if (apply_trial_served(ev)) append(std::move(ev));
    const Session& s = sessions_.at(session_id);
    const Study& st = studies_.at(s.study_id);
    return trial_view(k, (*st.pool)[s.trials[static_cast<std::size_t>(k)].pool_index].svg);
  }

  json submit_response(const std::string& session_id, int k, const TrialResponse& r) {
    std::lock_guard lock(mu_);
    json ev{{"type", "response_submitted"},
            {"session_id", session_id},
            {"trial_index", k},
            {"reported", r.reported},
            {"bonus", r.bonus},
            {"magnitude", detail::optional_json(r.magnitude)}};
    if (apply_response(ev)) append(std::move(ev));
    return ack_view(session_id, k);
  }

  json finalize_session(const std::string& session_id, const ExitSurvey& survey = {}) {
    std::lock_guard lock(mu_);
    json ev{{"type", "session_finished"},
            {"session_id", session_id},
            {"attention_check_passed", detail::optional_json(survey.attention_check_passed)},
            {"survey", survey.fields}};
    if (apply_finished(ev)) append(std::move(ev));
    return finalize_view(*sessions_.at(session_id).result);
  }

  StudyAggregate aggregate(const std::string& study_id, const AggregateOptions& opt = {}) const {
    ClassificationBatch batch;
    StudyAggregate out;
    {
      std::lock_guard lock(mu_);
      const Study& st = study_at(study_id);
      batch = batch_locked(st, opt);
      out.study_id = study_id;
      out.capacity = st.capacity();
      for (std::size_t a = 0; a < st.config.arms.size(); ++a) {
        ArmSummary s;
        s.arm = arm_label(static_cast<int>(a));
        s.gamma = st.config.arms[a];
        out.arms.push_back(std::move(s));
      }
      for (const auto& sid : st.session_ids) {
        switch (sessions_.at(sid).state) {
          case SessionState::open: ++out.sessions_open; break;
          case SessionState::in_progress: ++out.sessions_in_progress; break;
          case SessionState::finished: ++out.sessions_finished; break;
        }
      }
    }
    for (auto& s : out.arms) {
      s.curve = power_curve(batch, s.arm);
      for (const auto& p : s.curve) s.responses += p.n;
      if (curve_at(s.curve, 0.0) && curve_at(s.curve, kModalMagnitude)) {
        s.classical = classical_risk_row(batch, s.arm, opt.type2);
        s.as = as_risk_row(batch, s.arm, opt.type2);
      }
    }
    return out;
  }

  ClassificationBatch classification_batch(const std::string& study_id, const AggregateOptions& opt = {}) const {
    std::lock_guard lock(mu_);
    return batch_locked(study_at(study_id), opt);
  }

  std::string export_csv(const std::string& study_id, ExportTable table, const AggregateOptions& opt = {}) const {
    if (table == ExportTable::responses) {
      const auto batch = classification_batch(study_id, opt);
      std::ostringstream out;
      out << "responder_id,graph_id,dgp_id,d_multiple,arm,reported_discontinuity,bonus,magnitude_estimate\n";
      for (const auto& r : batch.records) {
        out << r.responder_id << ',' << r.graph_id << ',' << r.dgp_id << ',' << detail::csv_num(r.d_multiple) << ','
            << r.arm << ',' << (r.reported_discontinuity ? 1 : 0) << ','
            << (r.bonus == BonusChoice::wager ? "wager" : "fixed") << ','
            << (r.magnitude_estimate ? detail::csv_num(*r.magnitude_estimate) : std::string("NA")) << '\n';
      }
      return out.str();
    }
    const auto agg = aggregate(study_id, opt);
    if (table == ExportTable::power) {
      std::vector<std::pair<std::string, std::vector<PowerPoint>>> curves;
      for (const auto& s : agg.arms) curves.emplace_back(s.arm, s.curve);
      return power_curves_csv(curves);
    }
    std::vector<RiskTableRow> classical, as;
    for (const auto& s : agg.arms) {
      if (s.classical) classical.push_back(*s.classical);
      if (s.as) as.push_back(*s.as);
    }
    return risk_table_csv(classical, as);
  }

  /// Sidecar metadata for an administrator; never part of a participant payload.
  GraphTruth graph_truth(const std::string& study_id, const std::string& graph_id) const {
    std::lock_guard lock(mu_);
    const Study& st = study_at(study_id);
    const auto it = st.graph_index->find(graph_id);
    if (it == st.graph_index->end()) throw ServiceError(ServiceErrc::not_found, "unknown graph " + graph_id);
    return (*st.pool)[it->second].truth;
  }

  /// Null lineup for a registered DGP: the observed data (or a d = 0 draw) among 19 decoys.
  Lineup lineup(const std::string& dgp_id, std::uint64_t seed, const LineupOptions& opt = {}) const {
    const auto it = registry_->find(dgp_id);
    if (it == registry_->end()) throw ServiceError(ServiceErrc::not_found, "unknown DGP '" + dgp_id + "'");
    const Dataset real = it->second.observed ? *it->second.observed
                                             : sample_dataset(it->second.dgp, 0.0, derive_seed(seed, 0xB5E));
    return render_lineup(real, it->second.dgp, seed, opt);
  }

  Session session(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    return session_at(session_id);
  }

  Study study(const std::string& study_id) const {
    std::lock_guard lock(mu_);
    return study_at(study_id);
  }

  std::vector<std::string> study_ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : studies_) ids.push_back(id);
    return ids;
  }

  std::vector<std::string> event_log() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  std::uint64_t event_count() const {
    std::lock_guard lock(mu_);
    return seq_;
  }

  /// Applies a JSON-lines event log to this (empty) service.
  void replay(std::istream& in) {
    std::lock_guard lock(mu_);
    std::string line;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      replay_line(line);
    }
  }

  bool same_state(const ExperimentService& other) const {
    std::scoped_lock lock(mu_, other.mu_);
    return seq_ == other.seq_ && studies_ == other.studies_ && sessions_ == other.sessions_;
  }

  /// Full state without rendered pools (they are rebuilt from config and seed).
  json snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_locked();
  }

  /// Loads a snapshot into this (empty) service.
  void restore(const json& snap) {
    std::lock_guard lock(mu_);
    restore_locked(snap);
  }

 private:
  std::shared_ptr<const DgpRegistry> registry_;
  Options opt_;
  mutable std::mutex mu_;
  std::map<std::string, Study> studies_;
  std::map<std::string, Session> sessions_;
  std::vector<std::string> events_;
  std::uint64_t seq_ = 0;
  std::ofstream log_;

  static ServiceError not_found(const std::string& what) { return ServiceError(ServiceErrc::not_found, what); }

  const Study& study_at(const std::string& id) const {
    const auto it = studies_.find(id);
    if (it == studies_.end()) throw not_found("unknown study " + id);
    return it->second;
  }
  Study& study_at(const std::string& id) { return const_cast<Study&>(std::as_const(*this).study_at(id)); }

  const Session& session_at(const std::string& id) const {
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw not_found("unknown session " + id);
    return it->second;
  }
  Session& session_at(const std::string& id) { return const_cast<Session&>(std::as_const(*this).session_at(id)); }

  ClassificationBatch batch_locked(const Study& st, const AggregateOptions& opt) const {
    ClassificationBatch batch;
    for (const auto& sid : st.session_ids) {
      const Session& s = sessions_.at(sid);
      if (s.state != SessionState::finished && !opt.include_unfinished) continue;
      if (opt.exclude_failed_attention && s.attention_check_passed == false) continue;
      for (std::size_t k = 0; k < s.trials.size(); ++k) {
        if (!s.responses[k]) continue;
        const auto& t = s.trials[k];
        const auto& r = *s.responses[k];
        batch.records.push_back(
            {s.session_id, t.graph_id, t.dgp_id, t.d_multiple, arm_label(s.arm), r.reported, r.bonus, r.magnitude});
      }
    }
    return batch;
  }

  // -- event application; each validates fully before mutating --

  void install_study(Study st, std::vector<RenderedGraph> pool) {
    auto index = std::make_shared<std::unordered_map<std::string, std::size_t>>();
    for (std::size_t i = 0; i < pool.size(); ++i) (*index)[pool[i].truth.graph_id] = i;
    st.graph_index = std::move(index);
    st.pool = std::make_shared<const std::vector<RenderedGraph>>(std::move(pool));
    const std::string id = st.study_id;
    studies_.emplace(id, std::move(st));
  }

  void apply_study_created(const json& ev, std::optional<std::vector<RenderedGraph>> pool = std::nullopt) {
    Study st;
    ev.at("study_id").get_to(st.study_id);
    ev.at("master_seed").get_to(st.master_seed);
    ev.at("config").get_to(st.config);
    if (studies_.count(st.study_id)) throw ServiceError(ServiceErrc::conflict, "study " + st.study_id + " already exists");
    if (st.study_id != study_id_for(st.master_seed)) throw ParseError("study id does not match its master seed");
    if (!pool) pool = generate_pool(st.config, st.master_seed, *registry_, opt_.threads);
    st.pool_hash = pool_hash(*pool);
    if (ev.contains("pool_hash") && ev.at("pool_hash").get<std::string>() != st.pool_hash) {
      throw ParseError("regenerated graph pool differs from the logged hash");
    }
    st.arrival = arrival_order(static_cast<int>(st.config.arms.size()), st.config.participants_per_arm, st.master_seed);
    install_study(std::move(st), std::move(*pool));
  }

  Session build_session(const Study& st, std::size_t arrival) const {
    const int arm = st.arrival[arrival];
    int slot = 0;
    for (std::size_t i = 0; i < arrival; ++i) slot += st.arrival[i] == arm;
    const std::size_t slot_index = static_cast<std::size_t>(arm) * st.config.participants_per_arm + slot;
    Session s;
    s.session_id = session_id_for(st.master_seed, slot_index);
    s.study_id = st.study_id;
    s.arm = arm;
    s.slot = slot;
    s.arrival = arrival;
    const auto order = detail::shuffled_indices(kTrialsPerSession, derive_seed(session_seed(st.master_seed, slot_index), 2));
    for (int j : order) {
      TrialAssignment t;
      t.pool_index = pool_index(st.config, arm, slot, j);
      const auto& g = (*st.pool)[t.pool_index];
      t.graph_id = g.truth.graph_id;
      t.dgp_index = j;
      t.dgp_id = g.truth.dgp_id;
      t.d_multiple = g.truth.d_multiple;
      t.seed = g.truth.seed;
      s.trials.push_back(std::move(t));
    }
    s.served.assign(kTrialsPerSession, false);
    s.responses.assign(kTrialsPerSession, std::nullopt);
    return s;
  }

  // Fills in the derived fields of a live event; checks them on replay.
  std::string apply_session_created(json& ev) {
    Study& st = study_at(ev.at("study_id").get<std::string>());
    if (st.next_arrival >= st.capacity()) throw ServiceError(ServiceErrc::study_full, "study " + st.study_id + " is full");
    Session s = build_session(st, st.next_arrival);
    if (ev.contains("session_id")) {
      if (ev.at("session_id") != s.session_id || ev.at("arm") != s.arm || ev.at("slot") != s.slot) {
        throw ParseError("session_created does not match the arrival order");
      }
    } else {
      ev["session_id"] = s.session_id;
      ev["arm"] = s.arm;
      ev["slot"] = s.slot;
    }
    ++st.next_arrival;
    st.session_ids.push_back(s.session_id);
    const std::string sid = s.session_id;
    sessions_.emplace(sid, std::move(s));
    return sid;
  }

  void check_trial_index(const Session& s, int k) const {
    if (k < 0 || k >= kTrialsPerSession) throw not_found("trial index " + std::to_string(k) + " out of range");
    if (s.state == SessionState::finished) throw ServiceError(ServiceErrc::invalid_state, "session is closed");
  }

  bool apply_trial_served(json& ev) {
    Session& s = session_at(ev.at("session_id").get<std::string>());
    const int k = ev.at("trial_index").get<int>();
    check_trial_index(s, k);
    const auto uk = static_cast<std::size_t>(k);
    const bool forward_only = studies_.at(s.study_id).config.forward_only;
    if (forward_only && k != s.current) {
      throw ServiceError(ServiceErrc::conflict, k < s.current ? "trial " + std::to_string(k) + " already answered"
                                                              : "trial " + std::to_string(k) + " is out of order");
    }
    if (s.served[uk]) return false;
    if (ev.contains("graph_id")) {
      if (ev.at("graph_id") != s.trials[uk].graph_id) throw ParseError("trial_served graph id mismatch");
    } else {
      ev["graph_id"] = s.trials[uk].graph_id;
    }
    s.served[uk] = true;
    s.state = SessionState::in_progress;
    return true;
  }

  bool apply_response(const json& ev) {
    Session& s = session_at(ev.at("session_id").get<std::string>());
    const int k = ev.at("trial_index").get<int>();
    check_trial_index(s, k);
    const auto uk = static_cast<std::size_t>(k);
    TrialResponse r;
    ev.at("reported").get_to(r.reported);
    ev.at("bonus").get_to(r.bonus);
    r.magnitude = detail::json_optional<double>(ev, "magnitude");
    if (!s.served[uk]) throw ServiceError(ServiceErrc::conflict, "trial " + std::to_string(k) + " was not served");
    if (s.responses[uk]) {
      if (*s.responses[uk] == r) return false;
      throw ServiceError(ServiceErrc::conflict, "trial " + std::to_string(k) + " already has a different response");
    }
    const bool elicit = studies_.at(s.study_id).config.magnitude_elicitation;
    if (elicit && r.reported && !r.magnitude) {
      throw ServiceError(ServiceErrc::invalid_argument, "a magnitude estimate is required");
    }
    if (r.magnitude && !(elicit && r.reported)) {
      throw ServiceError(ServiceErrc::invalid_argument, "a magnitude estimate is only accepted with a reported discontinuity");
    }
    if (r.magnitude && !std::isfinite(*r.magnitude)) {
      throw ServiceError(ServiceErrc::invalid_argument, "magnitude must be finite");
    }
    s.responses[uk] = r;
    while (s.current < kTrialsPerSession && s.responses[static_cast<std::size_t>(s.current)]) ++s.current;
    return true;
  }

  bool apply_finished(json& ev) {
    Session& s = session_at(ev.at("session_id").get<std::string>());
    if (s.state == SessionState::finished) return false;
    if (s.current < kTrialsPerSession) {
      throw ServiceError(ServiceErrc::invalid_state, "session has unanswered trials");
    }
    const auto& config = studies_.at(s.study_id).config;
    std::map<std::string, std::string> survey;
    if (ev.contains("survey")) ev.at("survey").get_to(survey);
    for (const auto& [key, value] : survey) {
      if (std::find(config.survey_fields.begin(), config.survey_fields.end(), key) == config.survey_fields.end()) {
        throw ServiceError(ServiceErrc::invalid_argument, "unknown survey field '" + key + "'");
      }
    }
    const FinalizeResult result = compute_earnings(s, config.payment);
    if (ev.contains("n_correct")) {
      if (ev.at("n_correct") != result.n_correct || ev.at("earnings_cents") != result.earnings_cents) {
        throw ParseError("session_finished earnings mismatch");
      }
    } else {
      ev["n_correct"] = result.n_correct;
      ev["earnings_cents"] = result.earnings_cents;
    }
    s.attention_check_passed = detail::json_optional<bool>(ev, "attention_check_passed");
    s.survey = std::move(survey);
    s.result = result;
    s.state = SessionState::finished;
    return true;
  }

  void apply_event(json& ev) {
    const auto type = ev.at("type").get<std::string>();
    if (type == "study_created") {
      apply_study_created(ev);
    } else if (type == "session_created") {
      apply_session_created(ev);
    } else if (type == "trial_served") {
      if (!apply_trial_served(ev)) throw ParseError("trial served twice");
    } else if (type == "response_submitted") {
      if (!apply_response(ev)) throw ParseError("duplicate response event");
    } else if (type == "session_finished") {
      if (!apply_finished(ev)) throw ParseError("session finished twice");
    } else {
      throw ParseError("unknown event type '" + type + "'");
    }
  }

  void replay_line(const std::string& line) {
    json ev;
    try {
      ev = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("event log: " + std::string(e.what()));
    }
    const auto seq = ev.at("seq").get<std::uint64_t>();
    if (seq != seq_ + 1) throw ParseError("event log: expected seq " + std::to_string(seq_ + 1));
    try {
      apply_event(ev);
    } catch (const ServiceError& e) {
      throw ParseError("event " + std::to_string(seq) + ": " + e.what());
    }
    seq_ = seq;
    events_.push_back(line);
  }

  void append(json ev) {
    json out{{"seq", seq_ + 1}, {"ts", opt_.clock ? opt_.clock() : std::string()}};
    out.update(ev);
    ++seq_;
    events_.push_back(out.dump());
    if (log_.is_open()) {
      log_ << events_.back() << '\n';
      log_.flush();
      if (opt_.snapshot_every && seq_ % opt_.snapshot_every == 0) write_snapshot();
    }
  }

  json snapshot_locked() const {
    json studies = json::array();
    for (const auto& [id, st] : studies_) {
      studies.push_back({{"study_id", st.study_id},
                         {"master_seed", st.master_seed},
                         {"config", st.config},
                         {"pool_hash", st.pool_hash},
                         {"next_arrival", st.next_arrival}});
    }
    json sessions = json::array();
    for (const auto& [id, s] : sessions_) {
      json responses = json::array();
      for (const auto& r : s.responses) {
        responses.push_back(r ? json{{"reported", r->reported},
                                     {"bonus", r->bonus},
                                     {"magnitude", detail::optional_json(r->magnitude)}}
                              : json(nullptr));
      }
      sessions.push_back({{"session_id", s.session_id},
                          {"study_id", s.study_id},
                          {"arrival", s.arrival},
                          {"served", s.served},
                          {"responses", responses},
                          {"state", s.state},
                          {"current", s.current},
                          {"attention_check_passed", detail::optional_json(s.attention_check_passed)},
                          {"survey", s.survey},
                          {"result", s.result ? finalize_view(*s.result) : json(nullptr)}});
    }
    return json{{"seq", seq_}, {"studies", studies}, {"sessions", sessions}};
  }

  void restore_locked(const json& snap) {
    if (!studies_.empty() || seq_ != 0) throw DomainError("restore: service is not empty");
    for (const auto& j : snap.at("studies")) {
      json ev{{"study_id", j.at("study_id")},
              {"master_seed", j.at("master_seed")},
              {"config", j.at("config")},
              {"pool_hash", j.at("pool_hash")}};
      apply_study_created(ev);
    }
    std::map<std::string, std::vector<const json*>> by_study;
    for (const auto& j : snap.at("sessions")) by_study[j.at("study_id").get<std::string>()].push_back(&j);
    for (auto& [sid, list] : by_study) {
      Study& st = study_at(sid);
      std::sort(list.begin(), list.end(),
                [](const json* a, const json* b) { return a->at("arrival").get<std::size_t>() < b->at("arrival").get<std::size_t>(); });
      for (const json* jp : list) {
        const json& j = *jp;
        Session s = build_session(st, j.at("arrival").get<std::size_t>());
        if (s.session_id != j.at("session_id").get<std::string>()) throw ParseError("snapshot: session id mismatch");
        j.at("served").get_to(s.served);
        const auto& responses = j.at("responses");
        for (std::size_t k = 0; k < s.responses.size(); ++k) {
          if (responses.at(k).is_null()) continue;
          TrialResponse r;
          responses.at(k).at("reported").get_to(r.reported);
          responses.at(k).at("bonus").get_to(r.bonus);
          r.magnitude = detail::json_optional<double>(responses.at(k), "magnitude");
          s.responses[k] = r;
        }
        j.at("state").get_to(s.state);
        j.at("current").get_to(s.current);
        s.attention_check_passed = detail::json_optional<bool>(j, "attention_check_passed");
        j.at("survey").get_to(s.survey);
        if (!j.at("result").is_null()) {
          s.result = FinalizeResult{j.at("result").at("n_correct").get<int>(), j.at("result").at("earnings_cents").get<int>()};
        }
        st.session_ids.push_back(s.session_id);
        sessions_.emplace(s.session_id, std::move(s));
      }
      st.next_arrival = st.session_ids.size();
    }
    for (const auto& j : snap.at("studies")) {
      if (study_at(j.at("study_id").get<std::string>()).next_arrival != j.at("next_arrival").get<std::size_t>()) {
        throw ParseError("snapshot: arrival counter mismatch");
      }
    }
    seq_ = snap.at("seq").get<std::uint64_t>();
  }

  void write_snapshot() const {
    const auto dir = *opt_.data_dir;
    const auto tmp = dir / "snapshot.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << snapshot_locked().dump() << '\n';
    }
    std::filesystem::rename(tmp, dir / "snapshot.json");
  }

  void recover_from_disk() {
    const auto dir = *opt_.data_dir;
    std::filesystem::create_directories(dir);
    std::lock_guard lock(mu_);
    std::uint64_t base = 0;
    if (std::filesystem::exists(dir / "snapshot.json")) {
      std::ifstream in(dir / "snapshot.json");
      restore_locked(json::parse(in));
      base = seq_;
    }
    if (std::filesystem::exists(dir / "events.jsonl")) {
      std::ifstream in(dir / "events.jsonl");
      std::string line;
      while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto seq = json::parse(line).at("seq").get<std::uint64_t>();
        if (seq <= base) {
          events_.push_back(line);
          continue;
        }
        replay_line(line);
      }
    }
    log_.open(dir / "events.jsonl", std::ios::app);
    if (!log_) throw Error("cannot open event log in " + dir.string());
  }
};

}  // namespace rdlab
