#pragma once

// HTTP/JSON front for ExperimentService.
//
//   POST /studies                              {config, master_seed}
//   GET  /studies
//   POST /studies/{id}/sessions
//   GET  /sessions/{id}/trials/{k}
//   POST /sessions/{id}/trials/{k}/response    {reported, bonus, magnitude?}
//   POST /sessions/{id}/finalize               {attention_check_passed?, survey?}
//   GET  /studies/{id}/aggregate               ?exclude_failed_attention=1&type2=average
//   GET  /studies/{id}/export.csv              ?table=power|risk|responses
//   GET  /studies/{id}/graphs/{graph_id}/truth
//   GET  /dgps
//   GET  /lineups/{dgp}/{seed}.svg
//   GET  /lineups/{dgp}/{seed}/answer
//   GET  /health

#include <cstdlib>
#include <memory>
#include <string>
#include <utility>

// Eigen must be parsed before httplib: resolv.h defines a `_res` macro.
#include "rdlab/experiment.hpp"
#include "rdlab/io.hpp"

#include <httplib.h>

namespace rdlab {

inline int http_status(ServiceErrc c) {
  switch (c) {
    case ServiceErrc::invalid_argument: return 400;
    case ServiceErrc::not_found: return 404;
    case ServiceErrc::conflict:
    case ServiceErrc::study_full:
    case ServiceErrc::invalid_state: return 409;
  }
  return 500;
}

inline const char* errc_name(ServiceErrc c) {
  switch (c) {
    case ServiceErrc::invalid_argument: return "invalid_argument";
    case ServiceErrc::not_found: return "not_found";
    case ServiceErrc::conflict: return "conflict";
    case ServiceErrc::study_full: return "study_full";
    case ServiceErrc::invalid_state: return "invalid_state";
  }
  return "internal";
}

struct ListenAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Parses "host:port" or ":port"; the only setting read from the environment.
inline ListenAddress listen_address_from_env(const char* var = "RDLAB_LISTEN") {
  ListenAddress a;
  const char* v = std::getenv(var);
  if (!v || !*v) return a;
  const std::string s(v);
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw DomainError(std::string(var) + ": expected host:port");
  if (colon > 0) a.host = s.substr(0, colon);
  try {
    a.port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw DomainError(std::string(var) + ": bad port");
  }
  if (a.port < 0 || a.port > 65535) throw DomainError(std::string(var) + ": bad port");
  return a;
}

inline TrialResponse parse_trial_response(const json& body) {
  if (!body.is_object() || !body.contains("reported") || !body.at("reported").is_boolean()) {
    throw ServiceError(ServiceErrc::invalid_argument, "body needs a boolean 'reported'");
  }
  TrialResponse r;
  r.reported = body.at("reported").get<bool>();
  const auto bonus = body.value("bonus", std::string());
  if (bonus == "wager") {
    r.bonus = BonusChoice::wager;
  } else if (bonus == "fixed") {
    r.bonus = BonusChoice::fixed;
  } else {
    throw ServiceError(ServiceErrc::invalid_argument, "bonus must be 'wager' or 'fixed'");
  }
  if (body.contains("magnitude") && !body.at("magnitude").is_null()) {
    if (!body.at("magnitude").is_number()) throw ServiceError(ServiceErrc::invalid_argument, "magnitude must be a number");
    r.magnitude = body.at("magnitude").get<double>();
  }
  return r;
}

class HttpServer {
 public:
  explicit HttpServer(ExperimentService& svc) : svc_(svc) { routes(); }

  httplib::Server& raw() { return srv_; }

  bool listen(const ListenAddress& a) { return srv_.listen(a.host, a.port); }
  int bind_any(const std::string& host = "127.0.0.1") { return srv_.bind_to_any_port(host); }
  bool listen_after_bind() { return srv_.listen_after_bind(); }
  void stop() { srv_.stop(); }
  void wait_until_ready() const { srv_.wait_until_ready(); }

 private:
  ExperimentService& svc_;
  httplib::Server srv_;

  static void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    send_json(res, json{{"error", code}, {"message", msg}}, status);
  }

  static json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw ServiceError(ServiceErrc::invalid_argument, std::string("malformed JSON body: ") + e.what());
    }
  }

  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ServiceError& e) {
        send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "invalid_argument", e.what());
      } catch (const ParseError& e) {
        send_error(res, 400, "invalid_argument", e.what());
      } catch (const DomainError& e) {
        send_error(res, 400, "invalid_argument", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  static int trial_index(const std::string& s) {
    try {
      return std::stoi(s);
    } catch (const std::exception&) {
      throw ServiceError(ServiceErrc::not_found, "bad trial index");
    }
  }

  static std::uint64_t parse_seed(const std::string& s) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ServiceError(ServiceErrc::invalid_argument, "bad seed '" + s + "'");
    }
  }

  static AggregateOptions aggregate_options(const httplib::Request& req) {
    AggregateOptions o;
    auto flag = [&](const char* key) {
      const auto v = req.get_param_value(key);
      return v == "1" || v == "true";
    };
    o.exclude_failed_attention = flag("exclude_failed_attention");
    o.include_unfinished = flag("include_unfinished");
    const auto t2 = req.get_param_value("type2");
    if (t2 == "average") {
      o.type2 = Type2Mode::average_nonzero;
    } else if (!t2.empty() && t2 != "modal") {
      throw ServiceError(ServiceErrc::invalid_argument, "type2 must be 'modal' or 'average'");
    }
    return o;
  }

  void routes() {
    srv_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    srv_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    srv_.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"status", "ok"}}); });

    srv_.Get("/dgps", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& [id, src] : svc_.registry()) {
        out.push_back({{"id", id}, {"sigma", src.dgp.sigma}, {"n", src.dgp.n}, {"observed", src.observed.has_value()}});
      }
      send_json(res, out);
    }));

    srv_.Post("/studies", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_json(req);
      if (!body.contains("config")) throw ServiceError(ServiceErrc::invalid_argument, "body needs 'config'");
      const auto config = body.at("config").get<StudyConfig>();
      const auto seed = body.value("master_seed", std::uint64_t{1});
      const auto id = svc_.create_study(config, seed);
      const auto st = svc_.study(id);
      send_json(res,
                {{"study_id", id}, {"capacity", st.capacity()}, {"pool_size", st.pool->size()}, {"pool_hash", st.pool_hash}},
                201);
    }));

    srv_.Get("/studies", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, svc_.study_ids());
    }));

    srv_.Post(R"(/studies/([^/]+)/sessions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, svc_.open_session(req.matches[1]), 201);
    }));

    srv_.Get(R"(/sessions/([^/]+)/trials/(-?\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, svc_.get_trial(req.matches[1], trial_index(req.matches[2])));
    }));

    srv_.Post(R"(/sessions/([^/]+)/trials/(-?\d+)/response)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto r = parse_trial_response(body_json(req));
                send_json(res, svc_.submit_response(req.matches[1], trial_index(req.matches[2]), r));
              }));

    srv_.Post(R"(/sessions/([^/]+)/finalize)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_json(req);
      ExitSurvey survey;
      if (body.contains("attention_check_passed") && !body.at("attention_check_passed").is_null()) {
        survey.attention_check_passed = body.at("attention_check_passed").get<bool>();
      }
      if (body.contains("survey")) body.at("survey").get_to(survey.fields);
      send_json(res, svc_.finalize_session(req.matches[1], survey));
    }));

    srv_.Get(R"(/studies/([^/]+)/aggregate)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, aggregate_json(svc_.aggregate(req.matches[1], aggregate_options(req))));
    }));

    srv_.Get(R"(/studies/([^/]+)/export\.csv)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto table = export_table_from_name(req.get_param_value("table"));
      res.set_content(svc_.export_csv(req.matches[1], table, aggregate_options(req)), "text/csv");
    }));

    srv_.Get(R"(/studies/([^/]+)/graphs/([^/]+)/truth)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, svc_.graph_truth(req.matches[1], req.matches[2]));
             }));

    srv_.Get(R"(/lineups/([^/]+)/(\d+)\.svg)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(svc_.lineup(req.matches[1], parse_seed(req.matches[2])).svg, "image/svg+xml");
    }));

    srv_.Get(R"(/lineups/([^/]+)/(\d+)/answer)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string dgp = req.matches[1];
      if (svc_.registry().find(dgp) == svc_.registry().end()) {
        throw ServiceError(ServiceErrc::not_found, "unknown DGP '" + dgp + "'");
      }
      const int slot = lineup_answer_slot(parse_seed(req.matches[2]));
      send_json(res, {{"answer", slot + 1}, {"row", slot / style::lineup_cols + 1}, {"col", slot % style::lineup_cols + 1}});
    }));
  }
};

}  // namespace rdlab
