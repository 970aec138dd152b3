#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rdlab/bundled.hpp"
#include "rdlab/experiment.hpp"
#include "rdlab/io.hpp"
#include "rdlab/montecarlo.hpp"
#include "rdlab/plot.hpp"
#include "rdlab/server.hpp"

using namespace rdlab;

namespace {

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

bool is_bundled(const std::string& name) {
  const auto& names = bundled_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

// A bundled example name or a DGP JSON file.
Dgp load_dgp(const std::string& source) {
  if (std::filesystem::is_regular_file(source)) return read_dgp_file(source);
  if (is_bundled(source)) return bundled_dgp(source);
  throw DomainError("unknown DGP '" + source + "' (not a file or bundled example)");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_dataset_csv(in);
}

struct ServeConfig {
  ServiceOptions options;
  std::shared_ptr<const DgpRegistry> registry;
};

// {
//   "data_dir": "state", "snapshot_every": 500, "threads": 0,
//   "dgps": [{"file": "my_dgp.json"},
//            {"id": "mine", "microdata": "mine.csv", "cutoff": 0.5, "semi_discrete": false}]
// }
ServeConfig load_config(const std::string& path) {
  ServeConfig c;
  auto reg = std::make_shared<DgpRegistry>(bundled_registry());
  if (path.empty()) {
    c.registry = reg;
    return c;
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_absolute() || base.empty() ? fp : base / fp).string();
  };
  for (const auto& [key, v] : j.items()) {
    if (key != "data_dir" && key != "snapshot_every" && key != "threads" && key != "dgps") {
      throw ParseError(path + ": unknown key '" + key + "'");
    }
  }
  if (j.contains("data_dir")) c.options.data_dir = resolve(j.at("data_dir").get<std::string>());
  c.options.snapshot_every = j.value("snapshot_every", c.options.snapshot_every);
  c.options.threads = j.value("threads", 0U);
  for (const auto& d : j.value("dgps", json::array())) {
    if (d.contains("file")) {
      auto dgp = read_dgp_file(resolve(d.at("file").get<std::string>()));
      const auto id = d.value("id", dgp.id);
      dgp.id = id;
      (*reg)[id] = DgpSource{std::move(dgp), std::nullopt};
    } else if (d.contains("microdata")) {
      const auto micro = read_microdata_csv_file(resolve(d.at("microdata").get<std::string>()), d.value("cutoff", 0.0),
                                                 d.value("semi_discrete", false));
      CalibrationOptions opt;
      opt.id = d.at("id").get<std::string>();
      (*reg)[opt.id] = DgpSource{calibrate_dgp(micro, opt), observed_dataset(micro, opt.normalization, opt.id)};
    } else {
      throw ParseError(path + ": each dgps entry needs 'file' or 'microdata'");
    }
  }
  c.registry = reg;
  return c;
}

const std::map<std::string, Method> kMethods{
    {"pq", Method::pq}, {"ik", Method::ik}, {"cct", Method::cct}, {"ak", Method::ak}};

// "auto" leaves C_T to the rule-of-thumb bound.
std::optional<double> parse_ct(const std::string& s) {
  if (s.empty() || s == "auto") return std::nullopt;
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw DomainError("--ct must be 'auto' or a number");
  }
}

GraphicalParams graphical_params(const std::string& bins, const std::string& spacing, std::optional<int> fit_order,
                                 bool no_vline, const std::string& y_scale) {
  GraphicalParams g;
  g.bin_selector = bins == "mv" ? BinSelector::mv : BinSelector::imse;
  g.spacing = spacing == "quantile" ? Spacing::quantile : Spacing::even;
  g.fit_order = fit_order;
  g.vertical_line = !no_vline;
  g.y_scale = y_scale == "doubled" ? YScale::doubled : YScale::default_range;
  g.validate();
  return g;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regression-discontinuity visual inference lab"};
  app.require_subcommand(1);

  // calibrate ---------------------------------------------------------------
  auto* cal = app.add_subcommand("calibrate", "Fit a DGP to x,y microdata and write it as JSON");
  std::string cal_input, cal_out, cal_id = "dgp", cal_cef = "quintic", cal_noise = "homoskedastic",
                         cal_norm = "per_side";
  double cal_cutoff = 0.0;
  bool cal_semi = false;
  std::uint64_t cal_jitter = 0x5EED;
  cal->add_option("-i,--input", cal_input, "CSV with header x,y")->required()->check(CLI::ExistingFile);
  cal->add_option("--cutoff", cal_cutoff, "Cutoff on the raw running variable")->required();
  cal->add_flag("--semi-discrete", cal_semi, "Jitter a running variable with few support points");
  cal->add_option("--id", cal_id, "DGP identifier");
  cal->add_option("--cef", cal_cef, "CEF form")->check(CLI::IsMember({"quintic", "local_linear"}));
  cal->add_option("--noise", cal_noise, "Error law")->check(CLI::IsMember({"homoskedastic", "fan_yao"}));
  cal->add_option("--normalization", cal_norm)->check(CLI::IsMember({"per_side", "single_scale"}));
  cal->add_option("--jitter-seed", cal_jitter);
  cal->add_option("-o,--output", cal_out, "Output path (default stdout)");

  // sample ------------------------------------------------------------------
  auto* smp = app.add_subcommand("sample", "Draw one simulated dataset as x,y CSV");
  std::string smp_dgp, smp_out;
  double smp_d = 0.0;
  std::uint64_t smp_seed = 1;
  std::optional<double> smp_noise_scale;
  bool smp_fixed_x = false;
  smp->add_option("--dgp", smp_dgp, "Bundled example name or DGP JSON file")->required();
  smp->add_option("-d,--d-multiple", smp_d, "Discontinuity in units of sigma");
  smp->add_option("--seed", smp_seed);
  smp->add_option("--noise-scale", smp_noise_scale, "Multiply the noise draw");
  smp->add_flag("--fixed-x", smp_fixed_x, "Use the running-variable pool as-is");
  smp->add_option("-o,--output", smp_out);

  // plot --------------------------------------------------------------------
  auto* plt = app.add_subcommand("plot", "Render a binned RD scatter plot as SVG");
  std::string plt_dgp, plt_input, plt_out, plt_truth, plt_bins = "imse", plt_spacing = "even", plt_y = "default";
  double plt_d = 0.0;
  std::uint64_t plt_seed = 1;
  std::optional<int> plt_fit;
  bool plt_no_vline = false;
  auto* plt_dgp_opt = plt->add_option("--dgp", plt_dgp, "Simulate from this DGP");
  auto* plt_in_opt = plt->add_option("-i,--input", plt_input, "Plot a normalized x,y CSV instead")->check(CLI::ExistingFile);
  plt_dgp_opt->excludes(plt_in_opt);
  plt->add_option("-d,--d-multiple", plt_d);
  plt->add_option("--seed", plt_seed);
  plt->add_option("--bins", plt_bins)->check(CLI::IsMember({"imse", "mv"}));
  plt->add_option("--spacing", plt_spacing)->check(CLI::IsMember({"even", "quantile"}));
  plt->add_option("--fit-order", plt_fit, "Global polynomial fit per side");
  plt->add_flag("--no-vertical-line", plt_no_vline);
  plt->add_option("--y-scale", plt_y)->check(CLI::IsMember({"default", "doubled"}));
  plt->add_option("--truth", plt_truth, "Write the truth sidecar JSON here");
  plt->add_option("-o,--output", plt_out);

  // lineup ------------------------------------------------------------------
  auto* lu = app.add_subcommand("lineup", "Render a 4x5 lineup hiding the real data among null draws");
  std::string lu_dgp, lu_input, lu_out, lu_answer;
  std::uint64_t lu_seed = 1;
  lu->add_option("--dgp", lu_dgp, "DGP for the null panels")->required();
  lu->add_option("-i,--input", lu_input, "Real-data panel as normalized x,y CSV")->check(CLI::ExistingFile);
  lu->add_option("--seed", lu_seed);
  lu->add_option("--answer", lu_answer, "Write the answer key JSON here");
  lu->add_option("-o,--output", lu_out);

  // infer -------------------------------------------------------------------
  auto* inf = app.add_subcommand("infer", "Run one RD inference procedure on a dataset");
  std::string inf_method, inf_input, inf_ct = "auto", inf_out;
  double inf_level = 0.05;
  std::optional<double> inf_crit;
  bool inf_weights = false;
  inf->add_option("--method", inf_method)->required()->check(CLI::IsMember({"pq", "ik", "cct", "ak"}));
  inf->add_option("-i,--input", inf_input, "Normalized x,y CSV")->required()->check(CLI::ExistingFile);
  inf->add_option("--level", inf_level)->check(CLI::Range(0.0, 1.0));
  inf->add_option("--ct", inf_ct, "AK smoothness bound, or 'auto'");
  inf->add_option("--crit", inf_crit, "Override the critical value (t scale)");
  inf->add_flag("--weights", inf_weights, "Include the estimator weights");
  inf->add_option("-o,--output", inf_out);

  // montecarlo --------------------------------------------------------------
  auto* mc = app.add_subcommand("montecarlo", "Size, power and coverage by simulation");
  std::string mc_dgp, mc_ct = "auto", mc_format = "csv", mc_out;
  std::vector<std::string> mc_methods{"pq", "ik", "cct", "ak"};
  std::vector<double> mc_d{0.0};
  int mc_reps = 1000;
  std::uint64_t mc_seed = 1;
  unsigned mc_threads = 0;
  double mc_level = 0.05;
  std::optional<double> mc_crit;
  mc->add_option("--dgp", mc_dgp)->required();
  mc->add_option("--methods", mc_methods)->delimiter(',')->check(CLI::IsMember({"pq", "ik", "cct", "ak"}));
  mc->add_option("-d,--d-multiples", mc_d)->delimiter(',');
  mc->add_option("--reps", mc_reps)->check(CLI::PositiveNumber);
  mc->add_option("--seed", mc_seed);
  mc->add_option("--threads", mc_threads);
  mc->add_option("--level", mc_level)->check(CLI::Range(0.0, 1.0));
  mc->add_option("--ct", mc_ct);
  mc->add_option("--crit", mc_crit);
  mc->add_option("--format", mc_format)->check(CLI::IsMember({"csv", "json"}));
  mc->add_option("-o,--output", mc_out);

  // serve -------------------------------------------------------------------
  auto* srv = app.add_subcommand("serve", "Run the experiment service (listen address from RDLAB_LISTEN)");
  std::string srv_config;
  srv->add_option("-c,--config", srv_config, "Service config JSON")->check(CLI::ExistingFile);

  // aggregate ---------------------------------------------------------------
  auto* agg = app.add_subcommand("aggregate", "Replay an event log and print study results");
  std::string agg_events, agg_config, agg_study, agg_table = "json", agg_type2 = "modal", agg_out;
  bool agg_excl = false, agg_unfinished = false;
  agg->add_option("--events", agg_events, "events.jsonl")->required()->check(CLI::ExistingFile);
  agg->add_option("-c,--config", agg_config, "Service config JSON (for extra DGPs)")->check(CLI::ExistingFile);
  agg->add_option("--study", agg_study, "Study id (default: every study)");
  agg->add_option("--table", agg_table)->check(CLI::IsMember({"json", "power", "risk", "responses"}));
  agg->add_flag("--exclude-failed-attention", agg_excl);
  agg->add_flag("--include-unfinished", agg_unfinished);
  agg->add_option("--type2", agg_type2)->check(CLI::IsMember({"modal", "average"}));
  agg->add_option("-o,--output", agg_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cal) {
      CalibrationOptions opt;
      opt.id = cal_id;
      opt.cef_kind = cal_cef == "local_linear" ? CefKind::local_linear : CefKind::piecewise_quintic;
      opt.noise_kind = cal_noise == "fan_yao" ? NoiseKind::fan_yao : NoiseKind::homoskedastic;
      opt.normalization = cal_norm == "single_scale" ? Normalization::single_scale : Normalization::per_side;
      opt.jitter_seed = cal_jitter;
      const auto dgp = calibrate_dgp(read_microdata_csv_file(cal_input, cal_cutoff, cal_semi), opt);
      emit(cal_out, json(dgp).dump(2) + "\n");
    } else if (*smp) {
      SampleOptions opt;
      opt.noise_scale = smp_noise_scale;
      opt.fixed_x = smp_fixed_x;
      std::ostringstream out;
      write_dataset_csv(out, sample_dataset(load_dgp(smp_dgp), smp_d, smp_seed, opt));
      emit(smp_out, out.str());
    } else if (*plt) {
      if (plt_dgp.empty() && plt_input.empty()) throw DomainError("plot needs --dgp or --input");
      const auto gamma = graphical_params(plt_bins, plt_spacing, plt_fit, plt_no_vline, plt_y);
      if (!plt_input.empty()) {
        emit(plt_out, render_rd_plot(load_dataset(plt_input), gamma).svg);
      } else {
        const auto dgp = load_dgp(plt_dgp);
        const auto g = render_rd_plot(sample_dataset(dgp, plt_d, plt_seed), gamma);
        emit(plt_out, g.svg);
        if (!plt_truth.empty()) {
          json truth = GraphTruth{"", dgp.id, plt_d, plt_seed, gamma};
          truth.erase("graph_id");
          emit(plt_truth, truth.dump(2) + "\n");
        }
      }
    } else if (*lu) {
      const auto dgp = load_dgp(lu_dgp);
      Dataset real;
      if (!lu_input.empty()) {
        real = load_dataset(lu_input);
      } else if (is_bundled(lu_dgp)) {
        real = observed_dataset(bundled_microdata(lu_dgp), Normalization::per_side, lu_dgp);
      } else {
        real = sample_dataset(dgp, 0.0, derive_seed(lu_seed, 0xB5E));
      }
      const auto l = render_lineup(real, dgp, lu_seed);
      emit(lu_out, l.svg);
      if (!lu_answer.empty()) {
        emit(lu_answer, json{{"answer", l.answer}, {"row", l.answer_row}, {"col", l.answer_col}}.dump() + "\n");
      }
    } else if (*inf) {
      InferenceOptions opt;
      opt.level = inf_level;
      opt.critical_value = inf_crit;
      opt.c_t = parse_ct(inf_ct);
      const auto r = run_inference(kMethods.at(inf_method), load_dataset(inf_input), opt);
      emit(inf_out, inference_json(r, inf_weights).dump(2) + "\n");
    } else if (*mc) {
      MonteCarloSpec spec;
      spec.methods.clear();
      for (const auto& m : mc_methods) spec.methods.push_back(kMethods.at(m));
      spec.d_multiples = mc_d;
      spec.reps = mc_reps;
      spec.seed = mc_seed;
      spec.threads = mc_threads;
      spec.inference.level = mc_level;
      spec.inference.critical_value = mc_crit;
      spec.inference.c_t = parse_ct(mc_ct);
      const auto r = run_monte_carlo(load_dgp(mc_dgp), spec);
      emit(mc_out, mc_format == "json" ? monte_carlo_json(r).dump(2) + "\n" : monte_carlo_csv(r));
    } else if (*srv) {
      const auto cfg = load_config(srv_config);
      const auto addr = listen_address_from_env();
      ExperimentService svc(cfg.registry, cfg.options);
      HttpServer server(svc);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "rdlab: listening on " << addr.host << ':' << addr.port << std::endl;
      if (!server.listen(addr)) {
        std::cerr << "rdlab: cannot listen on " << addr.host << ':' << addr.port << std::endl;
        return 1;
      }
    } else if (*agg) {
      auto cfg = load_config(agg_config);
      cfg.options.data_dir.reset();
      ExperimentService svc(cfg.registry, cfg.options);
      std::ifstream in(agg_events);
      svc.replay(in);
      AggregateOptions opt;
      opt.exclude_failed_attention = agg_excl;
      opt.include_unfinished = agg_unfinished;
      if (agg_type2 == "average") opt.type2 = Type2Mode::average_nonzero;
      std::vector<std::string> ids = agg_study.empty() ? svc.study_ids() : std::vector<std::string>{agg_study};
      if (agg_table == "json") {
        json out = json::array();
        for (const auto& id : ids) out.push_back(aggregate_json(svc.aggregate(id, opt)));
        emit(agg_out, (agg_study.empty() ? out : out.at(0)).dump(2) + "\n");
      } else {
        if (ids.size() != 1) throw DomainError("--table needs --study when the log holds several studies");
        emit(agg_out, svc.export_csv(ids.front(), export_table_from_name(agg_table), opt));
      }
    }
  } catch (const ServiceError& e) {
    std::cerr << "rdlab: " << errc_name(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "rdlab: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
