// icmse: benchmark harness, model fitting, proposals and the campaign server.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "icmse/http.hpp"

using namespace icmse;

namespace {

double parse_limit(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "none") return std::numeric_limits<double>::infinity();
  return detail::parse_double(s, "censor-limit");
}

std::vector<Method> parse_methods(const std::string& s) {
  if (s == "all") return {Method::ICMSE, Method::IMSE_Impute, Method::IMSE_Cen, Method::SeqMaxPro};
  std::vector<Method> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(method_from_string(tok));
  if (out.empty()) throw ValidationError("method", "no method given");
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("out", "cannot write " + path);
  return out;
}

struct SimulateArgs {
  std::string problem = "1d-bi";
  std::string method = "icmse";
  int n_ini = -1;
  int n_seq = -1;
  int reps = 1;
  std::uint64_t seed = 1;
  int restarts = 10;
  std::string noise = "known";
  bool record_time = false;
  bool verbose = false;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  const Problem pr = make_problem(problem_from_string(a.problem));
  const std::vector<Method> methods = parse_methods(a.method);
  if (a.reps < 1) throw ValidationError("reps", "reps must be at least 1");
  if (a.noise != "known" && a.noise != "estimated") {
    throw ValidationError("noise", "noise must be 'known' or 'estimated'");
  }
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& os = a.out.empty() ? std::cout : file;
  write_benchmark_header(os);
  for (Method m : methods) {
    for (int r = 1; r <= a.reps; ++r) {
      DesignConfig cfg;
      cfg.method = m;
      cfg.n_ini = a.n_ini > 0 ? a.n_ini : (pr.p == 1 ? 6 : 12);
      cfg.n_seq = a.n_seq >= 0 ? a.n_seq : (pr.p == 1 ? 20 : 15);
      cfg.restarts = a.restarts;
      cfg.seed = replication_seed(a.seed, r);
      cfg.record_time = a.record_time;
      if (a.noise == "known") cfg.noise_var = pr.noise_sd * pr.noise_sd;
      const CampaignHistory h = run_campaign_sim(pr, cfg);
      write_benchmark_rows(os, m, r, h);
      os.flush();
      if (a.verbose) {
        std::cerr << to_string(m) << " replication " << r << ": " << h.metrics_per_step.size()
                  << " steps";
        if (!h.metrics_per_step.empty()) std::cerr << ", rmse " << h.metrics_per_step.back().rmse;
        std::cerr << '\n';
      }
      if (!h.termination.empty()) {
        std::cerr << to_string(m) << " replication " << r << " stopped early: " << h.termination << '\n';
      }
    }
  }
  return 0;
}

struct FitArgs {
  std::string data;
  std::string limit = "inf";
  std::string mode = "auto";
  std::string out;
  double noise_var = -1.0;
  int restarts = 5;
  std::uint64_t seed = 0;
};

int run_fit(const FitArgs& a) {
  const double c = parse_limit(a.limit);
  const auto data = read_observations_csv(a.data, c);
  ModelMode mode;
  if (a.mode == "auto") {
    bool computer = false;
    for (const auto& o : data) computer |= o.fidelity == Fidelity::Computer;
    mode = computer ? ModelMode::CensoredBiFidelity : ModelMode::CensoredSingle;
  } else {
    mode = mode_from_string(a.mode);
  }
  FitConfig fc;
  fc.restarts = a.restarts;
  fc.seed = a.seed;
  if (a.noise_var >= 0.0) fc.noise_var = a.noise_var;
  const FittedModel m = fit_mle(data, c, mode, fc);
  const std::string doc = to_json_value(m).dump(2);
  if (a.out.empty()) {
    std::cout << doc << '\n';
  } else {
    open_out(a.out) << doc << '\n';
  }
  return 0;
}

struct ProposeArgs {
  std::string model;
  std::string method = "icmse";
  int restarts = 10;
  std::uint64_t seed = 0;
};

int run_propose(const ProposeArgs& a) {
  std::ifstream in(a.model);
  if (!in) throw ValidationError("model", "cannot open " + a.model);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("model", std::string("model file is not JSON: ") + e.what());
  }
  const FittedModel m = model_from_json(doc);
  DesignConfig cfg;
  cfg.p = m.dim();
  cfg.method = method_from_string(a.method);
  cfg.restarts = a.restarts;
  cfg.seed = a.seed;
  Proposal prop;
  if (cfg.method == Method::IMSE_Impute && m.n_censored > 0) {
    const ModelMode mode =
        m.mode == ModelMode::CensoredBiFidelity ? ModelMode::CensoredBiFidelity : ModelMode::Standard;
    FitConfig fc;
    fc.seed = a.seed;
    fc.noise_var = m.params.noise_var;
    const FittedModel mi = fit_mle(impute_censored(m.data, m.censor_limit), m.censor_limit, mode, fc);
    prop = propose_next(mi, cfg.method, cfg, Matrix(), a.seed);
  } else {
    prop = propose_next(m, cfg.method, cfg, detail::design_inputs(m.data, m.dim()), a.seed);
  }
  json out = to_json_value(prop.eval);
  out["x"] = to_json_value(prop.x);
  out["lambda_point"] = censoring_probability(m, prop.x);
  std::cout << out.dump() << '\n';
  return 0;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store;
};

httplib::Server* g_server = nullptr;

int run_serve(const ServeArgs& a) {
  CampaignService svc(a.store.empty() ? CampaignService::default_root() : std::filesystem::path(a.store));
  httplib::Server srv;
  install_routes(srv, svc);
  g_server = &srv;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  int port = a.port;
  if (port == 0) {
    port = srv.bind_to_any_port(a.host);
    if (port < 0) throw Error("cannot bind " + a.host);
    std::cout << "listening on " << a.host << ':' << port << std::endl;
    srv.listen_after_bind();
  } else {
    if (!srv.bind_to_port(a.host, port)) throw Error("cannot bind " + a.host + ":" + std::to_string(port));
    std::cout << "listening on " << a.host << ':' << port << std::endl;
    srv.listen_after_bind();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential design under right-censoring"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "run benchmark campaigns and write a results CSV");
  s->add_option("--problem", sim.problem, "1d-single, 1d-bi or 2d-bi")->capture_default_str();
  s->add_option("--method", sim.method, "icmse, imse-impute, imse-cen, seqmaxpro, a comma list or all")
      ->capture_default_str();
  s->add_option("--n-ini", sim.n_ini, "initial runs (problem default when omitted)");
  s->add_option("--n-seq", sim.n_seq, "sequential runs (problem default when omitted)");
  s->add_option("--reps", sim.reps, "replications")->capture_default_str();
  s->add_option("--seed", sim.seed, "base seed")->capture_default_str();
  s->add_option("--restarts", sim.restarts, "optimiser restarts per proposal")->capture_default_str();
  s->add_option("--noise", sim.noise, "known or estimated noise variance")->capture_default_str();
  s->add_flag("--record-time", sim.record_time, "fill the seconds column");
  s->add_flag("-v,--verbose", sim.verbose, "progress on stderr");
  s->add_option("--out", sim.out, "output CSV (stdout when omitted)");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "fit a model to an observation CSV");
  f->add_option("--data", fit.data, "observation CSV")->required();
  f->add_option("--censor-limit", fit.limit, "censoring limit c, or inf")->capture_default_str();
  f->add_option("--mode", fit.mode, "auto, standard, censored or bifidelity")->capture_default_str();
  f->add_option("--noise-var", fit.noise_var, "known noise variance (estimated when omitted)");
  f->add_option("--restarts", fit.restarts, "likelihood optimiser restarts")->capture_default_str();
  f->add_option("--seed", fit.seed)->capture_default_str();
  f->add_option("--out", fit.out, "model JSON (stdout when omitted)");

  ProposeArgs prop;
  auto* p = app.add_subcommand("propose", "propose the next run from a model JSON");
  p->add_option("--model", prop.model, "model JSON from fit")->required();
  p->add_option("--method", prop.method)->capture_default_str();
  p->add_option("--restarts", prop.restarts)->capture_default_str();
  p->add_option("--seed", prop.seed)->capture_default_str();

  ServeArgs srv;
  auto* v = app.add_subcommand("serve", "HTTP campaign service");
  v->add_option("--host", srv.host)->capture_default_str();
  v->add_option("--port", srv.port, "0 picks a free port")->capture_default_str();
  v->add_option("--store", srv.store, "campaign directory (ICMSE_STORE, default ./campaigns)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*s) return run_simulate(sim);
    if (*f) return run_fit(fit);
    if (*p) return run_propose(prop);
    if (*v) return run_serve(srv);
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
