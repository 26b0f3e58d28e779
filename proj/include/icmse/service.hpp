#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "icmse/io.hpp"

namespace icmse {

enum class CampaignStatus { AwaitingObservation, ReadyToPropose, Failed };

inline const char* to_string(CampaignStatus s) {
  switch (s) {
    case CampaignStatus::AwaitingObservation: return "AwaitingObservation";
    case CampaignStatus::ReadyToPropose: return "ReadyToPropose";
    case CampaignStatus::Failed: return "Failed";
  }
  return "?";
}

/// Above this the proposal is flagged as likely to come back censored.
inline constexpr double kHighCensoringRisk = 0.5;

struct IssuedProposal {
  Vector x;
  bool initial = false;  // part of the initial design
  std::optional<CriterionEval> eval;
  double lambda_point = 0.0;
  int observation = -1;  // index of the answering observation, -1 while pending
};

struct Campaign {
  std::string id;
  std::string created_at;
  DesignConfig config;
  std::vector<Observation> observations;
  std::vector<IssuedProposal> proposals;
  std::optional<FittedModel> model;
  std::string last_error;
  bool fit_failed = false;
  std::set<std::string> tokens;
  std::int64_t seq = 0;

  bool pending_initial() const {
    for (const auto& p : proposals) {
      if (p.initial && p.observation < 0) return true;
    }
    return false;
  }
  int pending_sequential() const {
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      if (!proposals[i].initial && proposals[i].observation < 0) return static_cast<int>(i);
    }
    return -1;
  }
  CampaignStatus status() const {
    if (fit_failed) return CampaignStatus::Failed;
    if (pending_initial() || pending_sequential() >= 0 || !model) {
      return CampaignStatus::AwaitingObservation;
    }
    return CampaignStatus::ReadyToPropose;
  }
  int n_censored() const {
    int k = 0;
    for (const auto& o : observations) k += o.censored;
    return k;
  }
};

struct EventRecord {
  std::int64_t seq = 0;
  std::string timestamp;
  std::string kind;  // Created, ObservationAdded, ProposalIssued, ModelRefit, Error
  json payload;
};

inline json to_json_value(const EventRecord& e) {
  return json{{"seq", e.seq}, {"timestamp", e.timestamp}, {"kind", e.kind}, {"payload", e.payload}};
}

inline EventRecord event_from_json(const json& j) {
  return {j.at("seq").get<std::int64_t>(), j.at("timestamp").get<std::string>(),
          j.at("kind").get<std::string>(), j.at("payload")};
}

inline json campaign_document(const Campaign& c) {
  json obs = json::array();
  for (const auto& o : c.observations) obs.push_back(to_json_value(o));
  json props = json::array();
  for (const auto& p : c.proposals) {
    json jp{{"x", to_json_value(p.x)}, {"initial", p.initial}};
    jp["observation"] = p.observation >= 0 ? json(p.observation) : json(nullptr);
    if (p.eval) {
      json d = to_json_value(*p.eval);
      d["lambda_point"] = p.lambda_point;
      d["high_censoring_risk"] = p.lambda_point > kHighCensoringRisk;
      jp["diagnostics"] = d;
    }
    props.push_back(std::move(jp));
  }
  json doc{{"id", c.id},
           {"created_at", c.created_at},
           {"status", to_string(c.status())},
           {"config", to_json_value(c.config)},
           {"observations", std::move(obs)},
           {"proposals", std::move(props)},
           {"n_observations", c.observations.size()},
           {"n_censored", c.n_censored()},
           {"seq", c.seq}};
  doc["model"] = c.model ? to_json_value(*c.model) : json(nullptr);
  doc["last_error"] = c.last_error.empty() ? json(nullptr) : json(c.last_error);
  return doc;
}

namespace detail {

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

inline std::string new_uuid() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}() ^
                             static_cast<std::uint64_t>(
                                 std::chrono::steady_clock::now().time_since_epoch().count())};
  std::lock_guard<std::mutex> lock(mu);
  std::uint64_t a = rng(), b = rng();
  a = (a & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
  b = (b & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(a >> 32),
                static_cast<unsigned>((a >> 16) & 0xffff), static_cast<unsigned>(a & 0xffff),
                static_cast<unsigned>(b >> 48),
                static_cast<unsigned long long>(b & 0xffffffffffffULL));
  return buf;
}

inline bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char ch : id) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-')) return false;
  }
  return true;
}

/// State transition shared by live operations and log replay.
inline void apply_event(Campaign& c, const EventRecord& e) {
  if (e.seq != c.seq + 1) {
    throw NumericalError("event log out of order at seq " + std::to_string(e.seq));
  }
  c.seq = e.seq;
  const json& pl = e.payload;
  if (e.kind == "Created") {
    c.id = pl.at("id").get<std::string>();
    c.created_at = e.timestamp;
    c.config = design_config_from_json(pl.at("config"));
    for (const auto& o : pl.at("initial_observations")) c.observations.push_back(observation_from_json(o));
    for (const auto& x : pl.at("initial_design")) {
      IssuedProposal p;
      p.x = vector_from_json(x, "initial_design");
      p.initial = true;
      c.proposals.push_back(std::move(p));
    }
  } else if (e.kind == "ObservationAdded") {
    c.observations.push_back(observation_from_json(pl.at("observation")));
    const int idx = static_cast<int>(c.observations.size()) - 1;
    if (pl.contains("token") && pl["token"].is_string()) c.tokens.insert(pl["token"].get<std::string>());
    if (pl.contains("attributed") && pl["attributed"].is_number_integer()) {
      c.proposals.at(pl["attributed"].get<std::size_t>()).observation = idx;
    }
  } else if (e.kind == "ModelRefit") {
    c.model = model_from_json(pl.at("model"));
    c.fit_failed = false;
    c.last_error.clear();
  } else if (e.kind == "ProposalIssued") {
    IssuedProposal p;
    p.x = vector_from_json(pl.at("x"), "x");
    p.eval = criterion_eval_from_json(pl.at("diagnostics"));
    p.lambda_point = pl.at("lambda_point").get<double>();
    c.proposals.push_back(std::move(p));
  } else if (e.kind == "Error") {
    c.last_error = pl.at("message").get<std::string>();
    if (pl.value("during", std::string()) == "refit") {
      c.fit_failed = true;
      c.model.reset();
    }
  } else {
    throw ValidationError("kind", "unknown event kind '" + e.kind + "'");
  }
}

inline Matrix regular_grid(int per_axis, int p) {
  if (per_axis < 2) throw ValidationError("n", "grid needs at least 2 points per axis");
  Eigen::Index total = 1;
  for (int l = 0; l < p; ++l) total *= per_axis;
  if (total > 100000) throw ValidationError("n", "grid too large");
  Matrix g(total, p);
  for (Eigen::Index i = 0; i < total; ++i) {
    Eigen::Index r = i;
    for (int l = 0; l < p; ++l) {
      g(i, l) = static_cast<double>(r % per_axis) / (per_axis - 1);
      r /= per_axis;
    }
  }
  return g;
}

}  // namespace detail

struct SubmitResult {
  json campaign;
  bool normalized = false;
  std::vector<std::string> warnings;
};

struct ProposalView {
  Vector x;
  CriterionEval eval;
  double lambda_point = 0.0;
  bool cached = false;
};

struct PointPrediction {
  double mean = 0.0;
  double var = 0.0;
  double lambda_point = 0.0;
};

/// Campaign store rooted at a directory: one sub-directory per campaign with an
/// append-only events.jsonl and a campaign.json snapshot.
class CampaignService {
 public:
  explicit CampaignService(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  static std::filesystem::path default_root() {
    const char* env = std::getenv("ICMSE_STORE");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("campaigns");
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  json create_campaign(const DesignConfig& cfg,
                       const std::optional<std::vector<Observation>>& initial = std::nullopt) {
    cfg.validate();
    json init_obs = json::array();
    json design = json::array();
    if (initial && !initial->empty()) {
      if (initial->size() < 2) {
        throw ValidationError("initial_observations", "need at least two initial observations");
      }
      for (const auto& o : *initial) init_obs.push_back(to_json_value(check_observation(cfg, o).first));
    } else {
      const Matrix d = initial_design(cfg.n_ini, cfg.p, cfg.seed);
      for (Eigen::Index i = 0; i < d.rows(); ++i) design.push_back(to_json_value(Vector(d.row(i).transpose())));
    }
    auto entry = std::make_shared<Entry>();
    std::string id;
    {
      std::lock_guard<std::mutex> lock(map_mu_);
      do {
        id = detail::new_uuid();
      } while (entries_.count(id) || std::filesystem::exists(root_ / id));
      entries_[id] = entry;
    }
    std::unique_lock<std::shared_mutex> lock(entry->mu);
    std::filesystem::create_directories(root_ / id);
    emit(*entry, "Created",
         json{{"id", id}, {"config", to_json_value(cfg)}, {"initial_observations", init_obs},
              {"initial_design", design}});
    refit_if_ready(*entry);
    write_snapshot(*entry);
    return campaign_document(entry->c);
  }

  json get_campaign(const std::string& id) {
    auto e = find(id);
    std::shared_lock<std::shared_mutex> lock(e->mu);
    return campaign_document(e->c);
  }

  int dimension(const std::string& id) {
    auto e = find(id);
    std::shared_lock<std::shared_mutex> lock(e->mu);
    return e->c.config.p;
  }

  std::vector<std::string> list_campaigns() {
    std::vector<std::string> ids;
    for (const auto& d : std::filesystem::directory_iterator(root_)) {
      if (d.is_directory() && std::filesystem::exists(d.path() / "events.jsonl")) {
        ids.push_back(d.path().filename().string());
      }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  SubmitResult submit_observation(const std::string& id, Observation obs,
                                  const std::optional<std::string>& token = std::nullopt) {
    auto e = find(id);
    std::unique_lock<std::shared_mutex> lock(e->mu);
    Campaign& c = e->c;
    if (token && c.tokens.count(*token)) {
      throw ConflictError("observation token '" + *token + "' was already submitted");
    }
    SubmitResult res;
    const auto [stored, normalized] = check_observation(c.config, obs);
    res.normalized = normalized;
    if (normalized) res.warnings.push_back("censored value normalised to the censoring limit");

    // answer the matching pending proposal, else the pending sequential one
    int attributed = -1;
    for (std::size_t i = 0; i < c.proposals.size(); ++i) {
      const auto& p = c.proposals[i];
      if (p.observation < 0 && (p.x - stored.x).lpNorm<Eigen::Infinity>() <= 1e-9) {
        attributed = static_cast<int>(i);
        break;
      }
    }
    if (attributed < 0) attributed = c.pending_sequential();
    if (attributed < 0 && c.pending_initial()) {
      res.warnings.push_back("observation does not match a pending initial design point");
    }
    json pl{{"observation", to_json_value(stored)}, {"normalized", normalized}};
    pl["attributed"] = attributed >= 0 ? json(attributed) : json(nullptr);
    if (token) pl["token"] = *token;
    emit(*e, "ObservationAdded", pl);
    e->imputed.reset();
    refit_if_ready(*e);
    write_snapshot(*e);
    res.campaign = campaign_document(c);
    return res;
  }

  ProposalView get_proposal(const std::string& id) {
    auto e = find(id);
    std::unique_lock<std::shared_mutex> lock(e->mu);
    Campaign& c = e->c;
    const int pending = c.pending_sequential();
    if (pending >= 0) {
      const auto& p = c.proposals[static_cast<std::size_t>(pending)];
      return {p.x, *p.eval, p.lambda_point, true};
    }
    if (c.fit_failed) throw ConflictError("model fit failed: " + c.last_error);
    if (c.pending_initial()) throw ConflictError("initial design runs are still pending");
    if (!c.model) throw ConflictError("not enough data to fit a model");
    int k = 1;
    for (const auto& p : c.proposals) k += !p.initial;
    const std::uint64_t seed = c.config.seed * 1000003ULL + static_cast<std::uint64_t>(k);
    Proposal prop;
    try {
      const FittedModel& pm = proposal_model(*e);
      prop = propose_next(pm, c.config.method, c.config, detail::design_inputs(c.observations, c.config.p),
                          seed);
    } catch (const Error& err) {
      emit(*e, "Error", json{{"message", err.what()}, {"code", err.code()}, {"during", "proposal"}});
      write_snapshot(*e);
      throw;
    }
    const double lp = censoring_probability(*c.model, prop.x);
    emit(*e, "ProposalIssued",
         json{{"x", to_json_value(prop.x)}, {"diagnostics", to_json_value(prop.eval)}, {"lambda_point", lp}});
    write_snapshot(*e);
    return {prop.x, prop.eval, lp, false};
  }

  std::vector<PointPrediction> get_predictions(const std::string& id, const Matrix& grid) {
    auto e = find(id);
    std::shared_lock<std::shared_mutex> lock(e->mu);
    const FittedModel& m = require_model(e->c);
    check_grid(grid, m.dim());
    std::vector<PointPrediction> out;
    out.reserve(static_cast<std::size_t>(grid.rows()));
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
      const Vector x = grid.row(i).transpose();
      const Prediction pd = predict(m, x);
      out.push_back({pd.mean, std::max(pd.var, 0.0), censoring_probability(m, x)});
    }
    return out;
  }

  /// Criterion of the campaign's method over a grid, without the constant term.
  std::vector<CriterionEval> get_criterion(const std::string& id, const Matrix& grid) {
    auto e = find(id);
    std::unique_lock<std::shared_mutex> lock(e->mu);
    const Campaign& c = e->c;
    require_model(c);
    check_grid(grid, c.config.p);
    const FittedModel& pm = proposal_model(*e);
    const CriterionCache cache =
        c.config.method == Method::SeqMaxPro ? CriterionCache{} : make_criterion_cache(pm);
    CriterionOptions opt;
    opt.tmvn = c.config.criterion_tmvn;
    opt.seed = c.config.seed;
    const Matrix existing = detail::design_inputs(c.observations, c.config.p);
    std::vector<CriterionEval> out;
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
      out.push_back(score_candidate(pm, cache, c.config.method, grid.row(i).transpose(), existing, opt));
    }
    return out;
  }

  /// Rebuilds a campaign from its event log alone.
  Campaign replay(const std::string& id) const {
    if (!detail::valid_id(id)) throw NotFoundError("no campaign '" + id + "'");
    const auto path = root_ / id / "events.jsonl";
    std::ifstream in(path);
    if (!in) throw NotFoundError("no campaign '" + id + "'");
    Campaign c;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      detail::apply_event(c, event_from_json(json::parse(line)));
    }
    if (c.seq == 0) throw NotFoundError("campaign '" + id + "' has an empty event log");
    return c;
  }

  std::vector<EventRecord> events(const std::string& id) const {
    std::ifstream in(root_ / id / "events.jsonl");
    if (!detail::valid_id(id) || !in) throw NotFoundError("no campaign '" + id + "'");
    std::vector<EventRecord> out;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(event_from_json(json::parse(line)));
    }
    return out;
  }

 private:
  struct Entry {
    std::shared_mutex mu;
    Campaign c;
    std::optional<FittedModel> imputed;
  };

  std::shared_ptr<Entry> find(const std::string& id) {
    if (!detail::valid_id(id)) throw NotFoundError("no campaign '" + id + "'");
    std::lock_guard<std::mutex> lock(map_mu_);
    auto it = entries_.find(id);
    if (it != entries_.end()) return it->second;
    auto e = std::make_shared<Entry>();
    e->c = replay(id);
    entries_[id] = e;
    return e;
  }

  static const FittedModel& require_model(const Campaign& c) {
    if (!c.model) throw ConflictError("campaign has no fitted model yet");
    return *c.model;
  }

  static void check_grid(const Matrix& grid, int p) {
    if (grid.cols() != p) throw ValidationError("grid", "grid points must have " + std::to_string(p) + " coordinates");
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
      for (int l = 0; l < p; ++l) {
        if (!(grid(i, l) >= 0.0 && grid(i, l) <= 1.0)) {
          throw ValidationError("grid[" + std::to_string(i) + "]", "grid point outside [0,1]^p");
        }
      }
    }
  }

  /// Validated copy of an observation and whether its value was normalised.
  static std::pair<Observation, bool> check_observation(const DesignConfig& cfg, Observation o) {
    if (o.x.size() != cfg.p) throw ValidationError("x", "point must have " + std::to_string(cfg.p) + " coordinates");
    for (int l = 0; l < cfg.p; ++l) {
      if (!(o.x[l] >= 0.0 && o.x[l] <= 1.0)) throw ValidationError("x", "point outside [0,1]^p");
    }
    if (o.fidelity == Fidelity::Computer && !cfg.bifidelity) {
      throw ValidationError("fidelity", "computer runs need a bi-fidelity campaign");
    }
    bool normalized = false;
    if (o.censored) {
      if (o.fidelity == Fidelity::Computer) throw ValidationError("censored", "computer runs are never censored");
      if (!std::isfinite(cfg.c)) throw ValidationError("censored", "campaign has no censoring limit");
      if (o.value != cfg.c) {
        normalized = true;
        o.value = cfg.c;
      }
    } else {
      if (!std::isfinite(o.value)) throw ValidationError("value", "value must be finite");
      if (o.fidelity == Fidelity::Physical && o.value > cfg.c) {
        throw ValidationError("value", "uncensored value above the censoring limit");
      }
    }
    return {o, normalized};
  }

  void emit(Entry& e, const char* kind, json payload) {
    EventRecord ev{e.c.seq + 1, detail::utc_now(), kind, std::move(payload)};
    detail::apply_event(e.c, ev);
    std::ofstream out(root_ / e.c.id / "events.jsonl", std::ios::app);
    out << to_json_value(ev).dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to the event log of " + e.c.id);
  }

  void write_snapshot(const Entry& e) {
    const auto dir = root_ / e.c.id;
    const auto tmp = dir / "campaign.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << campaign_document(e.c).dump(2) << '\n';
    }
    std::filesystem::rename(tmp, dir / "campaign.json");
  }

  void refit_if_ready(Entry& e) {
    Campaign& c = e.c;
    if (c.pending_initial() || c.observations.size() < 2) return;
    const ModelMode mode = detail::campaign_mode(c.config.bifidelity);
    std::optional<Hyperparams> warm;
    if (c.model) warm = c.model->params;
    try {
      const FittedModel m = fit_mle(c.observations, c.config.c, mode,
                                    campaign_fit_config(c.config, static_cast<int>(c.observations.size()), warm));
      emit(e, "ModelRefit", json{{"model", to_json_value(m)}});
    } catch (const Error& err) {
      emit(e, "Error", json{{"message", err.what()}, {"code", err.code()}, {"during", "refit"}});
    }
  }

  /// Model used to score candidates; the imputed refit for IMSE-Impute.
  const FittedModel& proposal_model(Entry& e) {
    const Campaign& c = e.c;
    if (c.config.method != Method::IMSE_Impute || c.n_censored() == 0) return *c.model;
    if (!e.imputed) {
      const auto imputed = impute_censored(c.observations, c.config.c);
      const ModelMode mode = c.config.bifidelity ? ModelMode::CensoredBiFidelity : ModelMode::Standard;
      e.imputed = fit_mle(imputed, c.config.c, mode,
                          campaign_fit_config(c.config, static_cast<int>(c.observations.size()) + 100000,
                                              std::nullopt));
    }
    return *e.imputed;
  }

  std::filesystem::path root_;
  std::mutex map_mu_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
};

}  // namespace icmse
