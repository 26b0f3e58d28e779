#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icmse/designer.hpp"

namespace icmse {

using json = nlohmann::json;

// ---- observation CSV ---------------------------------------------------------
//
// header x1,...,xp,y,censored,fidelity; censored in {0,1};
// fidelity in {computer,physical}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& field) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(field, "not a number: '" + s + "'");
  }
  if (used != s.size()) throw ValidationError(field, "not a number: '" + s + "'");
  return v;
}

}  // namespace detail

inline const char* to_string(Fidelity f) {
  return f == Fidelity::Computer ? "computer" : "physical";
}

inline Fidelity fidelity_from_string(const std::string& s) {
  if (s == "computer") return Fidelity::Computer;
  if (s == "physical") return Fidelity::Physical;
  throw ValidationError("fidelity", "fidelity must be 'computer' or 'physical', got '" + s + "'");
}

/// Censored rows get their value replaced by c when c is finite.
inline std::vector<Observation> read_observations_csv(std::istream& in, double c) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("header", "empty observation file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto head = detail::split_csv_line(line);
  const int p = static_cast<int>(head.size()) - 3;
  if (p < 1 || head[p] != "y" || head[p + 1] != "censored" || head[p + 2] != "fidelity") {
    throw ValidationError("header", "expected header x1,...,xp,y,censored,fidelity");
  }
  for (int l = 0; l < p; ++l) {
    if (head[l] != "x" + std::to_string(l + 1)) {
      throw ValidationError("header", "column " + std::to_string(l + 1) + " must be x" +
                                          std::to_string(l + 1));
    }
  }
  std::vector<Observation> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = "row " + std::to_string(row);
    if (static_cast<int>(cells.size()) != p + 3) {
      throw ValidationError(where, where + ": expected " + std::to_string(p + 3) + " fields");
    }
    Observation o;
    o.x.resize(p);
    for (int l = 0; l < p; ++l) o.x[l] = detail::parse_double(cells[l], where + ".x" + std::to_string(l + 1));
    o.value = detail::parse_double(cells[p], where + ".y");
    if (cells[p + 1] == "1") o.censored = true;
    else if (cells[p + 1] != "0") throw ValidationError(where + ".censored", "censored must be 0 or 1");
    o.fidelity = fidelity_from_string(cells[p + 2]);
    if (o.censored && std::isfinite(c)) o.value = c;
    out.push_back(std::move(o));
  }
  if (out.empty()) throw ValidationError("rows", "observation file has no rows");
  return out;
}

inline std::vector<Observation> read_observations_csv(const std::string& path, double c) {
  std::ifstream in(path);
  if (!in) throw ValidationError("data", "cannot open " + path);
  return read_observations_csv(in, c);
}

inline void write_observations_csv(std::ostream& os, const std::vector<Observation>& data) {
  if (data.empty()) return;
  const int p = static_cast<int>(data.front().x.size());
  for (int l = 0; l < p; ++l) os << 'x' << l + 1 << ',';
  os << "y,censored,fidelity\n";
  for (const auto& o : data) {
    for (int l = 0; l < p; ++l) os << format_double(o.x[l]) << ',';
    os << format_double(o.value) << ',' << (o.censored ? 1 : 0) << ',' << to_string(o.fidelity)
       << '\n';
  }
}

// ---- JSON ----------------------------------------------------------------------
//
// Doubles are written in shortest round-trip form. Infinite limits become null.

inline json to_json_value(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw ValidationError(field, field + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(field, field + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json limit_to_json(double c) { return std::isfinite(c) ? json(c) : json(nullptr); }

inline double limit_from_json(const json& j, const std::string& field) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (!j.is_number()) throw ValidationError(field, field + " must be a number or null");
  return j.get<double>();
}

inline json to_json_value(const Observation& o) {
  return json{{"x", to_json_value(o.x)},
              {"value", o.value},
              {"censored", o.censored},
              {"fidelity", to_string(o.fidelity)}};
}

inline Observation observation_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("observation", "observation must be an object");
  Observation o;
  o.x = vector_from_json(j.value("x", json()), "x");
  if (!j.contains("value") || !j["value"].is_number()) {
    throw ValidationError("value", "value must be a number");
  }
  o.value = j["value"].get<double>();
  o.censored = j.value("censored", false);
  o.fidelity = fidelity_from_string(j.value("fidelity", std::string("physical")));
  return o;
}

inline json to_json_value(const Hyperparams& hp) {
  json j{{"bifidelity", hp.bifidelity},
         {"mean", hp.mean},
         {"signal_var", hp.signal_var},
         {"signal_rates", to_json_value(hp.signal_ls.rates())},
         {"noise_var", hp.noise_var}};
  if (hp.bifidelity) {
    j["discrepancy_var"] = hp.discrepancy_var;
    j["discrepancy_rates"] = to_json_value(hp.discrepancy_ls.rates());
  }
  return j;
}

inline Hyperparams hyperparams_from_json(const json& j) {
  Hyperparams hp;
  hp.bifidelity = j.at("bifidelity").get<bool>();
  hp.mean = j.at("mean").get<double>();
  hp.signal_var = j.at("signal_var").get<double>();
  hp.signal_ls = LengthscaleParams::from_rates(vector_from_json(j.at("signal_rates"), "signal_rates"));
  hp.noise_var = j.at("noise_var").get<double>();
  if (hp.bifidelity) {
    hp.discrepancy_var = j.at("discrepancy_var").get<double>();
    hp.discrepancy_ls =
        LengthscaleParams::from_rates(vector_from_json(j.at("discrepancy_rates"), "discrepancy_rates"));
  }
  return hp;
}

inline ModelMode mode_from_string(const std::string& s) {
  if (s == "standard") return ModelMode::Standard;
  if (s == "censored") return ModelMode::CensoredSingle;
  if (s == "bifidelity") return ModelMode::CensoredBiFidelity;
  throw ValidationError("mode", "unknown model mode '" + s + "'");
}

inline json to_json_value(const TmvnOptions& t) {
  return json{{"orthant_points", t.orthant_points},
              {"moment_points", t.moment_points},
              {"shifts", t.shifts}};
}

inline TmvnOptions tmvn_from_json(const json& j) {
  TmvnOptions t;
  t.orthant_points = j.at("orthant_points").get<int>();
  t.moment_points = j.at("moment_points").get<int>();
  t.shifts = j.at("shifts").get<int>();
  return t;
}

/// Hyperparameters and data only; factorisations are rebuilt on load.
inline json to_json_value(const FittedModel& m) {
  json data = json::array();
  for (const auto& o : m.data) data.push_back(to_json_value(o));
  return json{{"mode", to_string(m.mode)},
              {"censor_limit", limit_to_json(m.censor_limit)},
              {"params", to_json_value(m.params)},
              {"data", std::move(data)},
              {"seed", m.seed},
              {"tmvn", to_json_value(m.tmvn)},
              {"loglik", m.loglik}};
}

inline FittedModel model_from_json(const json& j) {
  try {
    std::vector<Observation> data;
    for (const auto& o : j.at("data")) data.push_back(observation_from_json(o));
    FittedModel m = make_model(hyperparams_from_json(j.at("params")), data,
                               limit_from_json(j.at("censor_limit"), "censor_limit"),
                               mode_from_string(j.at("mode").get<std::string>()),
                               j.value("seed", std::uint64_t{0}),
                               j.contains("tmvn") ? tmvn_from_json(j["tmvn"]) : TmvnOptions{});
    if (j.contains("loglik") && j["loglik"].is_number()) m.loglik = j["loglik"].get<double>();
    return m;
  } catch (const json::exception& e) {
    throw ValidationError("model", std::string("malformed model document: ") + e.what());
  }
}

inline json to_json_value(const CriterionEval& e) {
  return json{{"value", e.value},
              {"lambda", e.lambda},
              {"trace_term", e.trace_term},
              {"constant_included", e.constant_included}};
}

inline CriterionEval criterion_eval_from_json(const json& j) {
  CriterionEval e;
  e.value = j.at("value").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("value").get<double>();
  e.lambda = j.at("lambda").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("lambda").get<double>();
  e.trace_term = j.at("trace_term").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                               : j.at("trace_term").get<double>();
  e.constant_included = j.at("constant_included").get<bool>();
  return e;
}

inline json to_json_value(const DesignConfig& c) {
  json j{{"p", c.p},
         {"n_ini", c.n_ini},
         {"n_seq", c.n_seq},
         {"c", limit_to_json(c.c)},
         {"bifidelity", c.bifidelity},
         {"method", to_string(c.method)},
         {"restarts", c.restarts},
         {"seed", c.seed},
         {"fit_restarts", c.fit_restarts}};
  j["noise_var"] = c.noise_var ? json(*c.noise_var) : json(nullptr);
  return j;
}

/// Missing fields keep their defaults; type errors are reported by field.
inline DesignConfig design_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config", "config must be an object");
  DesignConfig c;
  auto get_int = [&](const char* k, int& dst) {
    if (!j.contains(k)) return;
    if (!j[k].is_number_integer()) throw ValidationError(k, std::string(k) + " must be an integer");
    dst = j[k].get<int>();
  };
  get_int("p", c.p);
  get_int("n_ini", c.n_ini);
  get_int("n_seq", c.n_seq);
  get_int("restarts", c.restarts);
  get_int("fit_restarts", c.fit_restarts);
  if (j.contains("c")) c.c = limit_from_json(j["c"], "c");
  if (j.contains("bifidelity")) {
    if (!j["bifidelity"].is_boolean()) throw ValidationError("bifidelity", "bifidelity must be a boolean");
    c.bifidelity = j["bifidelity"].get<bool>();
  }
  if (j.contains("method")) {
    if (!j["method"].is_string()) throw ValidationError("method", "method must be a string");
    c.method = method_from_string(j["method"].get<std::string>());
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ValidationError("seed", "seed must be a nonnegative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("noise_var") && !j["noise_var"].is_null()) {
    if (!j["noise_var"].is_number()) throw ValidationError("noise_var", "noise_var must be a number");
    c.noise_var = j["noise_var"].get<double>();
  }
  c.validate();
  return c;
}

}  // namespace icmse
