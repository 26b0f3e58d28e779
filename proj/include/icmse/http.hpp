#pragma once

#include <memory>
#include <sstream>
#include <string>

// Eigen must be parsed before httplib: <resolv.h> defines a _res macro.
#include "icmse/service.hpp"

#include <httplib.h>

namespace icmse {

namespace detail {

inline int http_status(const Error& e) {
  if (dynamic_cast<const NotFoundError*>(&e)) return 404;
  if (dynamic_cast<const ConflictError*>(&e)) return 409;
  if (dynamic_cast<const ArgumentError*>(&e)) return 400;
  if (dynamic_cast<const NumericalError*>(&e)) return 422;
  return 500;
}

inline json error_body(const std::string& code, const std::string& message,
                       const std::string& field = {}) {
  json j{{"code", code}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  return j;
}

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

/// "a,b;c,d" with points separated by ';' and coordinates by ','. In one
/// dimension a plain comma list is read as points.
inline Matrix parse_grid(const std::string& s, int p) {
  std::vector<std::vector<double>> pts;
  std::stringstream ss(s);
  std::string seg;
  while (std::getline(ss, seg, ';')) {
    if (seg.empty()) continue;
    std::vector<double> coords;
    for (const auto& cell : split_csv_line(seg)) coords.push_back(parse_double(cell, "grid"));
    pts.push_back(std::move(coords));
  }
  if (p == 1 && pts.size() == 1 && pts[0].size() > 1) {
    std::vector<std::vector<double>> split;
    for (double v : pts[0]) split.push_back({v});
    pts = std::move(split);
  }
  if (pts.empty()) throw ValidationError("grid", "grid is empty");
  Matrix g(static_cast<Eigen::Index>(pts.size()), p);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (static_cast<int>(pts[i].size()) != p) {
      throw ValidationError("grid[" + std::to_string(i) + "]",
                            "grid point must have " + std::to_string(p) + " coordinates");
    }
    for (int l = 0; l < p; ++l) g(static_cast<Eigen::Index>(i), l) = pts[i][static_cast<std::size_t>(l)];
  }
  return g;
}

inline Matrix request_grid(const httplib::Request& req, int p) {
  if (req.has_param("grid")) return parse_grid(req.get_param_value("grid"), p);
  int per_axis = p == 1 ? 200 : 40;
  if (req.has_param("n")) {
    try {
      per_axis = std::stoi(req.get_param_value("n"));
    } catch (const std::exception&) {
      throw ValidationError("n", "n must be an integer");
    }
  } else if (p > 2) {
    throw ValidationError("grid", "grid is required when p > 2");
  }
  return regular_grid(per_axis, p);
}

template <class F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const ValidationError& e) {
    send_json(res, 400, error_body(e.code(), e.what(), e.field()));
  } catch (const Error& e) {
    send_json(res, http_status(e), error_body(e.code(), e.what()));
  } catch (const json::exception& e) {
    send_json(res, 400, error_body("bad_request", e.what()));
  } catch (const std::exception& e) {
    send_json(res, 500, error_body("internal_error", e.what()));
  }
}

inline json proposal_json(const ProposalView& v) {
  json d = to_json_value(v.eval);
  d["lambda_point"] = v.lambda_point;
  d["high_censoring_risk"] = v.lambda_point > kHighCensoringRisk;
  return json{{"x_next", to_json_value(v.x)}, {"diagnostics", d}, {"cached", v.cached}};
}

}  // namespace detail

/// Installs the /api routes on `srv`. The service must outlive the server.
inline void install_routes(httplib::Server& srv, CampaignService& svc) {
  using detail::guarded;
  using detail::send_json;

  srv.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}});
  });

  srv.Get("/api/campaigns", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, json{{"campaigns", svc.list_campaigns()}}); });
  });

  srv.Post("/api/campaigns", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      if (!body.is_object()) throw ValidationError("body", "request body must be an object");
      const DesignConfig cfg = design_config_from_json(body.contains("config") ? body["config"] : json::object());
      std::optional<std::vector<Observation>> init;
      if (body.contains("initial_observations") && !body["initial_observations"].is_null()) {
        init.emplace();
        for (const auto& o : body["initial_observations"]) init->push_back(observation_from_json(o));
      }
      send_json(res, 201, svc.create_campaign(cfg, init));
    });
  });

  srv.Get(R"(/api/campaigns/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.get_campaign(req.matches[1])); });
  });

  srv.Post(R"(/api/campaigns/([^/]+)/observations)",
           [&svc](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               const json body = json::parse(req.body);
               const Observation o = observation_from_json(body);
               std::optional<std::string> token;
               if (body.contains("token") && !body["token"].is_null()) {
                 if (!body["token"].is_string()) throw ValidationError("token", "token must be a string");
                 token = body["token"].get<std::string>();
               }
               const SubmitResult r = svc.submit_observation(req.matches[1], o, token);
               send_json(res, 200,
                         json{{"campaign", r.campaign}, {"normalized", r.normalized}, {"warnings", r.warnings}});
             });
           });

  srv.Get(R"(/api/campaigns/([^/]+)/proposal)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, detail::proposal_json(svc.get_proposal(req.matches[1]))); });
  });

  srv.Get(R"(/api/campaigns/([^/]+)/predictions)",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              const std::string id = req.matches[1];
              const int p = svc.dimension(id);
              const Matrix grid = detail::request_grid(req, p);
              const auto preds = svc.get_predictions(id, grid);
              json pts = json::array();
              for (std::size_t i = 0; i < preds.size(); ++i) {
                pts.push_back(json{{"x", to_json_value(Vector(grid.row(static_cast<Eigen::Index>(i)).transpose()))},
                                   {"mean", preds[i].mean},
                                   {"var", preds[i].var},
                                   {"lambda_point", preds[i].lambda_point}});
              }
              send_json(res, 200, json{{"points", pts}});
            });
          });

  srv.Get(R"(/api/campaigns/([^/]+)/criterion)",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              const std::string id = req.matches[1];
              const int p = svc.dimension(id);
              const Matrix grid = detail::request_grid(req, p);
              const auto vals = svc.get_criterion(id, grid);
              json pts = json::array();
              for (std::size_t i = 0; i < vals.size(); ++i) {
                json e = to_json_value(vals[i]);
                e["x"] = to_json_value(Vector(grid.row(static_cast<Eigen::Index>(i)).transpose()));
                pts.push_back(std::move(e));
              }
              send_json(res, 200, json{{"points", pts}});
            });
          });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_json(res, res.status, detail::error_body(res.status == 404 ? "not_found" : "http_error",
                                                    "no such route"));
    }
  });
}

}  // namespace icmse
