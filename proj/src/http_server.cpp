#include "ecgstudy/http_server.hpp"

#include <cmath>

#include <fmt/format.h>
#include <httplib.h>

#include "ecgstudy/errors.hpp"

namespace ecgstudy {

namespace {

constexpr const char* kJson = "application/json";

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& msg) {
  send_json(res, status, {{"error", code}, {"message", msg}});
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::auth: return 401;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::parse:
    case ErrorCode::validation:
    case ErrorCode::argument:
    case ErrorCode::input:
    case ErrorCode::too_short:
    case ErrorCode::lead_not_found:
    case ErrorCode::range:
    case ErrorCode::truncation:
    case ErrorCode::unsupported_format:
    case ErrorCode::empty_report:
      return 422;
    default:
      return 500;
  }
}

std::string bearer(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (header.size() <= prefix.size() || header.compare(0, prefix.size(), prefix) != 0) return {};
  return header.substr(prefix.size());
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::validation, "body must be a JSON object");
  return j;
}

template <typename T>
T field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) fail(ErrorCode::validation, fmt::format("missing field '{}'", name));
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::validation, fmt::format("field '{}' has the wrong type", name));
  }
}

}  // namespace

struct HttpServer::Impl {
  StudyService& service;
  ServerConfig config;
  httplib::Server server;

  Impl(StudyService& s, ServerConfig c) : service(s), config(std::move(c)) {
    if (config.analyze_token.empty()) config.analyze_token = config.admin_token;
    routes();
  }

  void require_admin(const httplib::Request& req) const {
    if (config.admin_token.empty() || bearer(req) != config.admin_token) {
      fail(ErrorCode::auth, "admin token required");
    }
  }

  const Params& model() const {
    if (!config.model) fail(ErrorCode::conflict, "no model checkpoint loaded");
    return *config.model;
  }

  // Runs a handler, mapping library errors to HTTP statuses.
  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        const int status = status_for(e.code());
        if (status == 500) {
          const std::string incident = random_token().substr(0, 12);
          fmt::print(stderr, "incident {}: {} {}: {}\n", incident, req.method, req.path, e.what());
          send_json(res, 500, {{"error", to_string(e.code())},
                               {"message", "internal failure"},
                               {"incident_id", incident}});
        } else {
          send_error(res, status, to_string(e.code()), e.what());
        }
      } catch (const std::exception& e) {
        const std::string incident = random_token().substr(0, 12);
        fmt::print(stderr, "incident {}: {} {}: {}\n", incident, req.method, req.path, e.what());
        send_json(res, 500, {{"error", "internal"}, {"message", "internal failure"},
                             {"incident_id", incident}});
      }
    };
  }

  void analyze(const httplib::Request& req, httplib::Response& res) {
    if (bearer(req) != config.analyze_token || config.analyze_token.empty()) {
      fail(ErrorCode::auth, "invalid or missing token");
    }
    const auto body = parse_body(req);
    Segment seg;
    seg.parent_id = field<std::string>(body, "record_id");
    seg.lead_name = field<std::string>(body, "lead");
    if (seg.lead_name != "I") fail(ErrorCode::validation, "only lead I is analyzed");
    seg.sampling_rate_hz = field<double>(body, "sampling_rate_hz");
    if (!(seg.sampling_rate_hz > 0.0) || !std::isfinite(seg.sampling_rate_hz)) {
      fail(ErrorCode::validation, "sampling_rate_hz must be positive");
    }
    seg.samples = field<std::vector<double>>(body, "samples_uv");
    for (double v : seg.samples) {
      if (!std::isfinite(v)) fail(ErrorCode::validation, "samples_uv must be finite");
    }
    seg.duration_s = static_cast<double>(seg.samples.size()) / seg.sampling_rate_hz;
    if (seg.duration_s < kMinSegmentSeconds || seg.duration_s > kMaxSegmentSeconds) {
      fail(ErrorCode::validation,
           fmt::format("duration {:.3f} s outside [{}, {}] s", seg.duration_s, kMinSegmentSeconds,
                       kMaxSegmentSeconds));
    }
    const auto& params = model();
    Prediction pred;
    try {
      pred = predict_pipeline(params, seg);
    } catch (const Error& e) {
      throw Error(ErrorCode::numeric, e.what());  // always an incident
    }
    nlohmann::json probs = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumRhythms; ++c) {
      probs[std::string(to_string(kModelClasses[c]))] = pred.probabilities[c];
    }
    send_json(res, 200, {{"class", std::string(to_string(pred.predicted_class))},
                         {"probabilities", std::move(probs)},
                         {"model_version", pred.model_version}});
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    require_admin(req);
    const auto body = parse_body(req);
    const auto manifest = load_manifest(field<std::string>(body, "manifest_path"));
    StudyDefinition def;
    def.dataset_name = manifest.dataset_name;
    def.items = items_from_manifest(manifest);
    def.rater_ids = field<std::vector<std::string>>(body, "raters");
    if (body.contains("seed")) def.seed = field<std::uint64_t>(body, "seed");
    if (body.contains("study_id")) def.study_id = field<std::string>(body, "study_id");
    const auto created = service.create_study(std::move(def));
    nlohmann::json tokens = nlohmann::json::object();
    for (const auto& [rater, token] : created.rater_tokens) tokens[rater] = token;
    send_json(res, 201, {{"study_id", created.study_id}, {"rater_tokens", std::move(tokens)}});
  }

  void routes() {
    server.Post("/api/analyze", guarded([this](const auto& req, auto& res) { analyze(req, res); }));
    server.Post("/api/studies", guarded([this](const auto& req, auto& res) { create(req, res); }));
    server.Get(R"(/api/studies/([A-Za-z0-9_.\-]+)/next)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto next = service.next_item(req.matches[1], bearer(req));
                 send_json(res, 200, next ? to_json(*next) : nlohmann::json{{"done", true}});
               }));
    server.Post(R"(/api/studies/([A-Za-z0-9_.\-]+)/annotations)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto token = bearer(req);
                  if (token.empty()) fail(ErrorCode::auth, "rater token required");
                  const auto body = parse_body(req);
                  const auto a = service.submit_annotation(req.matches[1], token,
                                                           field<std::string>(body, "item_id"),
                                                           field<std::string>(body, "label"));
                  send_json(res, 201, {{"item_id", a.item_id}, {"label", a.label},
                                       {"submitted_at", a.submitted_at}});
                }));
    server.Post(R"(/api/studies/([A-Za-z0-9_.\-]+)/unlock)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  require_admin(req);
                  const auto body = parse_body(req);
                  service.unlock(req.matches[1], field<std::string>(body, "rater_id"),
                                 field<std::string>(body, "item_id"));
                  send_json(res, 200, {{"unlocked", true}});
                }));
    server.Post(R"(/api/studies/([A-Za-z0-9_.\-]+)/partial)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  require_admin(req);
                  const auto body = parse_body(req);
                  service.mark_partial(req.matches[1], field<std::string>(body, "rater_id"));
                  send_json(res, 200, {{"partial", true}});
                }));
    server.Post(R"(/api/studies/([A-Za-z0-9_.\-]+)/model-run)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  require_admin(req);
                  const auto summary = service.run_model(req.matches[1], model());
                  nlohmann::json failures = nlohmann::json::array();
                  for (const auto& [item, msg] : summary.failures) {
                    failures.push_back({{"item_id", item}, {"error", msg}});
                  }
                  send_json(res, 200, {{"items", summary.items},
                                       {"succeeded", summary.succeeded},
                                       {"failures", std::move(failures)}});
                }));
    server.Get(R"(/api/studies/([A-Za-z0-9_.\-]+)/report)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 require_admin(req);
                 const auto rep = service.report(req.matches[1]);
                 if (req.get_param_value("format") == "markdown") {
                   res.status = 200;
                   res.set_content(render_markdown(rep), "text/markdown; charset=utf-8");
                 } else {
                   send_json(res, 200, report_to_json(rep));
                 }
               }));
  }
};

HttpServer::HttpServer(StudyService& service, ServerConfig config)
    : impl_(std::make_unique<Impl>(service, std::move(config))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorCode::io, fmt::format("cannot bind {}:{}", host, port));
  return bound;
}

void HttpServer::serve() {
  if (!impl_->server.listen_after_bind()) fail(ErrorCode::io, "server stopped with an error");
}

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace ecgstudy
