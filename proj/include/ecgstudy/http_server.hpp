#pragma once

#include <memory>
#include <optional>
#include <string>

#include "ecgstudy/densenet.hpp"
#include "ecgstudy/study.hpp"

namespace ecgstudy {

struct ServerConfig {
  std::string admin_token;               // study creation, model runs, reports
  std::string analyze_token;             // POST /api/analyze; admin token when empty
  std::optional<Params> model;           // required by analyze and model-run
};

// JSON API over a StudyService:
//   POST /api/analyze
//   POST /api/studies
//   GET  /api/studies/{id}/next
//   POST /api/studies/{id}/annotations
//   POST /api/studies/{id}/unlock          (admin)
//   POST /api/studies/{id}/partial         (admin)
//   POST /api/studies/{id}/model-run       (admin)
//   GET  /api/studies/{id}/report[?format=markdown]  (admin)
// Tokens travel as "Authorization: Bearer <token>".
class HttpServer {
 public:
  HttpServer(StudyService& service, ServerConfig config);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ecgstudy
