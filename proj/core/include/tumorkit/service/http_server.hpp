#pragma once

#include <memory>
#include <string>

#include "tumorkit/service/inference_service.hpp"

namespace tumorkit::service {

// HTTP/JSON front end for an InferenceService. Routes live under /api/v1,
// with /healthz also answered at the root.
class HttpServer {
 public:
  explicit HttpServer(InferenceService& service, int worker_threads = 4);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds without accepting yet; port 0 picks a free port. Returns the bound
  // port. Throws std::runtime_error when binding fails.
  int bind(const std::string& host, int port);

  // Accepts until stop(); call after bind().
  void serve();
  // Runs serve() on a background thread and waits until it accepts.
  void start();
  // Safe to call from any thread and more than once.
  void stop();

  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = -1;
};

}  // namespace tumorkit::service
