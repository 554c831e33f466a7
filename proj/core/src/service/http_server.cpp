#include "tumorkit/service/http_server.hpp"

#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "tumorkit/error.hpp"

namespace tumorkit::service {
namespace {

constexpr std::size_t kMaxUploadBytes = 64u << 20;

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, error_body(code, message));
}

// Runs a handler, mapping exceptions to error bodies.
template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status, e.code, e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
      send_error(res, 500, "internal", e.what());
    }
  };
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

const char* status_code_name(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 413: return "payload_too_large";
    default: return "error";
  }
}

}  // namespace

struct HttpServer::Impl {
  InferenceService& service;
  httplib::Server server;
  std::thread thread;
  explicit Impl(InferenceService& s) : service(s) {}
};

HttpServer::HttpServer(InferenceService& service, int worker_threads) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  auto& svc = impl_->service;
  const auto threads = static_cast<std::size_t>(std::max(1, worker_threads));
  svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  svr.set_payload_max_length(kMaxUploadBytes);

  const std::string api = kApiPrefix;
  auto health = guarded([&svc](const httplib::Request&, httplib::Response& res) {
    nlohmann::ordered_json j;
    j["status"] = "ok";
    j["classifier_loaded"] = svc.has_classifier();
    j["segmenter_loaded"] = svc.has_segmenter();
    send_json(res, 200, j);
  });
  svr.Get("/healthz", health);
  svr.Get(api + "/healthz", health);

  svr.Post(api + "/patients", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body = nlohmann::json::object();
    if (!req.body.empty()) {
      body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw ServiceError(400, "bad_request", "request body is not valid JSON");
    }
    send_json(res, 201, to_json(svc.create_patient(body)));
  }));

  svr.Post(api + R"(/patients/([^/]+)/scans)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string patient_id = req.matches[1];
    std::string payload;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) throw ServiceError(400, "bad_request", "multipart upload needs a 'file' field");
      payload = req.get_file_value("file").content;
    } else {
      payload = req.body;
    }
    const UploadResult r = svc.upload(patient_id, as_bytes(payload));
    send_json(res, r.created ? 201 : 200, to_json(r.scan));
  }));

  svr.Post(api + R"(/scans/([^/]+)/classify)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const auto received = Clock::now();
    const std::string scan_id = req.matches[1];
    nlohmann::ordered_json j;
    j["scan_id"] = scan_id;
    j["classification"] = to_json(svc.classify(scan_id, received));
    send_json(res, 200, j);
  }));

  svr.Post(api + R"(/scans/([^/]+)/segment)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const auto received = Clock::now();
    const std::string scan_id = req.matches[1];
    nlohmann::ordered_json j;
    j["scan_id"] = scan_id;
    j["segmentation"] = to_json(svc.segment(scan_id, received), scan_id);
    send_json(res, 200, j);
  }));

  svr.Get(api + R"(/scans/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, to_json(svc.scan(req.matches[1])));
  }));

  svr.Get(api + R"(/scans/([^/]+)/image)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const StoredScan s = svc.scan(req.matches[1]);
    const auto bytes = svc.scan_image(s.scan_id);
    res.set_content(std::string(bytes.begin(), bytes.end()), s.content_type);
  }));

  svr.Get(api + R"(/scans/([^/]+)/mask)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const auto bytes = svc.scan_mask(req.matches[1]);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }));

  svr.Get(api + R"(/patients/([^/]+)/history)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string patient_id = req.matches[1];
    auto scans = nlohmann::ordered_json::array();
    for (const auto& s : svc.history(patient_id)) scans.push_back(to_json(s));
    nlohmann::ordered_json j;
    j["patient_id"] = patient_id;
    j["scans"] = std::move(scans);
    send_json(res, 200, j);
  }));

  svr.Get(api + R"(/patients/([^/]+)/export)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, svc.export_patient(req.matches[1]));
  }));

  svr.Get(api + R"(/tumor-info/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, to_json(svc.tumor_info(req.matches[1])));
  }));

  // Fills in error bodies for statuses produced outside the handlers.
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    send_error(res, res.status, status_code_name(res.status),
               res.status == 404 ? "no such route" : "request could not be handled");
  });
}

HttpServer::~HttpServer() {
  stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host + " on any port");
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  return port_;
}

void HttpServer::serve() {
  if (port_ < 0) throw std::runtime_error("serve() called before bind()");
  impl_->server.listen_after_bind();
}

void HttpServer::start() {
  if (port_ < 0) throw std::runtime_error("start() called before bind()");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace tumorkit::service
