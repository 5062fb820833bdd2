#pragma once

#include "propbench/error.hpp"
#include "propbench/json_io.hpp"
#include "propbench/review.hpp"
#include "propbench/taxonomy.hpp"

#include <httplib.h>

#include <filesystem>
#include <string>

namespace propbench {

inline int http_status_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "not_qualified") return 403;
  if (k == "queue_exhausted") return 404;
  if (k == "duplicate_submission" || k == "unassigned_task") return 409;
  if (k == "coarse_fine_mismatch" || k == "unknown_label") return 422;
  return 400;
}

inline json error_body(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

namespace detail {

inline void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline json request_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw MalformedJsonError("request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw MalformedJsonError(std::string("invalid request body: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw SchemaViolationError(std::string("/") + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaViolationError(std::string("/") + key, "wrong type");
  }
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_json(res, error_body(e.kind(), e.what()), http_status_for(e));
  } catch (const std::exception& e) {
    send_json(res, error_body("internal", e.what()), 500);
  }
}

} // namespace detail

// Registers the review API on an httplib server. The service and taxonomy
// must outlive the server.
inline void mount_review_api(httplib::Server& server, ReviewService& service, const Taxonomy& tax) {
  using namespace detail;

  server.Get("/api/taxonomy", [&tax](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, tax.to_json()); });
  });

  server.Get("/api/qualification", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto items = service.qualification_items(req.get_param_value("annotator_id"));
      json out = json::array();
      for (const auto& t : items) out.push_back({{"text", t}});
      send_json(res, {{"items", out}});
    });
  });

  server.Post("/api/qualify", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = request_body(req);
      auto result = service.qualify(field<std::string>(body, "annotator_id"),
                                    field<std::vector<std::string>>(body, "answers"));
      send_json(res, result.to_json());
    });
  });

  server.Get("/api/task", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto task = service.next_task(req.get_param_value("annotator_id"));
      send_json(res, task.annotator_payload(service.config().show_explanations));
    });
  });

  server.Post("/api/annotation", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = request_body(req);
      SubmissionRequest s;
      s.task_id = field<std::string>(body, "task_id");
      s.annotator_id = field<std::string>(body, "annotator_id");
      s.coarse = field<std::string>(body, "coarse");
      s.fine = field<std::string>(body, "fine");
      s.client_elapsed_ms = body.contains("elapsed_ms") ? field<std::int64_t>(body, "elapsed_ms") : 0;
      auto h = service.submit(s);
      send_json(res, {{"status", "accepted"}, {"annotation", h.to_json()}});
    });
  });

  server.Get("/api/progress", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, service.progress()); });
  });
}

// Serves the API plus, optionally, a static directory at "/".
class ReviewServer {
public:
  ReviewServer(ReviewService& service, const Taxonomy& tax, std::optional<std::filesystem::path> static_dir = {}) {
    mount_review_api(server_, service, tax);
    if (static_dir && !server_.set_mount_point("/", static_dir->string()))
      throw IoError("cannot serve static directory " + static_dir->string());
  }

  // Binds and returns the port; port 0 picks a free one.
  int bind(const std::string& host, int port) {
    if (port == 0) port = server_.bind_to_any_port(host);
    else if (!server_.bind_to_port(host, port)) port = -1;
    if (port < 0) throw IoError("cannot bind " + host);
    return port;
  }

  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }
  httplib::Server& raw() { return server_; }

private:
  httplib::Server server_;
};

} // namespace propbench
