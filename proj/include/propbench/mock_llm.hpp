#pragma once

#include "propbench/error.hpp"
#include "propbench/json_io.hpp"

#include <httplib.h>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace propbench {

// Canned chat-completions backend. Responses are keyed by the content of the
// last user message; the n-th request for a key gets the n-th entry of its
// list (the last entry repeats). Unknown keys get the default, if any.
//
// Fixture JSON: {"responses": {"<user text>": ["<content>", ...]}, "default": "<content>"}
// An entry may also be {"status": 503} to simulate a transport failure.
class MockLlm {
public:
  struct Reply {
    int status = 200;
    std::string content;
  };

  MockLlm() = default;

  explicit MockLlm(const json& j) {
    if (j.contains("responses")) {
      for (const auto& [key, list] : j.at("responses").items()) {
        auto& replies = responses_[key];
        if (list.is_array()) {
          for (const auto& e : list) replies.push_back(reply_of(e));
        } else {
          replies.push_back(reply_of(list));
        }
        if (replies.empty()) throw ConfigError("mock fixture: empty response list for a key");
      }
    }
    if (j.contains("default")) default_ = reply_of(j.at("default"));
  }

  explicit MockLlm(const std::filesystem::path& path) : MockLlm(read_json_file(path)) {}

  Reply reply_for(const std::string& user_text) {
    std::lock_guard lock(mutex_);
    const std::size_t n = counters_[user_text]++;
    log_.push_back(user_text);
    auto it = responses_.find(user_text);
    if (it == responses_.end()) {
      if (default_) return *default_;
      return {404, "no fixture response"};
    }
    return it->second[std::min(n, it->second.size() - 1)];
  }

  // Handles one chat-completions request body and returns (status, body).
  std::pair<int, std::string> handle(const std::string& request_body) {
    json req;
    try {
      req = json::parse(request_body);
    } catch (const json::parse_error& e) {
      return {400, json{{"error", {{"message", e.what()}}}}.dump()};
    }
    std::string user;
    if (req.contains("messages"))
      for (const auto& m : req.at("messages"))
        if (m.value("role", "") == "user") user = m.value("content", "");
    {
      std::lock_guard lock(mutex_);
      requests_.push_back(req);
    }
    auto reply = reply_for(user);
    if (reply.status != 200) return {reply.status, json{{"error", {{"message", reply.content}}}}.dump()};
    json body{{"id", "mock-" + std::to_string(request_count())},
              {"object", "chat.completion"},
              {"model", req.value("model", "mock")},
              {"choices", json::array({{{"index", 0},
                                        {"finish_reason", "stop"},
                                        {"message", {{"role", "assistant"}, {"content", reply.content}}}}})}};
    return {200, body.dump()};
  }

  std::size_t request_count() const {
    std::lock_guard lock(mutex_);
    return requests_.size();
  }

  std::vector<json> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

  // Any POST whose path ends in "chat/completions" is answered.
  void mount(httplib::Server& server) {
    server.Post(R"(.*chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
      auto [status, body] = handle(req.body);
      res.status = status;
      res.set_content(body, "application/json");
    });
  }

private:
  static Reply reply_of(const json& e) {
    if (e.is_string()) return {200, e.get<std::string>()};
    if (e.is_object() && e.contains("status")) return {e.at("status").get<int>(), e.value("message", "simulated failure")};
    // Structured outputs may be given inline as objects.
    return {200, e.dump()};
  }

  std::map<std::string, std::vector<Reply>> responses_;
  std::optional<Reply> default_;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> counters_;
  std::vector<std::string> log_;
  std::vector<json> requests_;
};

} // namespace propbench
