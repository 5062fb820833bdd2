#pragma once

#include "propbench/annotation.hpp"
#include "propbench/corpus.hpp"
#include "propbench/error.hpp"
#include "propbench/prompt.hpp"
#include "propbench/rng.hpp"
#include "propbench/taxonomy.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace propbench {

struct GatewayConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1";
  std::string model = "llama-3.3-70b-instruct";
  double temperature = 0.0;
  std::string api_key;
  std::chrono::seconds timeout{120};

  // Fills api_key from LLM_API_KEY and endpoint from LLM_BASE_URL when set.
  void apply_environment() {
    if (const char* key = std::getenv("LLM_API_KEY"); key && *key) api_key = key;
    if (const char* url = std::getenv("LLM_BASE_URL"); url && *url) endpoint = url;
  }
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  // Replaced in tests to avoid real sleeps.
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };

  std::chrono::milliseconds backoff(int failed_attempts) const {
    return initial_backoff * (1LL << std::max(0, failed_attempts - 1));
  }
};

// Sends a chat-completions request body and returns the assistant message
// content. Implementations must be safe to call from several threads.
class ChatTransport {
public:
  virtual ~ChatTransport() = default;
  virtual std::string complete(const json& request) = 0;
};

inline json chat_request(const Messages& messages, const GatewayConfig& cfg, const Taxonomy& tax = Taxonomy::builtin()) {
  return {{"model", cfg.model},
          {"messages", to_json(messages)},
          {"temperature", cfg.temperature},
          {"response_format",
           {{"type", "json_schema"},
            {"json_schema", {{"name", "PropagandaAnnotation"}, {"strict", true}, {"schema", output_schema(tax)}}}}}};
}

// Extracts choices[0].message.content from a chat-completions response.
inline std::string completion_content(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("gateway returned non-JSON body: ") + e.what());
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw TransportError("gateway message content is not a string");
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected gateway response shape: ") + e.what());
  }
}

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint must include a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!p.path.empty() && p.path.back() == '/') p.path.pop_back();
  return p;
}

// OpenAI-compatible HTTP transport. The endpoint is a base URL such as
// http://host:port/v1; "/chat/completions" is appended unless present.
class HttpChatTransport : public ChatTransport {
public:
  explicit HttpChatTransport(GatewayConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.endpoint)) {
    const std::string suffix = "/chat/completions";
    if (url_.path.size() < suffix.size() || url_.path.compare(url_.path.size() - suffix.size(), suffix.size(), suffix) != 0)
      url_.path += suffix;
  }

  std::string complete(const json& request) override {
    httplib::Client client(url_.scheme_host_port);
    client.set_connection_timeout(cfg_.timeout);
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(cfg_.timeout);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    auto res = client.Post(url_.path, headers, request.dump(), "application/json");
    if (!res) throw TransportError("request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw TransportError("gateway returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    return completion_content(res->body);
  }

  const std::string& path() const { return url_.path; }

private:
  GatewayConfig cfg_;
  ParsedUrl url_;
};

struct AnnotateOptions {
  int k = 1;
  bool shuffle = false;
  std::uint64_t base_seed = 0;
  // When true each document gets its own seed sequence; otherwise run r of
  // every document uses base_seed + r.
  bool per_document_seeds = true;
  TextSource source = TextSource::normalized;
  RetryPolicy retry;

  std::uint64_t seed_for(const std::string& doc_id, int run) const {
    if (!per_document_seeds) return base_seed + static_cast<std::uint64_t>(run);
    return splitmix64(base_seed ^ fnv1a64(doc_id)) + static_cast<std::uint64_t>(run);
  }
};

// Runs k annotation passes over one document. Each run is retried per the
// policy (transport and parse failures alike); a run that exhausts its
// attempts is recorded in the bundle's errors and the remaining runs go on.
inline RunBundle annotate_document(const Document& doc, const AnnotateOptions& opts, ChatTransport& transport,
                                   const GatewayConfig& cfg, const PromptSpec& base_spec,
                                   const Taxonomy& tax = Taxonomy::builtin()) {
  if (opts.k < 1) throw DomainError("k must be at least 1");
  RunBundle bundle;
  bundle.doc_id = doc.id;
  bundle.k = opts.k;
  for (int run = 0; run < opts.k; ++run) {
    PromptSpec spec = base_spec;
    if (opts.shuffle) {
      spec = PromptSpec::shuffled(opts.seed_for(doc.id, run), tax);
      spec.preamble = base_spec.preamble;
      spec.setting_note = base_spec.setting_note;
    }
    const json request = chat_request(build_prompt(doc, spec, tax, opts.source), cfg, tax);
    std::string last_kind, last_message;
    bool ok = false;
    for (int attempt = 1; attempt <= opts.retry.max_attempts; ++attempt) {
      try {
        auto content = transport.complete(request);
        auto result = parse_response(content, doc, tax, opts.source);
        result.model_id = cfg.model;
        result.run_index = run;
        result.attempts = attempt;
        bundle.results.push_back(std::move(result));
        ok = true;
        break;
      } catch (const Error& e) {
        last_kind = e.kind();
        last_message = e.what();
      }
      if (attempt < opts.retry.max_attempts && opts.retry.sleep) opts.retry.sleep(opts.retry.backoff(attempt));
    }
    if (!ok) bundle.errors.push_back({doc.id, run, opts.retry.max_attempts, last_kind, last_message});
  }
  return bundle;
}

// Annotates every document with at most max_in_flight concurrent documents.
// Output order follows the corpus, independent of completion order.
inline std::vector<RunBundle> annotate_corpus(const Corpus& corpus, const AnnotateOptions& opts,
                                              ChatTransport& transport, const GatewayConfig& cfg,
                                              const PromptSpec& base_spec, std::size_t max_in_flight = 4,
                                              const Taxonomy& tax = Taxonomy::builtin()) {
  std::vector<RunBundle> bundles(corpus.documents.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= corpus.documents.size()) return;
      try {
        bundles[i] = annotate_document(corpus.documents[i], opts, transport, cfg, base_spec, tax);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure = std::current_exception();
        next = corpus.documents.size();
      }
    }
  };
  std::size_t n = std::max<std::size_t>(1, std::min(max_in_flight, corpus.documents.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return bundles;
}

} // namespace propbench
