#pragma once

#include "propbench/annotation.hpp"
#include "propbench/corpus.hpp"
#include "propbench/error.hpp"
#include "propbench/json_io.hpp"
#include "propbench/prompt.hpp"
#include "propbench/sampling.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace propbench {

enum class DistillFormat { messages_jsonl, prompt_completion_jsonl };

inline DistillFormat parse_distill_format(const std::string& s) {
  if (s == "messages-jsonl") return DistillFormat::messages_jsonl;
  if (s == "prompt-completion-jsonl") return DistillFormat::prompt_completion_jsonl;
  throw ConfigError("unknown distillation format '" + s + "'");
}

// One teacher-labelled training pair for a student model.
struct DistillRecord {
  std::string doc_id;
  Messages prompt;
  std::string completion;
  std::string global_label;

  json to_json(DistillFormat format) const {
    if (format == DistillFormat::messages_jsonl) {
      json messages = propbench::to_json(prompt);
      messages.push_back({{"role", "assistant"}, {"content", completion}});
      return {{"doc_id", doc_id}, {"global_label", global_label}, {"messages", messages}};
    }
    return {{"doc_id", doc_id}, {"global_label", global_label}, {"prompt", propbench::to_json(prompt)},
            {"completion", completion}};
  }

  // Accepts either export format.
  static DistillRecord from_json(const json& j) {
    DistillRecord r;
    r.doc_id = j.value("doc_id", "");
    r.global_label = j.at("global_label").get<std::string>();
    if (j.contains("messages")) {
      for (const auto& m : j.at("messages")) {
        if (m.at("role") == "assistant") r.completion = m.at("content").get<std::string>();
        else r.prompt.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
      }
    } else {
      for (const auto& m : j.at("prompt")) r.prompt.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
      r.completion = j.at("completion").get<std::string>();
    }
    return r;
  }
};

inline DistillFormat detect_distill_format(const json& j) {
  return j.contains("messages") ? DistillFormat::messages_jsonl : DistillFormat::prompt_completion_jsonl;
}

// Builds one record per propagandistic result; empty-span results are
// skipped. The completion is the canonical structured output.
inline std::vector<DistillRecord> distill_records(const std::vector<AnnotationResult>& results, const Corpus& corpus,
                                                  const PromptSpec& spec, const Taxonomy& tax = Taxonomy::builtin()) {
  std::vector<DistillRecord> out;
  for (const auto& r : results) {
    if (!r.propagandistic()) continue;
    const Document* doc = corpus.find(r.doc_id);
    if (!doc) throw ItemSetMismatchError("result for unknown document '" + r.doc_id + "'");
    out.push_back({r.doc_id, build_prompt(*doc, spec, tax), canonical_serialization(r), *r.global_label});
  }
  return out;
}

inline std::size_t write_distill(const std::filesystem::path& path, const std::vector<DistillRecord>& records,
                                 DistillFormat format) {
  std::vector<json> lines;
  for (const auto& r : records) lines.push_back(r.to_json(format));
  write_jsonl(path, lines);
  return records.size();
}

inline std::size_t export_distill(const std::vector<AnnotationResult>& results, const Corpus& corpus,
                                  const PromptSpec& spec, const std::filesystem::path& path, DistillFormat format,
                                  const Taxonomy& tax = Taxonomy::builtin()) {
  return write_distill(path, distill_records(results, corpus, spec, tax), format);
}

inline std::vector<DistillRecord> load_distill(const std::filesystem::path& path, DistillFormat* format = nullptr) {
  std::vector<DistillRecord> out;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    try {
      if (format && out.empty()) *format = detect_distill_format(j);
      out.push_back(DistillRecord::from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(line, std::string("invalid distillation record: ") + e.what());
    }
  });
  return out;
}

inline Split<DistillRecord> split_distill(const std::vector<DistillRecord>& records, std::uint64_t seed) {
  if (records.empty()) throw EmptyInputError("nothing to split");
  return split_80_20(records, seed, [](const DistillRecord& r) { return r.global_label; });
}

} // namespace propbench
