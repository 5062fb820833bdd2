#pragma once

#include "propbench/corpus.hpp"
#include "propbench/error.hpp"
#include "propbench/json_io.hpp"
#include "propbench/taxonomy.hpp"
#include "propbench/text.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace propbench {

struct SpanAnnotation {
  std::string span;
  std::string explanation;
  std::string local_label;

  friend bool operator==(const SpanAnnotation&, const SpanAnnotation&) = default;
};

// One LLM run over one document. An empty span list means the model found no
// propaganda; such results carry no global label.
struct AnnotationResult {
  std::string doc_id;
  std::vector<SpanAnnotation> spans;
  std::optional<std::string> global_label;
  std::string model_id;
  int run_index = 0;
  std::string raw_response;
  int attempts = 1;
  std::vector<std::string> diagnostics;

  bool propagandistic() const { return !spans.empty(); }

  // Structured fields only; provenance (model, raw text, attempts) is ignored.
  bool same_annotation(const AnnotationResult& o) const {
    return doc_id == o.doc_id && spans == o.spans && global_label == o.global_label;
  }

  json to_json() const {
    json s = json::array();
    for (const auto& sp : spans)
      s.push_back({{"span", sp.span}, {"explanation", sp.explanation}, {"local_label", sp.local_label}});
    return {{"doc_id", doc_id},
            {"run_index", run_index},
            {"model_id", model_id},
            {"spans", s},
            {"global_label", global_label ? json(*global_label) : json(nullptr)},
            {"propagandistic", propagandistic()},
            {"attempts", attempts},
            {"diagnostics", diagnostics},
            {"raw_response", raw_response}};
  }

  static AnnotationResult from_json(const json& j) {
    AnnotationResult r;
    r.doc_id = j.at("doc_id").get<std::string>();
    r.run_index = j.value("run_index", 0);
    r.model_id = j.value("model_id", "");
    for (const auto& s : j.at("spans"))
      r.spans.push_back({s.at("span").get<std::string>(), s.value("explanation", ""),
                         s.at("local_label").get<std::string>()});
    if (auto it = j.find("global_label"); it != j.end() && !it->is_null()) r.global_label = it->get<std::string>();
    r.attempts = j.value("attempts", 1);
    if (auto it = j.find("diagnostics"); it != j.end()) r.diagnostics = it->get<std::vector<std::string>>();
    r.raw_response = j.value("raw_response", "");
    return r;
  }
};

inline std::vector<AnnotationResult> load_results(const std::filesystem::path& path) {
  std::vector<AnnotationResult> out;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    try {
      out.push_back(AnnotationResult::from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(line, std::string("invalid annotation record: ") + e.what());
    }
  });
  return out;
}

inline void save_results(const std::filesystem::path& path, const std::vector<AnnotationResult>& results) {
  std::vector<json> lines;
  lines.reserve(results.size());
  for (const auto& r : results) lines.push_back(r.to_json());
  write_jsonl(path, lines);
}

// The structured-output document the model is asked to produce. Keys are
// emitted in sorted order, which makes this the canonical serialization.
inline json structured_output(const AnnotationResult& r) {
  json spans = json::array();
  for (const auto& s : r.spans)
    spans.push_back({{"span", s.span}, {"explanation", s.explanation}, {"local_label", s.local_label}});
  json out{{"spans", spans}};
  if (r.global_label) out["global_label"] = *r.global_label;
  return out;
}

inline std::string canonical_serialization(const AnnotationResult& r) { return structured_output(r).dump(); }

inline json output_schema(const Taxonomy& tax = Taxonomy::builtin()) {
  json labels = tax.label_set(LabelSetKind::split);
  return {
      {"$defs",
       {{"FineLabelVerdict",
         {{"title", "FineLabelVerdict"},
          {"description", "Fine-grained propaganda technique."},
          {"type", "string"},
          {"enum", labels}}},
        {"PropagandaSpan",
         {{"title", "PropagandaSpan"},
          {"description", "A propaganda span copied from the input text, with its explanation and technique."},
          {"type", "object"},
          {"properties",
           {{"span",
             {{"title", "Span"},
              {"description", "Exact text of the span as it appears in the input."},
              {"type", "string"},
              {"minLength", 1}}},
            {"explanation",
             {{"title", "Explanation"},
              {"description", "Why the span is propagandistic."},
              {"type", "string"}}},
            {"local_label",
             {{"$ref", "#/$defs/FineLabelVerdict"}, {"description", "Technique used in this span."}}}}},
          {"required", {"span", "explanation", "local_label"}},
          {"additionalProperties", false}}}}},
      {"title", "PropagandaAnnotation"},
      {"description", "Propaganda spans found in the input text and the dominant technique of the whole text."},
      {"type", "object"},
      {"properties",
       {{"spans", {{"title", "Spans"}, {"type", "array"}, {"items", {{"$ref", "#/$defs/PropagandaSpan"}}}}},
        {"global_label",
         {{"description", "Dominant technique of the whole text; null when no span was found."},
          {"anyOf", {{{"$ref", "#/$defs/FineLabelVerdict"}}, {{"type", "null"}}}}}}}},
      {"required", {"spans"}},
      {"additionalProperties", false}};
}

namespace schema {

// Validates a JSON instance against the subset of JSON Schema used by
// output_schema(): type, enum, properties, required, additionalProperties,
// items, minLength, anyOf and local $ref. Enum failures on string values
// raise UnknownLabelError; everything else raises SchemaViolationError.
class Validator {
public:
  explicit Validator(const json& root) : root_(root) {}

  void validate(const json& instance) const { check(root_, instance, ""); }

private:
  const json& resolve(const json& s) const {
    auto it = s.find("$ref");
    if (it == s.end()) return s;
    auto ref = it->get<std::string>();
    if (ref.rfind("#/", 0) != 0) throw SchemaViolationError("", "unsupported $ref " + ref);
    return root_.at(json::json_pointer(ref.substr(1)));
  }

  static bool type_matches(const std::string& type, const json& v) {
    if (type == "string") return v.is_string();
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "null") return v.is_null();
    if (type == "boolean") return v.is_boolean();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    return false;
  }

  void check(const json& schema_node, const json& v, const std::string& path) const {
    const json& s = resolve(schema_node);
    if (auto it = s.find("anyOf"); it != s.end()) {
      std::optional<UnknownLabelError> label_error;
      for (const auto& branch : *it) {
        try {
          check(branch, v, path);
          return;
        } catch (const UnknownLabelError& e) {
          label_error = e;
        } catch (const SchemaViolationError&) {
        }
      }
      if (label_error) throw *label_error;
      throw SchemaViolationError(path.empty() ? "/" : path, "value matches no permitted alternative");
    }
    if (auto it = s.find("type"); it != s.end()) {
      auto type = it->get<std::string>();
      if (!type_matches(type, v))
        throw SchemaViolationError(path.empty() ? "/" : path, "expected " + type + ", got " + v.type_name());
    }
    if (auto it = s.find("enum"); it != s.end()) {
      bool found = false;
      for (const auto& e : *it)
        if (e == v) found = true;
      if (!found) {
        if (v.is_string())
          throw UnknownLabelError((path.empty() ? "/" : path) + ": unknown label '" + v.get<std::string>() + "'");
        throw SchemaViolationError(path.empty() ? "/" : path, "value not in enum");
      }
    }
    if (auto it = s.find("minLength"); it != s.end() && v.is_string()) {
      if (text::decode_utf8(v.get<std::string>()).size() < it->get<std::size_t>())
        throw SchemaViolationError(path, "string shorter than " + std::to_string(it->get<std::size_t>()));
    }
    if (v.is_object()) {
      if (auto req = s.find("required"); req != s.end())
        for (const auto& key : *req)
          if (!v.contains(key.get<std::string>()))
            throw SchemaViolationError(path + "/" + key.get<std::string>(), "required property missing");
      auto props = s.find("properties");
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (props != s.end() && props->contains(it.key())) {
          check(props->at(it.key()), it.value(), path + "/" + it.key());
        } else if (auto ap = s.find("additionalProperties"); ap != s.end() && ap->is_boolean() && !ap->get<bool>()) {
          throw SchemaViolationError(path + "/" + it.key(), "unexpected property");
        }
      }
    }
    if (v.is_array()) {
      if (auto items = s.find("items"); items != s.end())
        for (std::size_t i = 0; i < v.size(); ++i) check(*items, v[i], path + "/" + std::to_string(i));
    }
  }

  const json& root_;
};

} // namespace schema

enum class TextSource { normalized, raw };

namespace detail {

inline std::string strip_code_fence(std::string s) {
  auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return s;
  s = s.substr(first);
  if (s.rfind("```", 0) != 0) return s;
  auto nl = s.find('\n');
  auto close = s.rfind("```");
  if (nl == std::string::npos || close <= nl) return s;
  return s.substr(nl + 1, close - nl - 1);
}

} // namespace detail

// Parses one model response against output_schema() and the document text.
// Spans must occur in the text verbatim, or failing that case-insensitively.
inline AnnotationResult parse_response(const std::string& raw, const Document& doc,
                                       const Taxonomy& tax = Taxonomy::builtin(),
                                       TextSource source = TextSource::normalized) {
  json payload;
  try {
    payload = json::parse(detail::strip_code_fence(raw));
  } catch (const json::parse_error& e) {
    throw MalformedJsonError(std::string("response is not valid JSON: ") + e.what());
  }
  const json schema_doc = output_schema(tax);
  schema::Validator(schema_doc).validate(payload);

  AnnotationResult r;
  r.doc_id = doc.id;
  r.raw_response = raw;
  for (const auto& s : payload.at("spans"))
    r.spans.push_back({s.at("span").get<std::string>(), s.at("explanation").get<std::string>(),
                       s.at("local_label").get<std::string>()});
  if (auto it = payload.find("global_label"); it != payload.end() && !it->is_null())
    r.global_label = it->get<std::string>();

  if (r.spans.empty() && r.global_label)
    throw SchemaViolationError("/global_label", "global label present although no span was extracted");
  if (!r.spans.empty() && !r.global_label)
    throw SchemaViolationError("/global_label", "global label required when spans are present");

  const std::string& haystack = source == TextSource::normalized ? doc.normalized_text : doc.raw_text;
  const std::string folded = text::ascii_lower(haystack);
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t i = 0; i < r.spans.size(); ++i) {
    const auto& span = r.spans[i].span;
    auto pos = haystack.find(span);
    if (pos == std::string::npos) {
      pos = folded.find(text::ascii_lower(span));
      if (pos == std::string::npos) throw SpanNotFoundError(span);
      r.diagnostics.push_back("case_insensitive_match:" + std::to_string(i));
    }
    ranges.emplace_back(pos, pos + span.size());
  }
  for (std::size_t i = 0; i < ranges.size(); ++i)
    for (std::size_t j = i + 1; j < ranges.size(); ++j)
      if (ranges[i].first < ranges[j].second && ranges[j].first < ranges[i].second)
        r.diagnostics.push_back("overlap:" + std::to_string(i) + "," + std::to_string(j));
  return r;
}

// A failed run: every attempt raised; kind is the last error's tag.
struct RunError {
  std::string doc_id;
  int run_index = 0;
  int attempts = 0;
  std::string kind;
  std::string message;

  json to_json() const {
    return {{"doc_id", doc_id}, {"run_index", run_index}, {"attempts", attempts}, {"kind", kind}, {"message", message}};
  }
};

// k runs over one document. results holds the successful runs ordered by
// run_index; failed runs are listed in errors.
struct RunBundle {
  std::string doc_id;
  int k = 0;
  std::vector<AnnotationResult> results;
  std::vector<RunError> errors;

  int retries() const {
    int n = 0;
    for (const auto& r : results) n += r.attempts - 1;
    for (const auto& e : errors) n += e.attempts - 1;
    return n;
  }
};

// Groups stored results into bundles (first-appearance order of doc ids,
// results sorted by run_index). k is the number of results per document.
inline std::vector<RunBundle> group_bundles(const std::vector<AnnotationResult>& results) {
  std::vector<RunBundle> bundles;
  std::map<std::string, std::size_t> index;
  for (const auto& r : results) {
    auto [it, inserted] = index.try_emplace(r.doc_id, bundles.size());
    if (inserted) bundles.push_back(RunBundle{r.doc_id, 0, {}, {}});
    bundles[it->second].results.push_back(r);
  }
  for (auto& b : bundles) {
    std::stable_sort(b.results.begin(), b.results.end(),
                     [](const auto& a, const auto& c) { return a.run_index < c.run_index; });
    b.k = static_cast<int>(b.results.size());
  }
  return bundles;
}

} // namespace propbench
