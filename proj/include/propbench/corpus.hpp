#pragma once

#include "propbench/csv.hpp"
#include "propbench/error.hpp"
#include "propbench/json_io.hpp"
#include "propbench/rng.hpp"
#include "propbench/taxonomy.hpp"
#include "propbench/text.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace propbench {

struct Document {
  std::string id;
  std::string raw_text;
  std::string normalized_text;
  bool binary_propaganda = false;
  std::optional<std::string> weak_label;
  json meta = json::object();

  static Document make(std::string id, std::string raw, bool positive,
                       std::optional<std::string> weak = std::nullopt) {
    Document d;
    d.id = std::move(id);
    d.normalized_text = text::normalize(raw);
    d.raw_text = std::move(raw);
    d.binary_propaganda = positive;
    d.weak_label = std::move(weak);
    return d;
  }

  json to_json() const {
    json j{{"id", id},
           {"text", raw_text},
           {"normalized_text", normalized_text},
           {"binary_propaganda", binary_propaganda},
           {"weak_label", weak_label ? json(*weak_label) : json(nullptr)},
           {"meta", meta}};
    return j;
  }
};

struct CorpusManifest {
  std::string source_path;
  std::string ingested_at;
  std::string content_hash;
  std::size_t total = 0;
  std::size_t positive = 0;

  json to_json() const {
    return {{"source_path", source_path},
            {"ingested_at", ingested_at},
            {"content_hash", content_hash},
            {"counts", {{"total", total}, {"positive", positive}}}};
  }
};

struct Corpus {
  std::vector<Document> documents;
  CorpusManifest manifest;

  std::size_t size() const { return documents.size(); }

  const Document* find(std::string_view id) const {
    for (const auto& d : documents)
      if (d.id == id) return &d;
    return nullptr;
  }

  void recount() {
    manifest.total = documents.size();
    manifest.positive = 0;
    for (const auto& d : documents) manifest.positive += d.binary_propaganda ? 1 : 0;
  }
};

enum class CorpusFormat { jsonl, csv };

namespace detail {

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool parse_bool_field(const std::string& v, std::size_t line) {
  auto s = text::ascii_lower(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no" || s.empty()) return false;
  throw ParseError(line, "invalid boolean '" + v + "' in binary_propaganda");
}

inline std::optional<std::string> weak_label_field(const std::string& v, const Taxonomy& tax, std::size_t line) {
  if (v.empty() || v == "none" || v == "null") return std::nullopt;
  if (!tax.is_split(v)) throw ParseError(line, "unknown weak_label '" + v + "'");
  return v;
}

} // namespace detail

inline Document document_from_json(const json& rec, std::size_t line, const Taxonomy& tax) {
  if (!rec.is_object()) throw ParseError(line, "record is not a JSON object");
  auto field = [&](const char* key) -> const json& {
    auto it = rec.find(key);
    if (it == rec.end()) throw ParseError(line, std::string("missing field '") + key + "'");
    return *it;
  };
  const auto& id = field("id");
  const auto& text_field = field("text");
  if (!text_field.is_string()) throw ParseError(line, "field 'text' must be a string");
  std::string id_str = id.is_string() ? id.get<std::string>() : id.dump();
  bool positive = false;
  if (auto it = rec.find("binary_propaganda"); it != rec.end() && !it->is_null()) {
    if (it->is_boolean()) positive = it->get<bool>();
    else if (it->is_number_integer()) positive = it->get<long long>() != 0;
    else if (it->is_string()) positive = detail::parse_bool_field(it->get<std::string>(), line);
    else throw ParseError(line, "field 'binary_propaganda' must be boolean");
  } else {
    throw ParseError(line, "missing field 'binary_propaganda'");
  }
  std::optional<std::string> weak;
  if (auto it = rec.find("weak_label"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError(line, "field 'weak_label' must be a string or null");
    weak = detail::weak_label_field(it->get<std::string>(), tax, line);
  }
  auto doc = Document::make(std::move(id_str), text_field.get<std::string>(), positive, std::move(weak));
  if (auto it = rec.find("meta"); it != rec.end() && it->is_object()) doc.meta = *it;
  return doc;
}

inline Corpus ingest(const std::filesystem::path& path, CorpusFormat format,
                     const Taxonomy& tax = Taxonomy::builtin()) {
  Corpus corpus;
  std::set<std::string> ids;
  std::map<std::string, std::size_t> first_line;
  auto add = [&](Document doc, std::size_t line) {
    if (!ids.insert(doc.id).second)
      throw DuplicateIdError("line " + std::to_string(line) + ": duplicate document id '" + doc.id +
                             "' (first seen on line " + std::to_string(first_line[doc.id]) + ")");
    first_line[doc.id] = line;
    corpus.documents.push_back(std::move(doc));
  };

  const std::string content = read_file(path);
  if (format == CorpusFormat::jsonl) {
    for_each_jsonl(path, [&](std::size_t line, const json& rec) { add(document_from_json(rec, line, tax), line); });
  } else {
    auto table = csv::parse(content);
    auto id_col = table.column("id"), text_col = table.column("text"), bin_col = table.column("binary_propaganda");
    auto weak_col = table.column("weak_label");
    if (id_col < 0 || text_col < 0 || bin_col < 0)
      throw ParseError(1, "CSV header must contain id,text,binary_propaganda");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& row = table.rows[r];
      std::size_t line = table.row_lines[r];
      auto cell = [&](std::ptrdiff_t col) -> std::string {
        if (col < 0) return {};
        if (static_cast<std::size_t>(col) >= row.size())
          throw ParseError(line, "missing column '" + table.header[static_cast<std::size_t>(col)] + "'");
        return row[static_cast<std::size_t>(col)];
      };
      auto doc = Document::make(cell(id_col), cell(text_col), detail::parse_bool_field(cell(bin_col), line),
                                detail::weak_label_field(cell(weak_col), tax, line));
      add(std::move(doc), line);
    }
  }
  corpus.manifest.source_path = path.string();
  corpus.manifest.ingested_at = detail::utc_timestamp();
  corpus.manifest.content_hash = "fnv1a64:" + hex64(fnv1a64(content));
  corpus.recount();
  return corpus;
}

inline CorpusFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? CorpusFormat::csv : CorpusFormat::jsonl;
}

inline Corpus filter_binary_positive(const Corpus& c) {
  Corpus out;
  out.manifest = c.manifest;
  for (const auto& d : c.documents)
    if (d.binary_propaganda) out.documents.push_back(d);
  out.recount();
  return out;
}

struct CorpusStats {
  std::size_t total = 0;
  std::size_t positive = 0;
  std::map<std::string, std::size_t> weak_labels;

  json to_json() const { return {{"total", total}, {"positive", positive}, {"weak_labels", weak_labels}}; }
};

inline CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  s.total = c.documents.size();
  for (const auto& d : c.documents) {
    s.positive += d.binary_propaganda ? 1 : 0;
    ++s.weak_labels[d.weak_label.value_or("none")];
  }
  return s;
}

inline std::filesystem::path manifest_path_for(const std::filesystem::path& corpus_path) {
  return corpus_path.string() + ".manifest.json";
}

inline void write_corpus(const Corpus& c, const std::filesystem::path& path) {
  std::vector<json> records;
  records.reserve(c.documents.size());
  for (const auto& d : c.documents) records.push_back(d.to_json());
  write_jsonl(path, records);
  write_file(manifest_path_for(path), c.manifest.to_json().dump(2) + "\n");
}

// Reads a corpus previously written by write_corpus (or any JSONL corpus).
inline Corpus load_corpus(const std::filesystem::path& path, const Taxonomy& tax = Taxonomy::builtin()) {
  return ingest(path, format_for(path), tax);
}

} // namespace propbench
