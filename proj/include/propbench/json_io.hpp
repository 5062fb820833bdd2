#pragma once

#include "propbench/error.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace propbench {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  auto content = read_file(path);
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw MalformedJsonError(path.string() + ": " + e.what());
  }
}

// Calls fn(line_number, record) for every non-blank line. Parse failures are
// reported with their 1-based line number.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    fn(lineno, record);
  }
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::vector<json> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) { out.push_back(j); });
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::string body;
  for (const auto& r : records) {
    body += r.dump();
    body += '\n';
  }
  write_file(path, body);
}

} // namespace propbench
