#pragma once

#include "propbench/error.hpp"
#include "propbench/json_io.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace propbench {

struct Seeds {
  std::uint64_t shuffle = 0;
  std::uint64_t sample = 0;
  std::uint64_t split = 0;
  std::uint64_t fallback = 0;
};

// Workbench settings; every key is optional in the file.
struct WorkbenchConfig {
  std::optional<std::string> endpoint;
  std::string model = "llama-3.3-70b-instruct";
  double temperature = 0.0;
  std::size_t k_runs = 5;
  std::size_t redundancy = 3;
  std::size_t include_all_below = 10;
  bool show_explanations = false;
  std::size_t max_in_flight = 4;
  Seeds seeds;

  static WorkbenchConfig from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const char* known[] = {"endpoint", "model", "temperature", "k_runs", "redundancy",
                                  "include_all_below", "show_explanations", "seeds", "max_in_flight"};
    for (const auto& [key, _] : j.items())
      if (std::find(std::begin(known), std::end(known), key) == std::end(known))
        throw ConfigError("unknown config key '" + key + "'");
    WorkbenchConfig c;
    try {
      if (j.contains("endpoint")) c.endpoint = j.at("endpoint").get<std::string>();
      c.model = j.value("model", c.model);
      c.temperature = j.value("temperature", c.temperature);
      c.k_runs = j.value("k_runs", c.k_runs);
      c.redundancy = j.value("redundancy", c.redundancy);
      c.include_all_below = j.value("include_all_below", c.include_all_below);
      c.show_explanations = j.value("show_explanations", c.show_explanations);
      c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
      if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        c.seeds.shuffle = s.value("shuffle", c.seeds.shuffle);
        c.seeds.sample = s.value("sample", c.seeds.sample);
        c.seeds.split = s.value("split", c.seeds.split);
        c.seeds.fallback = s.value("fallback", c.seeds.fallback);
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    if (c.k_runs < 1) throw ConfigError("k_runs must be at least 1");
    if (c.redundancy < 1) throw ConfigError("redundancy must be at least 1");
    if (c.max_in_flight < 1) throw ConfigError("max_in_flight must be at least 1");
    if (c.temperature < 0.0) throw ConfigError("temperature must be non-negative");
    return c;
  }

  static WorkbenchConfig load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

  json to_json() const {
    json j{{"model", model},
           {"temperature", temperature},
           {"k_runs", k_runs},
           {"redundancy", redundancy},
           {"include_all_below", include_all_below},
           {"show_explanations", show_explanations},
           {"max_in_flight", max_in_flight},
           {"seeds", {{"shuffle", seeds.shuffle}, {"sample", seeds.sample}, {"split", seeds.split}, {"fallback", seeds.fallback}}}};
    if (endpoint) j["endpoint"] = *endpoint;
    return j;
  }
};

} // namespace propbench
