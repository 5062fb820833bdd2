#pragma once

#include "propbench/annotation.hpp"
#include "propbench/corpus.hpp"
#include "propbench/json_io.hpp"
#include "propbench/rng.hpp"
#include "propbench/taxonomy.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace propbench {

struct Message {
  std::string role;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

using Messages = std::vector<Message>;

inline json to_json(const Messages& messages) {
  json out = json::array();
  for (const auto& m : messages) out.push_back({{"role", m.role}, {"content", m.content}});
  return out;
}

inline constexpr const char* kDefaultPreamble =
    "You are an intelligent annotation assistant specializing in detecting propaganda. "
    "Analyze the presented text, explain your findings and pre-annotate it using the "
    "propaganda techniques listed below. You MUST answer with valid JSON that follows the "
    "output schema.";

inline constexpr const char* kDefaultSetting =
    "**Setting**: Detection of propaganda directed against the main opposition (i.e., Ukraine), "
    "against other opponents (e.g., Western countries), or in favour of the Russian government.";

struct PromptSpec {
  std::string preamble = kDefaultPreamble;
  std::string setting_note = kDefaultSetting;
  std::vector<std::string> label_order;
  std::vector<std::string> fewshot_order;
  std::optional<std::uint64_t> shuffle_seed;

  // Declaration order for both lists.
  static PromptSpec defaults(const Taxonomy& tax = Taxonomy::builtin()) {
    PromptSpec spec;
    spec.label_order = tax.label_set(LabelSetKind::split);
    spec.fewshot_order = spec.label_order;
    return spec;
  }

  // Independent permutations of definitions and exemplars drawn from seed.
  static PromptSpec shuffled(std::uint64_t seed, const Taxonomy& tax = Taxonomy::builtin()) {
    PromptSpec spec = defaults(tax);
    spec.shuffle_seed = seed;
    Rng rng(seed);
    rng.shuffle(spec.label_order);
    rng.shuffle(spec.fewshot_order);
    return spec;
  }

  bool orders_valid(const Taxonomy& tax = Taxonomy::builtin()) const {
    auto expected = tax.label_set(LabelSetKind::split);
    auto is_perm = [&](std::vector<std::string> v) {
      auto e = expected;
      std::sort(v.begin(), v.end());
      std::sort(e.begin(), e.end());
      return v == e;
    };
    return is_perm(label_order) && is_perm(fewshot_order);
  }
};

inline std::string render_system_prompt(const PromptSpec& spec, const Taxonomy& tax = Taxonomy::builtin()) {
  std::string s;
  s += spec.preamble;
  s += "\n\n";
  s += spec.setting_note;
  s += "\n\n";
  s += "1. **Identify the specific words or text spans that indicate propaganda.**\n\n";
  s += "2. **For each extracted span, explain why it should be considered propaganda.**\n\n";
  s += "3. **For each span, determine the dominant propaganda technique from the following list**:\n";
  for (const auto& id : spec.label_order) {
    const auto& l = tax.at(id);
    s += "    - " + l.name + " (" + l.id + "): " + l.definition + "\n";
  }
  s += "\n4. **Finally, assign the global label of the span that is most representative for the full text.**\n\n";
  s += "**Examples**:\n";
  for (const auto& id : spec.fewshot_order) {
    const auto& l = tax.at(id);
    s += "Example (" + l.name + "):\n";
    s += "Text: " + l.few_shot + "\n";
    s += "Label: " + l.id + "\n\n";
  }
  s += "**Output Format:**\nRespond in **valid JSON** with the structure:\n";
  s += output_schema(tax).dump(4);
  s += "\n";
  return s;
}

inline Messages build_prompt(const Document& doc, const PromptSpec& spec, const Taxonomy& tax = Taxonomy::builtin(),
                             TextSource source = TextSource::normalized) {
  return {{"system", render_system_prompt(spec, tax)},
          {"user", source == TextSource::normalized ? doc.normalized_text : doc.raw_text}};
}

} // namespace propbench
