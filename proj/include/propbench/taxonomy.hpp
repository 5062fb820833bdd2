#pragma once

#include "propbench/error.hpp"
#include "propbench/json_io.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace propbench {

struct CoarseCategory {
  std::string code;
  std::string title;
  std::string description;
};

// One entry of the split label set. Merged canonical ids (for example
// "bandwagon_reductio_ad_hitlerum") exist only as canonical_id values.
struct FineLabel {
  std::string id;
  std::string canonical_id;
  std::string coarse;
  std::string name;
  std::string definition;
  std::string few_shot;
};

enum class LabelSetKind { split, canonical };

struct TaxonomyFinding {
  std::string kind;
  std::string subject;
  std::string message;
};

// Hierarchical propaganda label system. Immutable after load; lookups are
// linear scans over at most a few dozen entries.
class Taxonomy {
public:
  Taxonomy() = default;
  Taxonomy(std::vector<CoarseCategory> categories, std::vector<FineLabel> labels)
      : categories_(std::move(categories)), labels_(std::move(labels)) {}

  static Taxonomy from_json(const json& doc);
  static Taxonomy load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }
  // The shipped default, compiled in from data/taxonomy.json.
  static const Taxonomy& builtin();

  json to_json() const;

  const std::vector<CoarseCategory>& categories() const { return categories_; }
  const std::vector<FineLabel>& labels() const { return labels_; }

  bool is_split(std::string_view id) const { return find(id) != nullptr; }
  bool is_canonical(std::string_view id) const {
    for (const auto& l : labels_)
      if (l.canonical_id == id) return true;
    return false;
  }
  bool is_known(std::string_view id) const { return is_split(id) || is_canonical(id); }

  const FineLabel* find(std::string_view id) const {
    for (const auto& l : labels_)
      if (l.id == id) return &l;
    return nullptr;
  }

  const FineLabel& at(std::string_view id) const {
    if (const auto* l = find(id)) return *l;
    throw UnknownLabelError("unknown label: " + std::string(id));
  }

  std::string coarse_of(std::string_view id) const {
    if (const auto* l = find(id)) return l->coarse;
    for (const auto& l : labels_)
      if (l.canonical_id == id) return l.coarse;
    throw UnknownLabelError("unknown label: " + std::string(id));
  }

  std::string canonical_of(std::string_view id) const {
    if (const auto* l = find(id)) return l->canonical_id;
    if (is_canonical(id)) return std::string(id);
    throw UnknownLabelError("unknown label: " + std::string(id));
  }

  // Declaration order; canonical ids are ordered by first appearance.
  std::vector<std::string> label_set(LabelSetKind kind = LabelSetKind::split) const {
    std::vector<std::string> out;
    for (const auto& l : labels_) {
      const auto& id = kind == LabelSetKind::split ? l.id : l.canonical_id;
      if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    }
    return out;
  }

  std::vector<std::string> labels_in(std::string_view coarse, LabelSetKind kind = LabelSetKind::split) const {
    std::vector<std::string> out;
    for (const auto& id : label_set(kind))
      if (coarse_of(id) == coarse) out.push_back(id);
    return out;
  }

  bool has_category(std::string_view code) const {
    return std::any_of(categories_.begin(), categories_.end(),
                       [&](const auto& c) { return c.code == code; });
  }

private:
  std::vector<CoarseCategory> categories_;
  std::vector<FineLabel> labels_;
};

// One finding per violated invariant; empty means the taxonomy is usable.
inline std::vector<TaxonomyFinding> validate_taxonomy(const Taxonomy& t) {
  std::vector<TaxonomyFinding> findings;
  auto add = [&](std::string kind, std::string subject, std::string message) {
    findings.push_back({std::move(kind), std::move(subject), std::move(message)});
  };

  if (t.categories().size() != 3)
    add("category_count", "", "expected 3 coarse categories, found " + std::to_string(t.categories().size()));
  std::set<std::string> codes;
  for (const auto& c : t.categories()) {
    if (!codes.insert(c.code).second) add("duplicate_category", c.code, "category code declared twice");
    if (c.code != "A" && c.code != "B" && c.code != "C")
      add("invalid_category", c.code, "category code must be one of A, B, C");
  }

  std::map<std::string, std::set<std::string>> assigned;
  std::map<std::string, int> seen;
  for (const auto& l : t.labels()) {
    assigned[l.id].insert(l.coarse);
    ++seen[l.id];
    if (l.id.empty()) add("missing_id", "", "label without id");
    if (!codes.count(l.coarse))
      add("unknown_category", l.id, "label assigned to undeclared category '" + l.coarse + "'");
    if (l.definition.empty()) add("missing_definition", l.id, "label has no definition");
    if (l.few_shot.empty()) add("missing_exemplar", l.id, "label has no few-shot exemplar");
    if (l.canonical_id.empty()) add("missing_canonical", l.id, "label has no canonical id");
  }
  for (const auto& [id, cats] : assigned) {
    if (cats.size() > 1) {
      std::string list;
      for (const auto& c : cats) list += (list.empty() ? "" : ",") + c;
      add("partition_violation", id, "label assigned to several categories: " + list);
    } else if (seen[id] > 1) {
      add("duplicate_label", id, "label declared " + std::to_string(seen[id]) + " times");
    }
  }

  // Members of a merged canonical label must agree on their category.
  std::map<std::string, std::set<std::string>> canonical_cats;
  for (const auto& l : t.labels())
    if (!l.canonical_id.empty()) canonical_cats[l.canonical_id].insert(l.coarse);
  for (const auto& [cid, cats] : canonical_cats)
    if (cats.size() > 1) add("canonical_partition_violation", cid, "canonical label spans several categories");
  return findings;
}

inline Taxonomy Taxonomy::from_json(const json& doc) {
  try {
    std::vector<CoarseCategory> cats;
    for (const auto& c : doc.at("categories"))
      cats.push_back({c.at("code").get<std::string>(), c.value("title", ""), c.value("description", "")});
    std::vector<FineLabel> labels;
    for (const auto& l : doc.at("labels")) {
      FineLabel f;
      f.id = l.at("id").get<std::string>();
      f.canonical_id = l.value("canonical_id", f.id);
      f.coarse = l.at("coarse").get<std::string>();
      f.name = l.value("name", f.id);
      f.definition = l.value("definition", "");
      f.few_shot = l.value("few_shot", "");
      labels.push_back(std::move(f));
    }
    return Taxonomy(std::move(cats), std::move(labels));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid taxonomy document: ") + e.what());
  }
}

inline json Taxonomy::to_json() const {
  json cats = json::array();
  for (const auto& c : categories_)
    cats.push_back({{"code", c.code}, {"title", c.title}, {"description", c.description}});
  json labels = json::array();
  for (const auto& l : labels_)
    labels.push_back({{"id", l.id},
                      {"canonical_id", l.canonical_id},
                      {"coarse", l.coarse},
                      {"name", l.name},
                      {"definition", l.definition},
                      {"few_shot", l.few_shot}});
  return {{"categories", cats}, {"labels", labels}};
}

} // namespace propbench

#include "propbench/default_taxonomy_data.hpp"

inline const propbench::Taxonomy& propbench::Taxonomy::builtin() {
  static const Taxonomy instance = from_json(json::parse(detail::kDefaultTaxonomyJson));
  return instance;
}
