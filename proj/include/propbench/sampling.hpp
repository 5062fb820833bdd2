#pragma once

#include "propbench/annotation.hpp"
#include "propbench/error.hpp"
#include "propbench/rng.hpp"
#include "propbench/taxonomy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace propbench {

struct StratifiedPlan {
  std::map<std::string, std::size_t> quotas;
  std::optional<std::size_t> default_quota;
  // Strata with at most this many members are taken whole.
  std::size_t include_all_below = 10;
  std::uint64_t seed = 0;

  std::size_t quota_for(const std::string& label) const {
    if (auto it = quotas.find(label); it != quotas.end()) return it->second;
    if (default_quota) return *default_quota;
    throw ConfigError("no quota for stratum '" + label + "' and no default quota");
  }
};

struct SampleOutcome {
  std::vector<std::string> doc_ids;
  std::map<std::string, std::size_t> stratum_sizes;
  std::map<std::string, std::size_t> taken;
  std::vector<std::string> warnings;

  json to_json() const {
    return {{"doc_ids", doc_ids}, {"stratum_sizes", stratum_sizes}, {"taken", taken}, {"warnings", warnings}};
  }
};

inline std::uint64_t stratum_seed(std::uint64_t seed, const std::string& label) {
  return splitmix64(seed ^ fnv1a64(label));
}

// Stratifies propagandistic results by global label. A zero quota skips the
// stratum; small strata are taken whole; larger ones contribute a seeded
// uniform draw without replacement. Output is grouped in label order, then
// draw order.
inline SampleOutcome stratified_sample(const std::vector<AnnotationResult>& results, const StratifiedPlan& plan,
                                       const Taxonomy& tax = Taxonomy::builtin()) {
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& r : results)
    if (r.global_label) strata[*r.global_label].push_back(r.doc_id);

  std::vector<std::string> order = tax.label_set(LabelSetKind::split);
  for (const auto& [label, members] : strata)
    if (std::find(order.begin(), order.end(), label) == order.end()) order.push_back(label);

  SampleOutcome out;
  for (const auto& label : order) {
    auto it = strata.find(label);
    if (it == strata.end()) continue;
    auto members = it->second;
    out.stratum_sizes[label] = members.size();
    const std::size_t quota = plan.quota_for(label);
    if (quota == 0) {
      out.taken[label] = 0;
      continue;
    }
    if (members.size() <= plan.include_all_below) {
      out.taken[label] = members.size();
      out.doc_ids.insert(out.doc_ids.end(), members.begin(), members.end());
      continue;
    }
    std::size_t want = quota;
    if (want > members.size()) {
      out.warnings.push_back("quota " + std::to_string(quota) + " for '" + label + "' exceeds stratum size " +
                             std::to_string(members.size()) + "; clamped");
      want = members.size();
    }
    Rng rng(stratum_seed(plan.seed, label));
    for (std::size_t i = 0; i < want; ++i) {
      std::swap(members[i], members[i + rng.below(members.size() - i)]);
      out.doc_ids.push_back(members[i]);
    }
    out.taken[label] = want;
  }
  return out;
}

// Test-set size for a stratum of n records.
inline std::size_t test_share(std::size_t n) {
  if (n < 2) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n))));
}

template <typename Record>
struct Split {
  std::vector<Record> train;
  std::vector<Record> test;
};

// Per-stratum 80/20 partition. key(record) names the stratum; membership of
// the test share is a seeded shuffle within the stratum. Both partitions keep
// the input order.
template <typename Record, typename KeyFn>
Split<Record> split_80_20(const std::vector<Record>& records, std::uint64_t seed, KeyFn key) {
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) strata[key(records[i])].push_back(i);
  std::vector<bool> in_test(records.size(), false);
  for (auto& [label, idx] : strata) {
    Rng rng(stratum_seed(seed, label));
    rng.shuffle(idx);
    const std::size_t n_test = test_share(idx.size());
    for (std::size_t i = 0; i < n_test; ++i) in_test[idx[i]] = true;
  }
  Split<Record> out;
  for (std::size_t i = 0; i < records.size(); ++i) (in_test[i] ? out.test : out.train).push_back(records[i]);
  return out;
}

} // namespace propbench
