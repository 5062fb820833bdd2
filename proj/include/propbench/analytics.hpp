#pragma once

#include "propbench/annotation.hpp"
#include "propbench/error.hpp"
#include "propbench/text.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace propbench {

// Mode of the run global labels ("no label" counts as a value). Ties go to
// the value that appears first in run order; the spans are those of the
// earliest run carrying the winning value.
inline AnnotationResult aggregate_mode(const RunBundle& bundle) {
  if (bundle.results.empty()) throw EmptyBundleError("bundle for '" + bundle.doc_id + "' has no successful run");
  std::vector<const AnnotationResult*> runs;
  for (const auto& r : bundle.results) runs.push_back(&r);
  std::stable_sort(runs.begin(), runs.end(), [](auto* a, auto* b) { return a->run_index < b->run_index; });

  auto key = [](const AnnotationResult* r) { return r->global_label.value_or(std::string()); };
  std::map<std::string, int> counts;
  for (auto* r : runs) ++counts[key(r)];
  const AnnotationResult* winner = nullptr;
  int best = 0;
  for (auto* r : runs) {
    int c = counts[key(r)];
    if (c > best) {
      best = c;
      winner = r;
    }
  }
  AnnotationResult out = *winner;
  out.diagnostics.push_back("mode_of:" + std::to_string(runs.size()) + ":support:" + std::to_string(best));
  return out;
}

enum class StabilityFacet { local_label, extracted_spans, global_label };

struct StabilityReport {
  static constexpr std::array<int, 3> thresholds{3, 4, 5};
  std::size_t items = 0;
  // counts[facet][threshold index]
  std::array<std::array<std::size_t, 3>, 3> counts{};

  double rate(StabilityFacet facet, std::size_t threshold_index) const {
    if (items == 0) return 0.0;
    return static_cast<double>(counts[static_cast<std::size_t>(facet)][threshold_index]) / static_cast<double>(items);
  }

  json to_json() const {
    static const char* names[] = {"local_label", "extracted_spans", "global_label"};
    static const char* tnames[] = {">=3/5", ">=4/5", "5/5"};
    json rates = json::object();
    json cnt = json::object();
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t t = 0; t < 3; ++t) {
        rates[names[f]][tnames[t]] = rate(static_cast<StabilityFacet>(f), t);
        cnt[names[f]][tnames[t]] = counts[f][t];
      }
    return {{"items", items}, {"rates", rates}, {"counts", cnt}};
  }
};

namespace detail {

inline std::string multiset_key(std::vector<std::string> values) {
  std::sort(values.begin(), values.end());
  std::string key;
  for (const auto& v : values) {
    key += v;
    key += '\x1f';
  }
  return key;
}

inline std::size_t max_multiplicity(const std::vector<std::string>& keys) {
  std::map<std::string, std::size_t> c;
  std::size_t best = 0;
  for (const auto& k : keys) best = std::max(best, ++c[k]);
  return best;
}

} // namespace detail

inline std::string stability_key(const AnnotationResult& r, StabilityFacet facet) {
  switch (facet) {
  case StabilityFacet::global_label:
    return r.global_label.value_or(std::string());
  case StabilityFacet::local_label: {
    std::vector<std::string> v;
    for (const auto& s : r.spans) v.push_back(s.local_label);
    return detail::multiset_key(std::move(v));
  }
  case StabilityFacet::extracted_spans: {
    std::vector<std::string> v;
    for (const auto& s : r.spans) v.push_back(text::fold(s.span));
    return detail::multiset_key(std::move(v));
  }
  }
  return {};
}

inline StabilityReport stability_report(const std::vector<RunBundle>& bundles, int k = 5) {
  StabilityReport rep;
  for (const auto& b : bundles) {
    if (static_cast<int>(b.results.size()) != k)
      throw WrongKError("bundle '" + b.doc_id + "' has " + std::to_string(b.results.size()) +
                        " successful runs, expected " + std::to_string(k));
    ++rep.items;
    for (std::size_t f = 0; f < 3; ++f) {
      std::vector<std::string> keys;
      for (const auto& r : b.results) keys.push_back(stability_key(r, static_cast<StabilityFacet>(f)));
      auto m = detail::max_multiplicity(keys);
      for (std::size_t t = 0; t < 3; ++t)
        if (m >= static_cast<std::size_t>(StabilityReport::thresholds[t])) ++rep.counts[f][t];
    }
  }
  return rep;
}

struct PositionalReport {
  std::size_t n_filtered = 0;
  std::size_t first_span_matches = 0;
  std::size_t majority_exists = 0;
  std::size_t majority_matches = 0;

  static double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }
  double first_span_match_rate() const { return ratio(first_span_matches, n_filtered); }
  double majority_exists_rate() const { return ratio(majority_exists, n_filtered); }
  double majority_match_rate() const { return ratio(majority_matches, majority_exists); }

  json to_json() const {
    return {{"n_filtered", n_filtered},
            {"first_span_match_rate", first_span_match_rate()},
            {"majority_exists_rate", majority_exists_rate()},
            {"majority_match_rate", majority_match_rate()}};
  }
};

// Restricted to results with at least three spans.
inline PositionalReport positional_analysis(const std::vector<AnnotationResult>& results) {
  PositionalReport rep;
  for (const auto& r : results) {
    if (r.spans.size() < 3 || !r.global_label) continue;
    ++rep.n_filtered;
    if (r.spans.front().local_label == *r.global_label) ++rep.first_span_matches;
    std::map<std::string, std::size_t> counts;
    for (const auto& s : r.spans) ++counts[s.local_label];
    for (const auto& [label, c] : counts) {
      if (2 * c > r.spans.size()) {
        ++rep.majority_exists;
        if (label == *r.global_label) ++rep.majority_matches;
      }
    }
  }
  return rep;
}

struct SpanHistogram {
  // Buckets for 1, 2, 3, 4 and 5+ spans.
  std::array<std::size_t, 5> buckets{};

  std::size_t total() const {
    std::size_t t = 0;
    for (auto b : buckets) t += b;
    return t;
  }

  json to_json() const {
    return {{"1", buckets[0]}, {"2", buckets[1]}, {"3", buckets[2]}, {"4", buckets[3]}, {"5+", buckets[4]},
            {"total", total()}};
  }
};

inline SpanHistogram span_histogram(const std::vector<AnnotationResult>& results) {
  SpanHistogram h;
  for (const auto& r : results) {
    if (r.spans.empty()) continue;
    ++h.buckets[std::min<std::size_t>(r.spans.size(), 5) - 1];
  }
  return h;
}

// Global-label counts over propagandistic results, in label-set order.
inline std::vector<std::pair<std::string, std::size_t>> global_distribution(
    const std::vector<AnnotationResult>& results, const Taxonomy& tax = Taxonomy::builtin()) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : results)
    if (r.global_label) ++counts[*r.global_label];
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& id : tax.label_set(LabelSetKind::split)) out.emplace_back(id, counts[id]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

} // namespace propbench
