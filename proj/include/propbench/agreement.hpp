#pragma once

#include "propbench/csv.hpp"
#include "propbench/error.hpp"
#include "propbench/json_io.hpp"
#include "propbench/rng.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace propbench {

using Cell = std::optional<std::string>;

// Items x annotators nominal labels; std::nullopt marks a missing cell.
struct LabelMatrix {
  std::vector<std::string> item_ids;
  std::vector<std::string> annotator_ids;
  std::vector<std::vector<Cell>> cells; // [item][annotator]
  std::vector<std::string> label_set;   // optional declared universe

  std::size_t items() const { return item_ids.size(); }
  std::size_t annotators() const { return annotator_ids.size(); }

  void validate() const {
    if (item_ids.empty()) throw ShapeMismatchError("label matrix needs at least one item");
    if (annotator_ids.size() < 2) throw ShapeMismatchError("label matrix needs at least two annotators");
    if (cells.size() != item_ids.size()) throw ShapeMismatchError("row count does not match item ids");
    for (const auto& row : cells)
      if (row.size() != annotator_ids.size()) throw ShapeMismatchError("row width does not match annotator ids");
    if (!label_set.empty()) {
      std::set<std::string> allowed(label_set.begin(), label_set.end());
      for (std::size_t i = 0; i < cells.size(); ++i)
        for (const auto& c : cells[i])
          if (c && !allowed.count(*c))
            throw UnknownLabelError("item '" + item_ids[i] + "': label '" + *c + "' outside declared label set");
    }
  }

  static LabelMatrix from_rows(std::vector<std::vector<Cell>> rows) {
    LabelMatrix m;
    std::size_t width = rows.empty() ? 0 : rows.front().size();
    for (std::size_t i = 0; i < rows.size(); ++i) m.item_ids.push_back("item" + std::to_string(i + 1));
    for (std::size_t j = 0; j < width; ++j) m.annotator_ids.push_back("ann" + std::to_string(j + 1));
    m.cells = std::move(rows);
    return m;
  }

  // CSV with header item_id,<annotator>...; empty cell = missing.
  static LabelMatrix from_csv(const csv::Table& t) {
    if (t.header.size() < 3 || t.header[0] != "item_id")
      throw ParseError(1, "label matrix header must be item_id,<annotator>,<annotator>...");
    LabelMatrix m;
    m.annotator_ids.assign(t.header.begin() + 1, t.header.end());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      if (row.size() > t.header.size()) throw ParseError(t.row_lines[r], "too many columns");
      m.item_ids.push_back(row.empty() ? std::string() : row[0]);
      std::vector<Cell> cells(m.annotator_ids.size());
      for (std::size_t j = 1; j < row.size(); ++j)
        if (!row[j].empty()) cells[j - 1] = row[j];
      m.cells.push_back(std::move(cells));
    }
    return m;
  }

  static LabelMatrix load(const std::filesystem::path& p) { return from_csv(csv::read(p)); }

  std::string to_csv() const {
    csv::Row header{"item_id"};
    header.insert(header.end(), annotator_ids.begin(), annotator_ids.end());
    std::string out = csv::format_row(header);
    for (std::size_t i = 0; i < items(); ++i) {
      csv::Row row{item_ids[i]};
      for (const auto& c : cells[i]) row.push_back(c.value_or(""));
      out += csv::format_row(row);
    }
    return out;
  }
};

namespace detail {

inline std::size_t present(const std::vector<Cell>& row) {
  return static_cast<std::size_t>(std::count_if(row.begin(), row.end(), [](const Cell& c) { return c.has_value(); }));
}

// Largest number of annotators sharing one label in the row.
inline std::size_t top_count(const std::vector<Cell>& row) {
  std::map<std::string, std::size_t> counts;
  std::size_t best = 0;
  for (const auto& c : row)
    if (c) best = std::max(best, ++counts[*c]);
  return best;
}

} // namespace detail

// Fraction of items where some label is chosen by at least quorum
// annotators. Items with every cell missing are left out.
inline double raw_agreement(const LabelMatrix& m, std::size_t quorum) {
  if (quorum < 1 || quorum > m.annotators())
    throw QuorumRangeError("quorum " + std::to_string(quorum) + " outside 1.." + std::to_string(m.annotators()));
  std::size_t considered = 0, agreeing = 0;
  for (const auto& row : m.cells) {
    if (detail::present(row) == 0) continue;
    ++considered;
    if (detail::top_count(row) >= quorum) ++agreeing;
  }
  return considered ? static_cast<double>(agreeing) / static_cast<double>(considered) : 0.0;
}

// Krippendorff's alpha for nominal data via the coincidence matrix. Units
// with fewer than two values are not pairable and are skipped.
inline double krippendorff_alpha(const LabelMatrix& m) {
  std::map<std::string, std::size_t> index;
  for (const auto& row : m.cells)
    for (const auto& c : row)
      if (c) index.try_emplace(*c, index.size());
  const std::size_t v = index.size();
  std::vector<double> coincidence(v * v, 0.0);
  for (const auto& row : m.cells) {
    std::vector<std::size_t> values;
    for (const auto& c : row)
      if (c) values.push_back(index.at(*c));
    const std::size_t mu = values.size();
    if (mu < 2) continue;
    const double w = 1.0 / static_cast<double>(mu - 1);
    for (std::size_t a = 0; a < mu; ++a)
      for (std::size_t b = 0; b < mu; ++b)
        if (a != b) coincidence[values[a] * v + values[b]] += w;
  }
  std::vector<double> marginal(v, 0.0);
  double n = 0.0, disagree = 0.0;
  for (std::size_t c = 0; c < v; ++c)
    for (std::size_t k = 0; k < v; ++k) {
      marginal[c] += coincidence[c * v + k];
      if (c != k) disagree += coincidence[c * v + k];
    }
  for (double x : marginal) n += x;
  if (n < 2.0 - 1e-9) throw NoPairableValuesError("Krippendorff's alpha needs at least two pairable values");
  double expected_pairs = 0.0;
  for (std::size_t c = 0; c < v; ++c)
    for (std::size_t k = 0; k < v; ++k)
      if (c != k) expected_pairs += marginal[c] * marginal[k];
  if (expected_pairs == 0.0) return 1.0;
  if (disagree == 0.0) return 1.0;
  // 1 - Do/De with Do = disagree/n and De = expected_pairs/(n(n-1)).
  return 1.0 - (n - 1.0) * disagree / expected_pairs;
}

struct AgreementReport {
  std::map<std::size_t, double> raw_quorum;
  double alpha = 0.0;

  json to_json(std::size_t annotators) const {
    json raw = json::object();
    for (const auto& [q, f] : raw_quorum) raw[std::to_string(q) + "/" + std::to_string(annotators)] = f;
    return {{"raw_quorum", raw}, {"alpha", alpha}};
  }
};

inline AgreementReport agreement_report(const LabelMatrix& m) {
  m.validate();
  AgreementReport r;
  for (std::size_t q = 2; q <= m.annotators(); ++q) r.raw_quorum[q] = raw_agreement(m, q);
  r.alpha = krippendorff_alpha(m);
  return r;
}

enum class CoarseSubsetMode { exactly, at_least };

// Fine-label agreement conditioned on the coarse agreement level.
// Rows: coarse 2/3 (exactly or at least, per mode) and coarse 3/3.
// Columns: fine >=2/3 and fine 3/3.
struct ConditionalTable {
  CoarseSubsetMode mode = CoarseSubsetMode::exactly;
  std::array<std::size_t, 2> subset_sizes{};
  std::array<std::array<std::size_t, 2>, 2> counts{};

  double cell(std::size_t row, std::size_t col) const {
    return subset_sizes[row] ? static_cast<double>(counts[row][col]) / static_cast<double>(subset_sizes[row]) : 0.0;
  }

  json to_json() const {
    return {{"mode", mode == CoarseSubsetMode::exactly ? "exactly" : "at_least"},
            {"2/3 coarse", {{"items", subset_sizes[0]}, {"2/3 fine", cell(0, 0)}, {"3/3 fine", cell(0, 1)}}},
            {"3/3 coarse", {{"items", subset_sizes[1]}, {"2/3 fine", cell(1, 0)}, {"3/3 fine", cell(1, 1)}}}};
  }
};

inline ConditionalTable conditional_agreement(const LabelMatrix& coarse, const LabelMatrix& fine,
                                              CoarseSubsetMode mode = CoarseSubsetMode::exactly) {
  if (coarse.item_ids != fine.item_ids || coarse.annotator_ids != fine.annotator_ids)
    throw ShapeMismatchError("coarse and fine matrices must share items and annotators");
  if (coarse.annotators() != 3) throw ShapeMismatchError("conditional agreement requires exactly three annotators");
  ConditionalTable t;
  t.mode = mode;
  for (std::size_t i = 0; i < coarse.items(); ++i) {
    if (detail::present(coarse.cells[i]) == 0) continue;
    const std::size_t c = detail::top_count(coarse.cells[i]);
    const std::size_t f = detail::top_count(fine.cells[i]);
    const bool rows[2] = {mode == CoarseSubsetMode::exactly ? c == 2 : c >= 2, c == 3};
    for (std::size_t r = 0; r < 2; ++r) {
      if (!rows[r]) continue;
      ++t.subset_sizes[r];
      if (f >= 2) ++t.counts[r][0];
      if (f >= 3) ++t.counts[r][1];
    }
  }
  return t;
}

struct KappaReport {
  double kappa = 0.0;
  double observed_agreement = 0.0;
  double expected_agreement = 0.0;
  std::size_t n = 0;

  json to_json() const {
    return {{"kappa", kappa}, {"observed_agreement", observed_agreement}, {"expected_agreement", expected_agreement},
            {"n", n}};
  }
};

inline KappaReport cohen_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() != b.size())
    throw LengthMismatchError("label lists differ in length: " + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()));
  if (a.empty()) throw EmptyInputError("Cohen's kappa needs at least one item");
  KappaReport r;
  r.n = a.size();
  const double n = static_cast<double>(a.size());
  std::map<std::string, std::pair<std::size_t, std::size_t>> marg;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++same;
    ++marg[a[i]].first;
    ++marg[b[i]].second;
  }
  r.observed_agreement = static_cast<double>(same) / n;
  for (const auto& [label, c] : marg)
    r.expected_agreement += (static_cast<double>(c.first) / n) * (static_cast<double>(c.second) / n);
  if (r.expected_agreement >= 1.0) {
    r.kappa = 1.0;
  } else {
    r.kappa = (r.observed_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
  }
  return r;
}

enum class FallbackMode {
  single,     // the item's stored LLM label
  random_run, // seeded uniform pick among the item's per-run LLM labels
};

struct MajorityResult {
  std::vector<std::string> labels;
  std::vector<bool> fallback_used;
  std::uint64_t seed = 0;
  FallbackMode mode = FallbackMode::single;

  json to_json(const std::vector<std::string>& item_ids) const {
    json items = json::array();
    for (std::size_t i = 0; i < labels.size(); ++i)
      items.push_back({{"item_id", item_ids[i]}, {"label", labels[i]}, {"fallback", static_cast<bool>(fallback_used[i])}});
    return {{"seed", seed}, {"fallback_mode", mode == FallbackMode::single ? "single" : "random_run"}, {"items", items}};
  }
};

// Human label per item: the label chosen by at least two thirds of the
// annotators, else the LLM prediction for the item.
inline MajorityResult majority_with_fallback(const LabelMatrix& m, const std::map<std::string, std::string>& llm,
                                             std::uint64_t seed, FallbackMode mode = FallbackMode::single,
                                             const std::map<std::string, std::vector<std::string>>& runs = {}) {
  MajorityResult out;
  out.seed = seed;
  out.mode = mode;
  Rng rng(seed);
  for (std::size_t i = 0; i < m.items(); ++i) {
    const auto& id = m.item_ids[i];
    std::map<std::string, std::size_t> counts;
    std::optional<std::string> majority;
    for (const auto& c : m.cells[i])
      if (c && 3 * ++counts[*c] >= 2 * m.annotators()) majority = *c;
    if (majority) {
      out.labels.push_back(*majority);
      out.fallback_used.push_back(false);
      continue;
    }
    std::string fallback;
    auto run_it = runs.find(id);
    if (mode == FallbackMode::random_run && run_it != runs.end() && !run_it->second.empty()) {
      fallback = run_it->second[rng.below(run_it->second.size())];
    } else {
      auto it = llm.find(id);
      if (it == llm.end()) throw ItemSetMismatchError("no LLM label for item '" + id + "'");
      fallback = it->second;
    }
    out.labels.push_back(fallback);
    out.fallback_used.push_back(true);
  }
  return out;
}

} // namespace propbench
