#pragma once

#include "propbench/annotation.hpp"
#include "propbench/error.hpp"
#include "propbench/taxonomy.hpp"
#include "propbench/text.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace propbench::spaneval {

// 1 - levenshtein / max length over folded (lowercased, whitespace-collapsed)
// text, measured in code points.
inline double similarity(std::string_view a, std::string_view b) {
  const auto fa = text::decode_utf8(text::fold(a));
  const auto fb = text::decode_utf8(text::fold(b));
  const std::size_t longest = std::max(fa.size(), fb.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(text::levenshtein(fa, fb)) / static_cast<double>(longest);
}

enum class MatchMode { exact, fuzzy };

struct SpanMatch {
  std::size_t pred;
  std::size_t gold;
  double similarity;

  friend bool operator==(const SpanMatch&, const SpanMatch&) = default;
};

// Greedy one-to-one matching: candidate pairs meeting the bar are accepted
// by descending similarity, ties broken by gold index then pred index.
inline std::vector<SpanMatch> match_spans(const std::vector<std::string>& pred, const std::vector<std::string>& gold,
                                          MatchMode mode, double threshold = 0.8) {
  if (mode == MatchMode::fuzzy && !(threshold > 0.0 && threshold <= 1.0))
    throw DomainError("fuzzy threshold must lie in (0, 1]");
  std::vector<SpanMatch> candidates;
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gold.size(); ++g) {
      const double s = similarity(pred[p], gold[g]);
      const bool ok = mode == MatchMode::exact ? s == 1.0 : s >= threshold;
      if (ok) candidates.push_back({p, g, s});
    }
  std::sort(candidates.begin(), candidates.end(), [](const SpanMatch& a, const SpanMatch& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return std::tie(a.gold, a.pred) < std::tie(b.gold, b.pred);
  });
  std::vector<bool> pred_used(pred.size()), gold_used(gold.size());
  std::vector<SpanMatch> out;
  for (const auto& c : candidates) {
    if (pred_used[c.pred] || gold_used[c.gold]) continue;
    pred_used[c.pred] = gold_used[c.gold] = true;
    out.push_back(c);
  }
  return out;
}

struct EvalPair {
  std::string doc_id;
  AnnotationResult predicted;
  AnnotationResult gold;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  static Prf from_counts(std::size_t tp, std::size_t predicted, std::size_t gold) {
    Prf r;
    r.tp = tp;
    r.predicted = predicted;
    r.gold = gold;
    r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    r.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
  }

  json to_json() const {
    return {{"precision", precision}, {"recall", recall}, {"f1", f1}, {"tp", tp}, {"predicted", predicted}, {"gold", gold}};
  }
};

namespace detail {

inline std::vector<std::string> span_texts(const AnnotationResult& r) {
  std::vector<std::string> out;
  for (const auto& s : r.spans) out.push_back(s.span);
  return out;
}

inline Prf span_tally(const std::vector<EvalPair>& pairs, MatchMode mode, double threshold, bool require_label) {
  std::size_t tp = 0, predicted = 0, gold = 0;
  for (const auto& p : pairs) {
    predicted += p.predicted.spans.size();
    gold += p.gold.spans.size();
    for (const auto& m : match_spans(span_texts(p.predicted), span_texts(p.gold), mode, threshold))
      if (!require_label || p.predicted.spans[m.pred].local_label == p.gold.spans[m.gold].local_label) ++tp;
  }
  return Prf::from_counts(tp, predicted, gold);
}

} // namespace detail

inline Prf span_f1(const std::vector<EvalPair>& pairs, MatchMode mode, double threshold = 0.8) {
  return detail::span_tally(pairs, mode, threshold, false);
}

// Span matching as in span_f1; a matched pair only counts when the local
// labels agree as well.
inline Prf local_f1(const std::vector<EvalPair>& pairs, MatchMode mode, double threshold = 0.8) {
  return detail::span_tally(pairs, mode, threshold, true);
}

enum class MacroUniverse { observed, full };

struct GlobalF1 {
  double macro = 0.0;
  double micro = 0.0;
  std::size_t support = 0;
  std::map<std::string, double> per_class;

  json to_json() const { return {{"macro", macro}, {"micro", micro}, {"support", support}, {"per_class", per_class}}; }
};

inline GlobalF1 global_f1(const std::vector<EvalPair>& pairs, MacroUniverse universe = MacroUniverse::observed,
                          const Taxonomy& tax = Taxonomy::builtin()) {
  std::map<std::string, std::size_t> tp, fp, fn;
  std::set<std::string> classes;
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    if (!p.predicted.global_label || !p.gold.global_label)
      throw MissingGlobalError("document '" + p.doc_id + "' lacks a global label");
    const auto& pg = *p.predicted.global_label;
    const auto& gg = *p.gold.global_label;
    classes.insert(pg);
    classes.insert(gg);
    if (pg == gg) {
      ++tp[gg];
      ++correct;
    } else {
      ++fp[pg];
      ++fn[gg];
    }
  }
  if (universe == MacroUniverse::full)
    for (const auto& id : tax.label_set(LabelSetKind::split)) classes.insert(id);
  GlobalF1 out;
  out.support = pairs.size();
  out.micro = pairs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pairs.size());
  double sum = 0.0;
  for (const auto& c : classes) {
    const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
    const double f = denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    out.per_class[c] = f;
    sum += f;
  }
  out.macro = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
  return out;
}

struct EvalReport {
  GlobalF1 global;
  Prf span_e, span_f, local_e, local_f;
  double threshold = 0.8;

  double g_macro() const { return global.macro; }
  double g_micro() const { return global.micro; }

  json to_json() const {
    return {{"g_macro", global.macro},
            {"g_micro", global.micro},
            {"span_e", span_e.f1},
            {"span_f", span_f.f1},
            {"local_e", local_e.f1},
            {"local_f", local_f.f1},
            {"threshold", threshold},
            {"support",
             {{"documents", global.support},
              {"predicted_spans", span_e.predicted},
              {"gold_spans", span_e.gold},
              {"span_e_tp", span_e.tp},
              {"span_f_tp", span_f.tp},
              {"local_e_tp", local_e.tp},
              {"local_f_tp", local_f.tp}}},
            {"detail",
             {{"global", global.to_json()},
              {"span_e", span_e.to_json()},
              {"span_f", span_f.to_json()},
              {"local_e", local_e.to_json()},
              {"local_f", local_f.to_json()}}}};
  }
};

// All six metrics. Global F1 uses the pairs where both sides carry a global
// label; span metrics use every pair.
inline EvalReport evaluate(const std::vector<EvalPair>& pairs, double threshold = 0.8,
                           MacroUniverse universe = MacroUniverse::observed, const Taxonomy& tax = Taxonomy::builtin()) {
  EvalReport r;
  r.threshold = threshold;
  std::vector<EvalPair> labelled;
  for (const auto& p : pairs)
    if (p.predicted.global_label && p.gold.global_label) labelled.push_back(p);
  r.global = global_f1(labelled, universe, tax);
  r.span_e = span_f1(pairs, MatchMode::exact);
  r.span_f = span_f1(pairs, MatchMode::fuzzy, threshold);
  r.local_e = local_f1(pairs, MatchMode::exact);
  r.local_f = local_f1(pairs, MatchMode::fuzzy, threshold);
  return r;
}

// Joins predictions and gold by doc_id (gold order). Documents missing from
// the predictions are scored as empty predictions.
inline std::vector<EvalPair> join_by_doc(const std::vector<AnnotationResult>& predicted,
                                         const std::vector<AnnotationResult>& gold) {
  std::map<std::string, const AnnotationResult*> pred_index;
  for (const auto& p : predicted) pred_index.emplace(p.doc_id, &p);
  std::vector<EvalPair> out;
  for (const auto& g : gold) {
    EvalPair pair{g.doc_id, {}, g};
    if (auto it = pred_index.find(g.doc_id); it != pred_index.end()) pair.predicted = *it->second;
    else pair.predicted.doc_id = g.doc_id;
    out.push_back(std::move(pair));
  }
  return out;
}

inline std::string format_table(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %-8s %-8s %-8s %-8s %-8s\n%-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f\n",
                "G_macro", "G_micro", "Span_e", "Span_f", "Local_e", "Local_f", r.global.macro, r.global.micro,
                r.span_e.f1, r.span_f.f1, r.local_e.f1, r.local_f.f1);
  return buf;
}

} // namespace propbench::spaneval
