#include "propbench/agreement.hpp"
#include "propbench/analytics.hpp"
#include "propbench/annotation.hpp"
#include "propbench/config.hpp"
#include "propbench/corpus.hpp"
#include "propbench/distill.hpp"
#include "propbench/gateway.hpp"
#include "propbench/review.hpp"
#include "propbench/sampling.hpp"
#include "propbench/server.hpp"
#include "propbench/spaneval.hpp"
#include "propbench/stats.hpp"
#include "propbench/taxonomy.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

using namespace propbench;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string taxonomy_path;
  std::string config_path;
  Taxonomy taxonomy;
  WorkbenchConfig config;

  void load() {
    taxonomy = taxonomy_path.empty() ? Taxonomy::builtin() : Taxonomy::load(taxonomy_path);
    if (!taxonomy_path.empty()) {
      auto findings = validate_taxonomy(taxonomy);
      if (!findings.empty())
        throw ConfigError("taxonomy " + taxonomy_path + " is invalid: " + findings.front().kind + ": " +
                          findings.front().message);
    }
    if (!config_path.empty()) config = WorkbenchConfig::load(config_path);
  }
};

// Writes a JSON report to --report when given; prints either the text form
// or the JSON to stdout.
void emit(const json& report, const std::string& report_path, const std::string& text = {}) {
  if (!report_path.empty()) write_file(report_path, report.dump(2) + "\n");
  if (!text.empty()) std::cout << text;
  else std::cout << report.dump(2) << "\n";
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!text::collapse_whitespace(line).empty()) out.push_back(line);
  }
  return out;
}

std::pair<std::string, std::string> parse_columns(const std::string& spec) {
  auto comma = spec.find(',');
  if (comma == std::string::npos) throw ConfigError("--columns expects 'a,b'");
  return {spec.substr(0, comma), spec.substr(comma + 1)};
}

// Reads two label columns keyed by item_id (or by row number when the CSV
// has no item_id column).
std::pair<std::map<std::string, std::string>, std::map<std::string, std::string>>
read_paired_columns(const fs::path& path, const std::string& columns) {
  auto table = csv::read(path);
  std::string ca = "a", cb = "b";
  if (!columns.empty()) std::tie(ca, cb) = parse_columns(columns);
  else if (table.header.size() >= 2 && table.column("a") < 0) {
    const std::size_t off = table.column("item_id") >= 0 ? 1 : 0;
    if (table.header.size() < off + 2) throw ParseError(1, "need two label columns");
    ca = table.header[off];
    cb = table.header[off + 1];
  }
  auto ia = table.column(ca), ib = table.column(cb), id = table.column("item_id");
  if (ia < 0 || ib < 0) throw ParseError(1, "columns '" + ca + "' and '" + cb + "' must be present");
  std::map<std::string, std::string> a, b;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto need = static_cast<std::size_t>(std::max({ia, ib, id})) + 1;
    if (row.size() < need) throw ParseError(table.row_lines[r], "row has too few fields");
    std::string key = id >= 0 ? row[static_cast<std::size_t>(id)] : std::to_string(r + 1);
    if (a.count(key)) throw DuplicateIdError("duplicate item '" + key + "'");
    a[key] = row[static_cast<std::size_t>(ia)];
    b[key] = row[static_cast<std::size_t>(ib)];
  }
  return {a, b};
}

std::string matrix_table(const LabelMatrix& m, const AgreementReport& r, const std::string& title) {
  std::ostringstream out;
  out << title << " (" << m.items() << " items, " << m.annotators() << " annotators)\n";
  for (const auto& [q, f] : r.raw_quorum) out << "  " << q << "/" << m.annotators() << "  " << fmt(f) << "\n";
  out << "  alpha " << fmt(r.alpha) << "\n";
  return out.str();
}

GatewayConfig gateway_config(const Globals& g, const std::string& endpoint_flag, const std::string& model_flag,
                              std::optional<double> temperature) {
  GatewayConfig cfg;
  if (g.config.endpoint) cfg.endpoint = *g.config.endpoint;
  cfg.model = g.config.model;
  cfg.temperature = g.config.temperature;
  cfg.apply_environment();
  if (!endpoint_flag.empty()) cfg.endpoint = endpoint_flag;
  if (!model_flag.empty()) cfg.model = model_flag;
  if (temperature) cfg.temperature = *temperature;
  return cfg;
}

std::atomic<ReviewServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"propbench: propaganda annotation, agreement and span-evaluation workbench"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--taxonomy", g.taxonomy_path, "Taxonomy JSON (default: built-in)")->check(CLI::ExistingFile);
  app.add_option("--config", g.config_path, "Workbench config JSON")->check(CLI::ExistingFile);
  app.fallthrough();

  std::function<void()> run;
  std::string report;

  // taxonomy
  auto* c_tax = app.add_subcommand("taxonomy", "Print or validate the taxonomy");
  bool tax_validate = false;
  c_tax->add_flag("--validate", tax_validate, "Validate only; exit 1 on findings");
  c_tax->callback([&] {
    run = [&] {
      auto findings = validate_taxonomy(g.taxonomy);
      if (tax_validate) {
        json f = json::array();
        for (const auto& x : findings) f.push_back({{"kind", x.kind}, {"subject", x.subject}, {"message", x.message}});
        std::cout << json{{"valid", findings.empty()}, {"findings", f}}.dump(2) << "\n";
        if (!findings.empty()) std::exit(1);
        return;
      }
      std::cout << g.taxonomy.to_json().dump(2) << "\n";
    };
  });

  // ingest
  auto* c_ingest = app.add_subcommand("ingest", "Load a JSONL or CSV corpus, normalize and write a corpus file");
  std::string in_path, in_format, ingest_out;
  bool positive_only = false;
  c_ingest->add_option("input", in_path, "Input corpus")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--format", in_format, "jsonl or csv (default: by extension)")
      ->check(CLI::IsMember({"jsonl", "csv"}));
  c_ingest->add_option("-o,--out", ingest_out, "Output corpus JSONL")->required();
  c_ingest->add_flag("--positive-only", positive_only, "Keep binary-positive documents only");
  c_ingest->add_option("--report", report, "Write stats JSON");
  c_ingest->callback([&] {
    run = [&] {
      auto fmt_kind = in_format.empty() ? format_for(in_path)
                                        : (in_format == "csv" ? CorpusFormat::csv : CorpusFormat::jsonl);
      auto corpus = ingest(in_path, fmt_kind, g.taxonomy);
      if (positive_only) corpus = filter_binary_positive(corpus);
      write_corpus(corpus, ingest_out);
      json out = corpus_stats(corpus).to_json();
      out["manifest"] = corpus.manifest.to_json();
      emit(out, report);
    };
  });

  // annotate
  auto* c_ann = app.add_subcommand("annotate", "Annotate a corpus with k runs per document");
  std::string ann_corpus, ann_out, ann_errors, endpoint, model, source = "normalized";
  std::optional<int> k_flag;
  std::optional<double> temperature;
  std::optional<std::size_t> max_in_flight;
  bool shuffle = false;
  std::optional<std::uint64_t> shuffle_seed;
  int max_attempts = 3, backoff_ms = 1000;
  c_ann->add_option("corpus", ann_corpus, "Corpus JSONL from ingest")->required()->check(CLI::ExistingFile);
  c_ann->add_option("-o,--out", ann_out, "Run results JSONL")->required();
  c_ann->add_option("-k", k_flag, "Runs per document (default: config k_runs)")->check(CLI::PositiveNumber);
  c_ann->add_option("--endpoint", endpoint, "Chat-completions base URL (overrides LLM_BASE_URL)");
  c_ann->add_option("--model", model, "Model name");
  c_ann->add_option("--temperature", temperature, "Sampling temperature");
  c_ann->add_flag("--shuffle", shuffle, "Shuffle label and example order per run");
  c_ann->add_option("--seed", shuffle_seed, "Base seed for shuffling (default: config seeds.shuffle)");
  c_ann->add_option("--source", source, "Text sent to the model")->check(CLI::IsMember({"normalized", "raw"}));
  c_ann->add_option("--max-in-flight", max_in_flight, "Concurrent documents")->check(CLI::PositiveNumber);
  c_ann->add_option("--max-attempts", max_attempts, "Attempts per run")->check(CLI::PositiveNumber);
  c_ann->add_option("--backoff-ms", backoff_ms, "Initial retry backoff")->check(CLI::NonNegativeNumber);
  c_ann->add_option("--errors", ann_errors, "Failed-run JSONL (default: <out>.errors.jsonl)");
  c_ann->add_option("--report", report, "Write summary JSON");
  c_ann->callback([&] {
    run = [&] {
      auto corpus = load_corpus(ann_corpus, g.taxonomy);
      auto cfg = gateway_config(g, endpoint, model, temperature);
      AnnotateOptions opts;
      opts.k = k_flag.value_or(static_cast<int>(g.config.k_runs));
      opts.shuffle = shuffle;
      opts.base_seed = shuffle_seed.value_or(g.config.seeds.shuffle);
      opts.source = source == "raw" ? TextSource::raw : TextSource::normalized;
      opts.retry.max_attempts = max_attempts;
      opts.retry.initial_backoff = std::chrono::milliseconds(backoff_ms);
      HttpChatTransport transport(cfg);
      auto bundles = annotate_corpus(corpus, opts, transport, cfg, PromptSpec::defaults(g.taxonomy),
                                     max_in_flight.value_or(g.config.max_in_flight), g.taxonomy);
      std::vector<AnnotationResult> results;
      std::vector<json> errors;
      int retries = 0;
      for (const auto& b : bundles) {
        results.insert(results.end(), b.results.begin(), b.results.end());
        for (const auto& e : b.errors) errors.push_back(e.to_json());
        retries += b.retries();
      }
      save_results(ann_out, results);
      const std::string err_path = ann_errors.empty() ? ann_out + ".errors.jsonl" : ann_errors;
      if (!errors.empty() || !ann_errors.empty()) write_jsonl(err_path, errors);
      emit({{"documents", corpus.size()},
            {"k", opts.k},
            {"model", cfg.model},
            {"successful_runs", results.size()},
            {"failed_runs", errors.size()},
            {"retries", retries}},
           report);
    };
  });

  // aggregate
  auto* c_agg = app.add_subcommand("aggregate", "Reduce k runs per document to one result (mode of global labels)");
  std::string agg_runs, agg_out;
  c_agg->add_option("runs", agg_runs, "Run results JSONL")->required()->check(CLI::ExistingFile);
  c_agg->add_option("-o,--out", agg_out, "Aggregated results JSONL")->required();
  c_agg->callback([&] {
    run = [&] {
      std::vector<AnnotationResult> out;
      for (const auto& b : group_bundles(load_results(agg_runs))) out.push_back(aggregate_mode(b));
      save_results(agg_out, out);
      std::size_t positive = 0;
      for (const auto& r : out) positive += r.propagandistic() ? 1 : 0;
      emit({{"documents", out.size()}, {"propagandistic", positive}}, "");
    };
  });

  // stability
  auto* c_stab = app.add_subcommand("stability", "Cross-run consistency of labels and spans");
  std::string stab_runs;
  int stab_k = 5;
  c_stab->add_option("runs", stab_runs, "Run results JSONL")->required()->check(CLI::ExistingFile);
  c_stab->add_option("-k", stab_k, "Expected runs per document")->check(CLI::PositiveNumber);
  c_stab->add_option("--report", report, "Write report JSON");
  c_stab->callback([&] {
    run = [&] {
      auto rep = stability_report(group_bundles(load_results(stab_runs)), stab_k);
      std::ostringstream t;
      t << "facet             >=3/" << stab_k << "    >=4/" << stab_k << "    " << stab_k << "/" << stab_k << "\n";
      const char* names[] = {"local_label", "extracted_spans", "global_label"};
      for (std::size_t f = 0; f < 3; ++f) {
        char line[128];
        std::snprintf(line, sizeof line, "%-16s %7.2f%% %7.2f%% %7.2f%%\n", names[f],
                      100 * rep.rate(static_cast<StabilityFacet>(f), 0), 100 * rep.rate(static_cast<StabilityFacet>(f), 1),
                      100 * rep.rate(static_cast<StabilityFacet>(f), 2));
        t << line;
      }
      t << "items " << rep.items << "\n";
      emit(rep.to_json(), report, t.str());
    };
  });

  // iaa
  auto* c_iaa = app.add_subcommand("iaa", "Raw quorum agreement and Krippendorff's alpha");
  std::vector<std::string> iaa_mats;
  c_iaa->add_option("matrix", iaa_mats, "Label matrix CSV (item_id,<annotator>...)")->required()->check(CLI::ExistingFile);
  c_iaa->add_option("--report", report, "Write report JSON");
  c_iaa->callback([&] {
    run = [&] {
      json out = json::object();
      std::string text;
      for (const auto& p : iaa_mats) {
        auto m = LabelMatrix::load(p);
        auto r = agreement_report(m);
        out[p] = r.to_json(m.annotators());
        text += matrix_table(m, r, p);
      }
      if (iaa_mats.size() == 1) out = out.begin().value();
      emit(out, report, text);
    };
  });

  // conditional
  auto* c_cond = app.add_subcommand("conditional", "Fine agreement conditioned on coarse agreement (3 annotators)");
  std::string cond_coarse, cond_fine, cond_mode = "exactly";
  c_cond->add_option("--coarse", cond_coarse, "Coarse label matrix CSV")->required()->check(CLI::ExistingFile);
  c_cond->add_option("--fine", cond_fine, "Fine label matrix CSV")->required()->check(CLI::ExistingFile);
  c_cond->add_option("--mode", cond_mode, "Coarse 2/3 row: exactly or at-least")
      ->check(CLI::IsMember({"exactly", "at-least"}));
  c_cond->add_option("--report", report, "Write report JSON");
  c_cond->callback([&] {
    run = [&] {
      auto t = conditional_agreement(LabelMatrix::load(cond_coarse), LabelMatrix::load(cond_fine),
                                     cond_mode == "exactly" ? CoarseSubsetMode::exactly : CoarseSubsetMode::at_least);
      std::ostringstream s;
      s << "coarse \\ fine      2/3      3/3    items\n";
      s << (cond_mode == "exactly" ? "2/3 coarse    " : ">=2/3 coarse  ") << "  " << fmt(t.cell(0, 0)) << "   "
        << fmt(t.cell(0, 1)) << "   " << t.subset_sizes[0] << "\n";
      s << "3/3 coarse      " << fmt(t.cell(1, 0)) << "   " << fmt(t.cell(1, 1)) << "   " << t.subset_sizes[1] << "\n";
      emit(t.to_json(), report, s.str());
    };
  });

  // kappa
  auto* c_kappa = app.add_subcommand("kappa", "Cohen's kappa between two labelings");
  std::string kappa_pairs, kappa_cols, kappa_matrix, kappa_llm, kappa_runs, kappa_fallback = "single";
  std::optional<std::uint64_t> kappa_seed;
  c_kappa->add_option("--pairs", kappa_pairs, "CSV with two label columns")->check(CLI::ExistingFile);
  c_kappa->add_option("--columns", kappa_cols, "Column names 'a,b'");
  c_kappa->add_option("--matrix", kappa_matrix, "Human label matrix CSV (majority with LLM fallback)")
      ->check(CLI::ExistingFile);
  c_kappa->add_option("--llm", kappa_llm, "Aggregated LLM results JSONL (with --matrix)")->check(CLI::ExistingFile);
  c_kappa->add_option("--llm-runs", kappa_runs, "Per-run LLM results JSONL (random-run fallback)")
      ->check(CLI::ExistingFile);
  c_kappa->add_option("--fallback", kappa_fallback, "single or random-run")->check(CLI::IsMember({"single", "random-run"}));
  c_kappa->add_option("--seed", kappa_seed, "Fallback seed (default: config seeds.fallback)");
  c_kappa->add_option("--report", report, "Write report JSON");
  c_kappa->callback([&] {
    run = [&] {
      std::vector<std::string> a, b;
      json out;
      if (!kappa_pairs.empty()) {
        auto [ma, mb] = read_paired_columns(kappa_pairs, kappa_cols);
        for (const auto& [id, l] : ma) {
          a.push_back(l);
          b.push_back(mb.at(id));
        }
      } else if (!kappa_matrix.empty() && !kappa_llm.empty()) {
        auto m = LabelMatrix::load(kappa_matrix);
        std::map<std::string, std::string> llm;
        for (const auto& r : load_results(kappa_llm))
          if (r.global_label) llm[r.doc_id] = *r.global_label;
        std::map<std::string, std::vector<std::string>> runs;
        if (!kappa_runs.empty())
          for (const auto& r : load_results(kappa_runs))
            if (r.global_label) runs[r.doc_id].push_back(*r.global_label);
        auto maj = majority_with_fallback(m, llm, kappa_seed.value_or(g.config.seeds.fallback),
                                          kappa_fallback == "single" ? FallbackMode::single : FallbackMode::random_run,
                                          runs);
        for (std::size_t i = 0; i < m.items(); ++i) {
          auto it = llm.find(m.item_ids[i]);
          if (it == llm.end()) throw ItemSetMismatchError("no LLM label for item '" + m.item_ids[i] + "'");
          a.push_back(it->second);
          b.push_back(maj.labels[i]);
        }
        out["majority"] = maj.to_json(m.item_ids);
      } else {
        throw ConfigError("kappa needs --pairs, or --matrix with --llm");
      }
      auto k = cohen_kappa(a, b);
      json kj = k.to_json();
      for (auto& [key, v] : kj.items()) out[key] = v;
      emit(out, report,
           "kappa " + fmt(k.kappa) + "  observed " + fmt(k.observed_agreement) + "  expected " +
               fmt(k.expected_agreement) + "  n " + std::to_string(k.n) + "\n");
    };
  });

  // stuart-maxwell
  auto* c_sm = app.add_subcommand("stuart-maxwell", "Marginal homogeneity test for paired labels");
  std::string sm_pairs, sm_table, sm_cols;
  c_sm->add_option("--pairs", sm_pairs, "CSV with two label columns")->check(CLI::ExistingFile);
  c_sm->add_option("--columns", sm_cols, "Column names 'a,b'");
  c_sm->add_option("--table", sm_table, "Square contingency table CSV with label header row/column")
      ->check(CLI::ExistingFile);
  c_sm->add_option("--report", report, "Write report JSON");
  c_sm->callback([&] {
    run = [&] {
      stats::ContingencyTable t;
      if (!sm_table.empty()) {
        t = stats::ContingencyTable::from_csv(csv::read(sm_table));
      } else if (!sm_pairs.empty()) {
        auto [a, b] = read_paired_columns(sm_pairs, sm_cols);
        std::set<std::string> seen;
        bool all_known = true;
        for (const auto* m : {&a, &b})
          for (const auto& [_, l] : *m) {
            seen.insert(l);
            all_known = all_known && g.taxonomy.is_split(l);
          }
        std::vector<std::string> labels =
            all_known ? g.taxonomy.label_set(LabelSetKind::split) : std::vector<std::string>(seen.begin(), seen.end());
        t = stats::paired_contingency(a, b, labels);
      } else {
        throw ConfigError("stuart-maxwell needs --pairs or --table");
      }
      auto r = stats::stuart_maxwell(t);
      emit(r.to_json(), report,
           "statistic " + fmt(r.statistic) + "  df " + std::to_string(r.df) + "  p " + fmt(r.p_value) + "\n");
    };
  });

  // sample-size
  auto* c_ss = app.add_subcommand("sample-size", "Cochran sample size with finite-population correction");
  stats::SampleSpec ss;
  std::optional<std::uint64_t> population;
  c_ss->add_option("--population", population, "Population size (omit for infinite)")->check(CLI::PositiveNumber);
  c_ss->add_option("--confidence", ss.confidence, "0.90, 0.95 or 0.99");
  c_ss->add_option("--margin", ss.margin, "Margin of error");
  c_ss->add_option("--proportion", ss.proportion, "Expected proportion");
  c_ss->callback([&] {
    run = [&] {
      ss.population = population;
      std::cout << stats::sample_size(ss) << "\n";
    };
  });

  // sample
  auto* c_sample = app.add_subcommand("sample", "Stratified sample by predicted global label");
  std::string sample_in, sample_out, quotas_path;
  std::optional<std::size_t> default_quota, include_all_below;
  std::optional<std::uint64_t> sample_seed;
  c_sample->add_option("aggregated", sample_in, "Aggregated results JSONL")->required()->check(CLI::ExistingFile);
  c_sample->add_option("-o,--out", sample_out, "Sampled doc ids, one per line")->required();
  c_sample->add_option("--quota", default_quota, "Quota for strata without an explicit one");
  c_sample->add_option("--quotas", quotas_path, "JSON object label -> quota")->check(CLI::ExistingFile);
  c_sample->add_option("--include-all-below", include_all_below, "Take strata up to this size whole");
  c_sample->add_option("--seed", sample_seed, "Seed (default: config seeds.sample)");
  c_sample->add_option("--report", report, "Write outcome JSON");
  c_sample->callback([&] {
    run = [&] {
      StratifiedPlan plan;
      if (!quotas_path.empty())
        for (const auto& [label, q] : read_json_file(quotas_path).items()) {
          if (!g.taxonomy.is_known(label)) throw UnknownLabelError("quota for unknown label '" + label + "'");
          plan.quotas[label] = q.get<std::size_t>();
        }
      plan.default_quota = default_quota;
      plan.include_all_below = include_all_below.value_or(g.config.include_all_below);
      plan.seed = sample_seed.value_or(g.config.seeds.sample);
      auto outcome = stratified_sample(load_results(sample_in), plan, g.taxonomy);
      std::string ids;
      for (const auto& id : outcome.doc_ids) ids += id + "\n";
      write_file(sample_out, ids);
      for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
      emit(outcome.to_json(), report);
    };
  });

  // export-distill
  auto* c_exp = app.add_subcommand("export-distill", "Export teacher annotations as fine-tuning records");
  std::string exp_in, exp_corpus, exp_out, exp_format = "messages-jsonl", exp_ids;
  c_exp->add_option("aggregated", exp_in, "Aggregated results JSONL")->required()->check(CLI::ExistingFile);
  c_exp->add_option("--corpus", exp_corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  c_exp->add_option("-o,--out", exp_out, "Output JSONL")->required();
  c_exp->add_option("--format", exp_format, "messages-jsonl or prompt-completion-jsonl")
      ->check(CLI::IsMember({"messages-jsonl", "prompt-completion-jsonl"}));
  c_exp->add_option("--ids", exp_ids, "Restrict to doc ids listed in this file")->check(CLI::ExistingFile);
  c_exp->callback([&] {
    run = [&] {
      auto results = load_results(exp_in);
      if (!exp_ids.empty()) {
        auto keep = read_lines(exp_ids);
        std::set<std::string> k(keep.begin(), keep.end());
        std::erase_if(results, [&](const AnnotationResult& r) { return !k.count(r.doc_id); });
      }
      auto n = export_distill(results, load_corpus(exp_corpus, g.taxonomy), PromptSpec::defaults(g.taxonomy), exp_out,
                              parse_distill_format(exp_format), g.taxonomy);
      emit({{"records", n}, {"skipped", results.size() - n}}, "");
    };
  });

  // split
  auto* c_split = app.add_subcommand("split", "Stratified 80/20 split of distillation records");
  std::string split_in, split_train, split_test;
  std::optional<std::uint64_t> split_seed;
  c_split->add_option("input", split_in, "Distillation JSONL")->required()->check(CLI::ExistingFile);
  c_split->add_option("--train", split_train, "Train JSONL")->required();
  c_split->add_option("--test", split_test, "Test JSONL")->required();
  c_split->add_option("--seed", split_seed, "Seed (default: config seeds.split)");
  c_split->add_option("--report", report, "Write per-stratum counts JSON");
  c_split->callback([&] {
    run = [&] {
      DistillFormat format = DistillFormat::messages_jsonl;
      auto records = load_distill(split_in, &format);
      auto s = split_distill(records, split_seed.value_or(g.config.seeds.split));
      write_distill(split_train, s.train, format);
      write_distill(split_test, s.test, format);
      std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
      for (const auto& r : s.train) ++counts[r.global_label].first;
      for (const auto& r : s.test) ++counts[r.global_label].second;
      json strata = json::object();
      for (const auto& [label, c] : counts) strata[label] = {{"train", c.first}, {"test", c.second}};
      emit({{"train", s.train.size()}, {"test", s.test.size()}, {"strata", strata}}, report);
    };
  });

  // eval-spans
  auto* c_eval = app.add_subcommand("eval-spans", "Global, span and local F1 against gold annotations");
  std::string eval_pred, eval_gold, universe = "observed";
  double threshold = 0.8;
  c_eval->add_option("--pred", eval_pred, "Predicted results JSONL")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--gold", eval_gold, "Gold results JSONL")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--threshold", threshold, "Fuzzy similarity threshold")->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--macro-universe", universe, "observed or full")->check(CLI::IsMember({"observed", "full"}));
  c_eval->add_option("--report", report, "Write report JSON");
  c_eval->callback([&] {
    run = [&] {
      auto r = spaneval::evaluate(spaneval::join_by_doc(load_results(eval_pred), load_results(eval_gold)), threshold,
                                  universe == "full" ? spaneval::MacroUniverse::full : spaneval::MacroUniverse::observed,
                                  g.taxonomy);
      emit(r.to_json(), report, spaneval::format_table(r));
    };
  });

  // analyze
  auto* c_an = app.add_subcommand("analyze", "Descriptive analyses of results and review journals");
  c_an->require_subcommand(1);
  std::string an_in, an_journal, an_tasks, an_coarse_out, an_fine_out;
  auto* a_hist = c_an->add_subcommand("span-histogram", "Distribution of span counts per document");
  a_hist->add_option("results", an_in, "Results JSONL")->required()->check(CLI::ExistingFile);
  a_hist->add_option("--report", report, "Write report JSON");
  a_hist->callback([&] { run = [&] { emit(span_histogram(load_results(an_in)).to_json(), report); }; });
  auto* a_pos = c_an->add_subcommand("positional", "First-span and majority local label vs global label");
  a_pos->add_option("results", an_in, "Results JSONL")->required()->check(CLI::ExistingFile);
  a_pos->add_option("--report", report, "Write report JSON");
  a_pos->callback([&] { run = [&] { emit(positional_analysis(load_results(an_in)).to_json(), report); }; });
  auto* a_dist = c_an->add_subcommand("distribution", "Global label counts");
  a_dist->add_option("results", an_in, "Results JSONL")->required()->check(CLI::ExistingFile);
  a_dist->add_option("--report", report, "Write report JSON");
  a_dist->callback([&] {
    run = [&] {
      json out = json::array();
      for (const auto& [label, n] : global_distribution(load_results(an_in), g.taxonomy))
        out.push_back({{"label", label}, {"count", n}});
      emit(out, report);
    };
  });
  auto* a_time = c_an->add_subcommand("timing", "Server-side annotation time statistics");
  a_time->add_option("journal", an_journal, "Review journal JSONL")->required()->check(CLI::ExistingFile);
  a_time->add_option("--report", report, "Write report JSON");
  a_time->callback([&] { run = [&] { emit(timing_report(load_submissions(an_journal)).to_json(), report); }; });
  auto* a_mat = c_an->add_subcommand("matrices", "Export coarse and fine label matrices from a review journal");
  a_mat->add_option("journal", an_journal, "Review journal JSONL")->required()->check(CLI::ExistingFile);
  a_mat->add_option("--tasks", an_tasks, "Task JSONL (default: <journal>.tasks.jsonl)");
  a_mat->add_option("--coarse-out", an_coarse_out, "Coarse matrix CSV")->required();
  a_mat->add_option("--fine-out", an_fine_out, "Fine matrix CSV")->required();
  std::string an_item_key = "doc";
  a_mat->add_option("--item-key", an_item_key, "Row ids: doc or task")->check(CLI::IsMember({"doc", "task"}));
  a_mat->callback([&] {
    run = [&] {
      auto tasks = load_review_tasks(an_tasks.empty() ? an_journal + ".tasks.jsonl" : an_tasks);
      auto [coarse, fine] = ReviewService::matrices_from(load_submissions(an_journal), tasks);
      if (an_item_key == "doc") {
        std::map<std::string, std::string> doc_of;
        for (const auto& t : tasks) doc_of[t.task_id] = t.doc_id;
        for (auto* m : {&coarse, &fine})
          for (auto& id : m->item_ids) id = doc_of.at(id);
      }
      write_file(an_coarse_out, coarse.to_csv());
      write_file(an_fine_out, fine.to_csv());
      emit({{"items", coarse.items()}, {"annotators", coarse.annotator_ids}}, "");
    };
  });

  // span-histogram shortcut
  auto* c_hist = app.add_subcommand("span-histogram", "Same as 'analyze span-histogram'");
  c_hist->add_option("results", an_in, "Results JSONL")->required()->check(CLI::ExistingFile);
  c_hist->add_option("--report", report, "Write report JSON");
  c_hist->callback([&] { run = [&] { emit(span_histogram(load_results(an_in)).to_json(), report); }; });

  // serve
  auto* c_serve = app.add_subcommand("serve", "Run the human-verification service");
  std::string sv_tasks, sv_agg, sv_corpus, sv_ids, sv_journal, sv_qual, sv_static, sv_host = "127.0.0.1", sv_port_file;
  int sv_port = 8080;
  std::optional<std::size_t> sv_redundancy;
  bool sv_show = false;
  c_serve->add_option("--tasks", sv_tasks, "Task JSONL")->check(CLI::ExistingFile);
  c_serve->add_option("--aggregated", sv_agg, "Aggregated results JSONL (builds tasks)")->check(CLI::ExistingFile);
  c_serve->add_option("--corpus", sv_corpus, "Corpus JSONL (with --aggregated)")->check(CLI::ExistingFile);
  c_serve->add_option("--ids", sv_ids, "Restrict tasks to these doc ids (e.g. sample output)")->check(CLI::ExistingFile);
  c_serve->add_option("--journal", sv_journal, "Journal JSONL (replayed on start)")->required();
  c_serve->add_option("--qualification", sv_qual, "Qualification set JSON")->check(CLI::ExistingFile);
  c_serve->add_option("--static", sv_static, "Directory served at /")->check(CLI::ExistingDirectory);
  c_serve->add_option("--host", sv_host, "Bind address");
  c_serve->add_option("--port", sv_port, "Port (0 picks a free port)");
  c_serve->add_option("--port-file", sv_port_file, "Write the bound port here");
  c_serve->add_option("--redundancy", sv_redundancy, "Annotators per task (default: config redundancy)");
  c_serve->add_flag("--show-explanations", sv_show, "Send span explanations to annotators");
  c_serve->callback([&] {
    run = [&] {
      const std::string snapshot = sv_journal + ".tasks.jsonl";
      std::vector<ReviewTask> tasks;
      if (!sv_tasks.empty()) {
        tasks = load_review_tasks(sv_tasks);
      } else if (!sv_agg.empty() && !sv_corpus.empty()) {
        auto results = load_results(sv_agg);
        if (!sv_ids.empty()) {
          std::map<std::string, std::size_t> pos;
          auto ids = read_lines(sv_ids);
          for (std::size_t i = 0; i < ids.size(); ++i) pos.emplace(ids[i], i);
          std::erase_if(results, [&](const AnnotationResult& r) { return !pos.count(r.doc_id); });
          std::stable_sort(results.begin(), results.end(),
                           [&](const auto& a, const auto& b) { return pos[a.doc_id] < pos[b.doc_id]; });
        }
        tasks = build_review_tasks(results, load_corpus(sv_corpus, g.taxonomy));
      } else if (fs::exists(snapshot)) {
        tasks = load_review_tasks(snapshot);
      } else {
        throw ConfigError("serve needs --tasks, or --aggregated with --corpus");
      }
      // The journal refers to tasks by id, so a restart must see the same list.
      if (fs::exists(sv_journal) && fs::exists(snapshot)) {
        std::vector<std::string> old, now;
        for (const auto& t : load_review_tasks(snapshot)) old.push_back(t.task_id + "\x1f" + t.doc_id);
        for (const auto& t : tasks) now.push_back(t.task_id + "\x1f" + t.doc_id);
        if (old != now) throw ConfigError("task list differs from the one recorded next to the journal");
      } else {
        std::vector<json> lines;
        for (const auto& t : tasks) lines.push_back(t.to_json());
        write_jsonl(snapshot, lines);
      }
      std::optional<QualificationSet> qual;
      if (!sv_qual.empty()) qual = QualificationSet::from_json(read_json_file(sv_qual));
      ReviewConfig rc;
      rc.redundancy = sv_redundancy.value_or(g.config.redundancy);
      rc.show_explanations = sv_show || g.config.show_explanations;
      rc.seed = g.config.seeds.sample;
      ReviewService service(std::move(tasks), qual, g.taxonomy, rc, fs::path(sv_journal));
      ReviewServer server(service, g.taxonomy,
                          sv_static.empty() ? std::nullopt : std::optional<fs::path>(sv_static));
      const int port = server.bind(sv_host, sv_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      if (!sv_port_file.empty()) write_file(sv_port_file, std::to_string(port) + "\n");
      std::cerr << "serving " << service.tasks().size() << " tasks on http://" << sv_host << ":" << port << "\n";
      server.listen_after_bind();
      g_server = nullptr;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    g.load();
    if (run) run();
  } catch (const Error& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
