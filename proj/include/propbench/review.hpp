#pragma once

#include "propbench/agreement.hpp"
#include "propbench/annotation.hpp"
#include "propbench/corpus.hpp"
#include "propbench/error.hpp"
#include "propbench/json_io.hpp"
#include "propbench/rng.hpp"
#include "propbench/taxonomy.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace propbench {

// A pre-annotated document shown to human annotators. The LLM global label is
// deliberately not part of this type.
struct ReviewTask {
  std::string task_id;
  std::string doc_id;
  std::string text;
  std::vector<SpanAnnotation> spans;

  json to_json() const {
    json s = json::array();
    for (const auto& sp : spans)
      s.push_back({{"span", sp.span}, {"local_label", sp.local_label}, {"explanation", sp.explanation}});
    return {{"task_id", task_id}, {"doc_id", doc_id}, {"text", text}, {"spans", s}};
  }

  static ReviewTask from_json(const json& j) {
    ReviewTask t;
    t.task_id = j.at("task_id").get<std::string>();
    t.doc_id = j.value("doc_id", "");
    t.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("spans"))
      t.spans.push_back({s.at("span").get<std::string>(), s.value("explanation", ""), s.at("local_label").get<std::string>()});
    return t;
  }

  // Payload sent to annotators: text, spans and local labels; explanations
  // only when enabled.
  json annotator_payload(bool show_explanations) const {
    json s = json::array();
    for (const auto& sp : spans) {
      json item{{"span", sp.span}, {"local_label", sp.local_label}};
      if (show_explanations) item["explanation"] = sp.explanation;
      s.push_back(std::move(item));
    }
    return {{"task_id", task_id}, {"text", text}, {"spans", s}};
  }
};

// One task per propagandistic result, in result order, ids t0001, t0002, ...
inline std::vector<ReviewTask> build_review_tasks(const std::vector<AnnotationResult>& results, const Corpus& corpus) {
  std::vector<ReviewTask> tasks;
  for (const auto& r : results) {
    if (!r.propagandistic()) continue;
    const Document* doc = corpus.find(r.doc_id);
    if (!doc) throw ItemSetMismatchError("result for unknown document '" + r.doc_id + "'");
    char id[32];
    std::snprintf(id, sizeof id, "t%04zu", tasks.size() + 1);
    tasks.push_back({id, doc->id, doc->normalized_text, r.spans});
  }
  return tasks;
}

inline std::vector<ReviewTask> load_review_tasks(const std::filesystem::path& path) {
  std::vector<ReviewTask> out;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    try {
      out.push_back(ReviewTask::from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(line, std::string("invalid task record: ") + e.what());
    }
  });
  return out;
}

struct QualificationItem {
  std::string text;
  std::string expected;
};

struct QualificationSet {
  std::vector<QualificationItem> items;
  double pass_threshold = 1.0;

  void validate(const Taxonomy& tax) const {
    if (items.empty()) throw ConfigError("qualification set is empty");
    for (const auto& i : items)
      if (!tax.is_known(i.expected)) throw UnknownLabelError("qualification item expects unknown label '" + i.expected + "'");
  }

  static QualificationSet from_json(const json& j) {
    QualificationSet q;
    for (const auto& i : j.at("items")) q.items.push_back({i.at("text").get<std::string>(), i.at("expected").get<std::string>()});
    return q;
  }
};

struct QualificationResult {
  bool passed = false;
  double score = 0.0;
  int attempt = 0;

  json to_json() const { return {{"passed", passed}, {"score", score}, {"attempt", attempt}}; }
};

struct HumanAnnotation {
  std::string task_id;
  std::string annotator_id;
  std::string coarse;
  std::string fine;
  std::int64_t elapsed_ms = 0;        // server-side, served -> submitted
  std::int64_t client_elapsed_ms = 0; // as reported by the client
  std::int64_t submitted_at_ms = 0;

  json to_json() const {
    return {{"task_id", task_id}, {"annotator_id", annotator_id}, {"coarse", coarse}, {"fine", fine},
            {"elapsed_ms", elapsed_ms}, {"client_elapsed_ms", client_elapsed_ms}, {"submitted_at_ms", submitted_at_ms}};
  }
};

struct SubmissionRequest {
  std::string task_id;
  std::string annotator_id;
  std::string coarse;
  std::string fine;
  std::int64_t client_elapsed_ms = 0;
};

struct ReviewConfig {
  std::size_t redundancy = 3;
  bool show_explanations = false;
  std::uint64_t seed = 0;
};

// Task queue, qualification gate and submission log for human verification.
// Every state change is appended to a JSONL journal before it is applied, so
// constructing a service over an existing journal replays it to the same
// state. All public members are serialized by one mutex.
class ReviewService {
public:
  using Clock = std::function<std::int64_t()>;

  static std::int64_t wall_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  ReviewService(std::vector<ReviewTask> tasks, std::optional<QualificationSet> qualification,
                const Taxonomy& tax, ReviewConfig cfg = {}, std::optional<std::filesystem::path> journal = std::nullopt,
                Clock clock = wall_clock_ms)
      : tasks_(std::move(tasks)), qualification_(std::move(qualification)), tax_(tax), cfg_(cfg),
        journal_path_(std::move(journal)), clock_(std::move(clock)), assignments_(tasks_.size()) {
    if (cfg_.redundancy < 1) throw ConfigError("redundancy must be at least 1");
    if (qualification_) qualification_->validate(tax_);
    for (std::size_t i = 0; i < tasks_.size(); ++i) task_index_.emplace(tasks_[i].task_id, i);
    if (journal_path_ && std::filesystem::exists(*journal_path_)) {
      for_each_jsonl(*journal_path_, [&](std::size_t, const json& e) { apply(e); });
    }
  }

  const ReviewConfig& config() const { return cfg_; }
  const std::vector<ReviewTask>& tasks() const { return tasks_; }

  // Items in a fresh order for this attempt; answers to qualify() are read in
  // this order.
  std::vector<std::string> qualification_items(const std::string& annotator_id) {
    std::lock_guard lock(mutex_);
    require_annotator(annotator_id);
    if (!qualification_) return {};
    std::vector<std::size_t> order(qualification_->items.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(splitmix64(cfg_.seed ^ fnv1a64(annotator_id)) + static_cast<std::uint64_t>(qual_attempts_[annotator_id]));
    rng.shuffle(order);
    record({{"type", "qualification_served"}, {"annotator_id", annotator_id}, {"order", order}});
    std::vector<std::string> out;
    for (auto i : order) out.push_back(qualification_->items[i].text);
    return out;
  }

  QualificationResult qualify(const std::string& annotator_id, const std::vector<std::string>& answers) {
    std::lock_guard lock(mutex_);
    require_annotator(annotator_id);
    if (!qualification_) throw ConfigError("no qualification set configured");
    const auto& items = qualification_->items;
    if (answers.size() != items.size())
      throw LengthMismatchError("expected " + std::to_string(items.size()) + " answers, got " + std::to_string(answers.size()));
    std::vector<std::size_t> order = served_order_.count(annotator_id) ? served_order_[annotator_id] : identity(items.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < answers.size(); ++i)
      if (answers[i] == items[order[i]].expected) ++correct;
    const double score = static_cast<double>(correct) / static_cast<double>(items.size());
    const bool passed = score >= qualification_->pass_threshold;
    record({{"type", "qualification"}, {"annotator_id", annotator_id}, {"answers", answers}, {"score", score},
            {"passed", passed}, {"at_ms", clock_()}});
    return qualifications_.at(annotator_id);
  }

  bool qualified(const std::string& annotator_id) const {
    std::lock_guard lock(mutex_);
    return is_qualified(annotator_id);
  }

  // Sticky: an annotator with an unanswered task gets that task again.
  ReviewTask next_task(const std::string& annotator_id) {
    std::lock_guard lock(mutex_);
    require_annotator(annotator_id);
    if (!is_qualified(annotator_id)) throw NotQualifiedError("annotator '" + annotator_id + "' has not passed qualification");
    if (auto it = current_.find(annotator_id); it != current_.end()) return tasks_[it->second];
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      const auto& a = assignments_[i];
      if (a.size() >= cfg_.redundancy || a.count(annotator_id)) continue;
      record({{"type", "assign"}, {"task_id", tasks_[i].task_id}, {"annotator_id", annotator_id}, {"served_at_ms", clock_()}});
      return tasks_[i];
    }
    throw QueueExhaustedError("no remaining tasks for annotator '" + annotator_id + "'");
  }

  HumanAnnotation submit(const SubmissionRequest& req) {
    std::lock_guard lock(mutex_);
    auto ti = task_index_.find(req.task_id);
    if (ti == task_index_.end()) throw UnassignedTaskError("unknown task '" + req.task_id + "'");
    const auto& a = assignments_[ti->second];
    auto it = a.find(req.annotator_id);
    if (it == a.end())
      throw UnassignedTaskError("task '" + req.task_id + "' is not assigned to annotator '" + req.annotator_id + "'");
    if (it->second.submitted)
      throw DuplicateSubmissionError("annotator '" + req.annotator_id + "' already answered task '" + req.task_id + "'");
    if (!tax_.has_category(req.coarse)) throw UnknownLabelError("unknown coarse category '" + req.coarse + "'");
    const std::string expected = tax_.coarse_of(req.fine);
    if (expected != req.coarse)
      throw HierarchyMismatchError("fine label '" + req.fine + "' belongs to category " + expected + ", not " + req.coarse);
    if (req.client_elapsed_ms < 0) throw DomainError("elapsed_ms must be non-negative");
    const std::int64_t now = clock_();
    record({{"type", "submit"}, {"task_id", req.task_id}, {"annotator_id", req.annotator_id}, {"coarse", req.coarse},
            {"fine", req.fine}, {"client_elapsed_ms", req.client_elapsed_ms}, {"submitted_at_ms", now},
            {"elapsed_ms", std::max<std::int64_t>(0, now - it->second.served_at_ms)}});
    return submissions_.back();
  }

  std::vector<HumanAnnotation> submissions() const {
    std::lock_guard lock(mutex_);
    return submissions_;
  }

  json progress() const {
    std::lock_guard lock(mutex_);
    std::size_t complete = 0, done = 0, open = 0;
    std::map<std::string, std::size_t> per_annotator;
    for (const auto& a : assignments_) {
      std::size_t submitted = 0;
      for (const auto& [ann, st] : a) {
        if (st.submitted) {
          ++submitted;
          ++per_annotator[ann];
        } else {
          ++open;
        }
      }
      done += submitted;
      if (submitted >= cfg_.redundancy) ++complete;
    }
    json quals = json::object();
    for (const auto& [ann, q] : qualifications_) quals[ann] = q.to_json();
    return {{"tasks", tasks_.size()},
            {"redundancy", cfg_.redundancy},
            {"tasks_complete", complete},
            {"submissions", done},
            {"open_assignments", open},
            {"per_annotator", per_annotator},
            {"qualification", quals}};
  }

  // Label matrices over the tasks that received at least one submission.
  std::pair<LabelMatrix, LabelMatrix> label_matrices() const {
    std::lock_guard lock(mutex_);
    return matrices_from(submissions_, tasks_);
  }

  static std::pair<LabelMatrix, LabelMatrix> matrices_from(const std::vector<HumanAnnotation>& subs,
                                                           const std::vector<ReviewTask>& tasks) {
    std::set<std::string> annotators;
    std::map<std::string, std::map<std::string, const HumanAnnotation*>> by_task;
    for (const auto& s : subs) {
      annotators.insert(s.annotator_id);
      by_task[s.task_id][s.annotator_id] = &s;
    }
    LabelMatrix coarse, fine;
    coarse.annotator_ids = fine.annotator_ids = {annotators.begin(), annotators.end()};
    for (const auto& t : tasks) {
      auto it = by_task.find(t.task_id);
      if (it == by_task.end()) continue;
      coarse.item_ids.push_back(t.task_id);
      fine.item_ids.push_back(t.task_id);
      std::vector<Cell> c, f;
      for (const auto& ann : coarse.annotator_ids) {
        auto s = it->second.find(ann);
        c.push_back(s == it->second.end() ? Cell{} : Cell{s->second->coarse});
        f.push_back(s == it->second.end() ? Cell{} : Cell{s->second->fine});
      }
      coarse.cells.push_back(std::move(c));
      fine.cells.push_back(std::move(f));
    }
    return {coarse, fine};
  }

private:
  struct AssignmentState {
    std::int64_t served_at_ms = 0;
    bool submitted = false;
  };

  static std::vector<std::size_t> identity(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
  }

  static void require_annotator(const std::string& id) {
    if (id.empty()) throw DomainError("annotator_id is required");
  }

  bool is_qualified(const std::string& annotator_id) const {
    if (!qualification_) return true;
    auto it = qualifications_.find(annotator_id);
    return it != qualifications_.end() && it->second.passed;
  }

  void record(const json& event) {
    if (journal_path_) {
      if (!journal_) {
        if (journal_path_->has_parent_path()) std::filesystem::create_directories(journal_path_->parent_path());
        journal_.emplace(*journal_path_, std::ios::app | std::ios::binary);
        if (!*journal_) throw IoError("cannot open journal " + journal_path_->string());
      }
      *journal_ << event.dump() << '\n';
      journal_->flush();
      if (!*journal_) throw IoError("journal write failed");
    }
    apply(event);
  }

  // Applies a journal event; shared by live operation and replay.
  void apply(const json& e) {
    const auto type = e.at("type").get<std::string>();
    const auto annotator = e.at("annotator_id").get<std::string>();
    if (type == "qualification_served") {
      served_order_[annotator] = e.at("order").get<std::vector<std::size_t>>();
      ++qual_attempts_[annotator];
    } else if (type == "qualification") {
      auto& q = qualifications_[annotator];
      q.passed = e.at("passed").get<bool>();
      q.score = e.at("score").get<double>();
      q.attempt += 1;
      served_order_.erase(annotator);
    } else if (type == "assign") {
      auto idx = task_index_.at(e.at("task_id").get<std::string>());
      assignments_[idx][annotator] = {e.at("served_at_ms").get<std::int64_t>(), false};
      current_[annotator] = idx;
    } else if (type == "submit") {
      auto idx = task_index_.at(e.at("task_id").get<std::string>());
      assignments_[idx][annotator].submitted = true;
      current_.erase(annotator);
      HumanAnnotation h;
      h.task_id = e.at("task_id").get<std::string>();
      h.annotator_id = annotator;
      h.coarse = e.at("coarse").get<std::string>();
      h.fine = e.at("fine").get<std::string>();
      h.client_elapsed_ms = e.at("client_elapsed_ms").get<std::int64_t>();
      h.submitted_at_ms = e.at("submitted_at_ms").get<std::int64_t>();
      h.elapsed_ms = e.at("elapsed_ms").get<std::int64_t>();
      submissions_.push_back(std::move(h));
    } else {
      throw ParseError(0, "unknown journal event type '" + type + "'");
    }
  }

  std::vector<ReviewTask> tasks_;
  std::optional<QualificationSet> qualification_;
  const Taxonomy& tax_;
  ReviewConfig cfg_;
  std::optional<std::filesystem::path> journal_path_;
  std::optional<std::ofstream> journal_;
  Clock clock_;

  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> task_index_;
  std::vector<std::map<std::string, AssignmentState>> assignments_;
  std::map<std::string, std::size_t> current_;
  std::map<std::string, QualificationResult> qualifications_;
  std::map<std::string, std::vector<std::size_t>> served_order_;
  std::map<std::string, int> qual_attempts_;
  std::vector<HumanAnnotation> submissions_;
};

inline std::vector<HumanAnnotation> load_submissions(const std::filesystem::path& journal) {
  std::vector<HumanAnnotation> out;
  for_each_jsonl(journal, [&](std::size_t, const json& e) {
    if (e.value("type", "") != "submit") return;
    HumanAnnotation h;
    h.task_id = e.at("task_id").get<std::string>();
    h.annotator_id = e.at("annotator_id").get<std::string>();
    h.coarse = e.at("coarse").get<std::string>();
    h.fine = e.at("fine").get<std::string>();
    h.client_elapsed_ms = e.value("client_elapsed_ms", std::int64_t{0});
    h.submitted_at_ms = e.value("submitted_at_ms", std::int64_t{0});
    h.elapsed_ms = e.at("elapsed_ms").get<std::int64_t>();
    out.push_back(std::move(h));
  });
  return out;
}

struct TimingReport {
  std::size_t count = 0;
  double mean_s = 0.0;
  double median_s = 0.0;
  std::map<std::string, double> per_annotator_mean_s;

  json to_json() const {
    return {{"count", count}, {"mean_s", mean_s}, {"median_s", median_s}, {"per_annotator_mean_s", per_annotator_mean_s}};
  }
};

// Statistics over the server-side durations.
inline TimingReport timing_report(const std::vector<HumanAnnotation>& annotations) {
  TimingReport r;
  r.count = annotations.size();
  if (annotations.empty()) return r;
  std::vector<double> secs;
  std::map<std::string, std::pair<double, std::size_t>> per;
  for (const auto& a : annotations) {
    const double s = static_cast<double>(a.elapsed_ms) / 1000.0;
    secs.push_back(s);
    per[a.annotator_id].first += s;
    ++per[a.annotator_id].second;
  }
  r.mean_s = std::accumulate(secs.begin(), secs.end(), 0.0) / static_cast<double>(secs.size());
  std::sort(secs.begin(), secs.end());
  const std::size_t n = secs.size();
  r.median_s = n % 2 ? secs[n / 2] : 0.5 * (secs[n / 2 - 1] + secs[n / 2]);
  for (const auto& [ann, p] : per) r.per_annotator_mean_s[ann] = p.first / static_cast<double>(p.second);
  return r;
}

} // namespace propbench
