#pragma once

// Experiment battery: distractor selection, input-condition ablation, shot
// sweeps, stratified reports, scenario matrices and standalone scoring.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mhqa/backend.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/pipeline.hpp"
#include "mhqa/prompting.hpp"
#include "mhqa/tables.hpp"

namespace mhqa {

// ---------------------------------------------------------------------------
// Distractor selection

struct DistractorChoice {
  std::string example_id;
  std::vector<std::string> chosen;
  std::vector<double> scores;
  bool insufficient = false;  // fewer non-gold paragraphs than requested

  bool operator==(const DistractorChoice&) const = default;
};

/// Unit embedded for a paragraph: title, a space, then its sentences.
inline std::string embedding_text(const Paragraph& p) { return p.title + " " + p.text(); }

/// Top-k non-gold paragraphs by cosine similarity to the question. Scores
/// equal to 9 decimals are ties, and ties go to the paragraph that comes
/// first in the context.
inline DistractorChoice select_distractors(const HotpotExample& ex, const EmbedBackend& embedder, std::size_t k = 2) {
  DistractorChoice choice;
  choice.example_id = ex.id;
  const auto gold = gold_titles(ex);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ex.context.size(); ++i)
    if (std::find(gold.begin(), gold.end(), ex.context[i].title) == gold.end()) candidates.push_back(i);
  if (candidates.empty()) throw ConfigError("example " + ex.id + " has no non-gold paragraph");
  if (candidates.size() < k) choice.insufficient = true;

  std::vector<std::string> texts{ex.question};
  for (auto i : candidates) texts.push_back(embedding_text(ex.context[i]));
  const auto vectors = embedder.embed(texts);

  struct Scored {
    double score;
    std::size_t index;
  };
  std::vector<Scored> scored;
  for (std::size_t c = 0; c < candidates.size(); ++c)
    scored.push_back({cosine_similarity(vectors[0].values, vectors[c + 1].values), candidates[c]});
  const auto take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(take), scored.end(), [](const Scored& a, const Scored& b) {
    const double ka = std::round(a.score * 1e9), kb = std::round(b.score * 1e9);
    return ka != kb ? ka > kb : a.index < b.index;
  });
  for (std::size_t i = 0; i < take; ++i) {
    choice.chosen.push_back(ex.context[scored[i].index].title);
    choice.scores.push_back(scored[i].score);
  }
  return choice;
}

inline json to_json(const DistractorChoice& d) {
  return json{{"id", d.example_id}, {"chosen", d.chosen}, {"scores", d.scores}, {"insufficient", d.insufficient}};
}

inline DistractorChoice distractor_from_json(const json& j) {
  return {j.at("id").get<std::string>(), j.at("chosen").get<std::vector<std::string>>(),
          j.at("scores").get<std::vector<double>>(), j.at("insufficient").get<bool>()};
}

/// Distractors computed once per example and reused by every condition and
/// model. Optionally persisted as a JSON array.
class DistractorCache {
 public:
  DistractorCache() = default;
  explicit DistractorCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(*path_);
    if (!in) return;
    for (const auto& j : json::parse(in)) {
      auto d = distractor_from_json(j);
      choices_.emplace(d.example_id, std::move(d));
    }
  }

  const DistractorChoice& get(const HotpotExample& ex, const EmbedBackend& embedder) {
    {
      std::lock_guard lock(mu_);
      if (auto it = choices_.find(ex.id); it != choices_.end()) return it->second;
    }
    auto d = select_distractors(ex, embedder);
    std::lock_guard lock(mu_);
    return choices_.emplace(ex.id, std::move(d)).first->second;
  }

  void save() const {
    if (!path_) return;
    json arr = json::array();
    std::lock_guard lock(mu_);
    for (const auto& [id, d] : choices_) arr.push_back(to_json(d));
    std::ofstream out(*path_, std::ios::binary | std::ios::trunc);
    out << arr.dump(1);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return choices_.size();
  }

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::map<std::string, DistractorChoice> choices_;
};

// ---------------------------------------------------------------------------
// Reader-only experiments

struct ReaderExperimentOptions {
  std::size_t parallelism = 1;
  std::shared_ptr<const Prompter> prompter = std::make_shared<const Prompter>();
  std::chrono::milliseconds timeout{std::chrono::seconds(120)};
  std::string label = "reader";
  std::optional<std::filesystem::path> records_dir;  // one JSON-lines file per cell
};

namespace detail {

inline BatchOptions cell_options(const ReaderExperimentOptions& opts, const std::string& cell) {
  BatchOptions b;
  b.parallelism = opts.parallelism;
  b.strata_keys = {"sf_bucket", "qtype", "level"};
  if (opts.records_dir) b.records_path = *opts.records_dir / (cell + ".jsonl");
  return b;
}

}  // namespace detail

struct AblationReport {
  std::string label;
  std::map<ReaderInputMode, MetricReport> conditions;
};

inline std::string_view condition_heading(ReaderInputMode m) {
  switch (m) {
    case ReaderInputMode::question_only: return "Question";
    case ReaderInputMode::supporting_facts: return "Supporting Facts";
    case ReaderInputMode::gold_only: return "Gold Only";
    case ReaderInputMode::gold_plus_2_distractors: return "Gold + 2 Distractors";
    case ReaderInputMode::all_paragraphs: return "All Paragraphs";
  }
  return "?";
}

/// Runs the reader over the same examples under all five input conditions.
/// Distractors for the fourth condition come from `distractors`.
inline AblationReport ablate_inputs(const std::vector<HotpotExample>& corpus, const ChatHandle& reader,
                                    const EmbedBackend& embedder, DistractorCache& distractors,
                                    const ReaderExperimentOptions& opts = {}) {
  AblationReport out;
  out.label = opts.label;
  for (auto mode : kAllReaderInputModes) {
    ReaderRunConfig cfg{reader, PromptProfile{PromptRole::reader, 0, false, mode}, opts.prompter, opts.timeout, opts.label};
    auto fn = [&](const HotpotExample& ex) {
      ReaderEvidence evidence;
      if (mode == ReaderInputMode::gold_plus_2_distractors) evidence.distractor_titles = distractors.get(ex, embedder).chosen;
      return run_reader_example(cfg, ex, evidence);
    };
    auto batch = run_batch_with(fn, corpus, detail::cell_options(opts, "ablate_" + std::string(to_string(mode))));
    out.conditions.emplace(mode, std::move(batch.report));
  }
  distractors.save();
  return out;
}

/// One row per ablation report, columns in the order of the input-condition table.
inline TextTable ablation_table(const std::vector<AblationReport>& reports) {
  TextTable t;
  t.title = "Reader performance by input condition (answer EM / F1)";
  t.header = {"Model"};
  for (auto m : kAllReaderInputModes) {
    t.header.push_back(std::string(condition_heading(m)) + " EM");
    t.header.push_back(std::string(condition_heading(m)) + " F1");
  }
  for (const auto& r : reports) {
    std::vector<std::string> row{r.label};
    for (auto m : kAllReaderInputModes) {
      auto it = r.conditions.find(m);
      std::optional<ScoreMeans> a = it == r.conditions.end() ? std::nullopt : it->second.overall.answer;
      row.push_back(pct(em_of(a)));
      row.push_back(pct(f1_of(a)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct SweepCell {
  int shots = 0;
  bool cot = false;
  MetricReport report;
};

struct SweepReport {
  std::string label;
  std::vector<SweepCell> cells;  // cot off then on, shots ascending
};

inline constexpr int kDefaultShotGrid[] = {0, 1, 2, 4, 8};

/// Shot-count × chain-of-thought grid over the same examples; the reader
/// sees the supporting facts, as in the zero-shot baseline.
inline SweepReport fewshot_sweep(const std::vector<HotpotExample>& corpus, const ChatHandle& reader,
                                 const ReaderExperimentOptions& opts = {},
                                 const std::vector<int>& shot_grid = {std::begin(kDefaultShotGrid), std::end(kDefaultShotGrid)},
                                 const std::vector<bool>& cot_grid = {false, true}) {
  if (!opts.prompter->shot_pool()) throw ConfigError("few-shot sweep requires a shot pool");
  SweepReport out;
  out.label = opts.label;
  for (bool cot : cot_grid) {
    for (int shots : shot_grid) {
      ReaderRunConfig cfg{reader, PromptProfile{PromptRole::reader, shots, cot, ReaderInputMode::supporting_facts},
                          opts.prompter, opts.timeout, opts.label};
      cfg.profile.validate();
      auto batch = run_batch_with([&](const HotpotExample& ex) { return run_reader_example(cfg, ex); }, corpus,
                                  detail::cell_options(opts, "sweep_shots" + std::to_string(shots) + (cot ? "_cot" : "")));
      out.cells.push_back({shots, cot, std::move(batch.report)});
    }
  }
  return out;
}

inline TextTable sweep_table(const SweepReport& sweep) {
  TextTable t;
  t.title = "Few-shot results (answer EM / F1)";
  t.header = {"Model", "CoT"};
  std::vector<int> shots;
  for (const auto& c : sweep.cells)
    if (std::find(shots.begin(), shots.end(), c.shots) == shots.end()) shots.push_back(c.shots);
  for (int s : shots) {
    auto name = s == 0 ? std::string("Zero-shot") : std::to_string(s) + "-shot";
    t.header.push_back(name + " EM");
    t.header.push_back(name + " F1");
  }
  for (bool cot : {false, true}) {
    std::vector<std::string> row{sweep.label, cot ? "yes" : "no"};
    bool any = false;
    for (int s : shots) {
      auto it = std::find_if(sweep.cells.begin(), sweep.cells.end(), [&](const SweepCell& c) { return c.shots == s && c.cot == cot; });
      std::optional<ScoreMeans> a;
      if (it != sweep.cells.end()) {
        a = it->report.overall.answer;
        any = true;
      }
      row.push_back(pct(em_of(a)));
      row.push_back(pct(f1_of(a)));
    }
    if (any) t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Stratification

/// Re-aggregates persisted records by supporting-fact bucket, question type
/// and level. Records whose id is not in the corpus are reported back.
inline MetricReport stratify(const std::vector<RunRecord>& records, const CorpusIndex& corpus,
                             std::vector<std::string>* unknown_ids = nullptr) {
  std::vector<ExampleScores> scores;
  for (const auto& r : records) {
    const auto* ex = corpus.find(r.example_id);
    if (ex == nullptr) {
      if (unknown_ids != nullptr) unknown_ids->push_back(r.example_id);
      continue;
    }
    scores.push_back(scores_of(r, ex));
  }
  return aggregate(std::move(scores), {"sf_bucket", "qtype", "level"});
}

inline TextTable stratified_table(const std::vector<std::pair<std::string, MetricReport>>& reports) {
  TextTable t;
  t.title = "Answer EM / F1 by number of supporting facts";
  t.header = {"Model", "Two EM", "Two F1", "Three EM", "Three F1", "Four or More EM", "Four or More F1"};
  for (const auto& [label, report] : reports) {
    std::vector<std::string> row{label};
    auto it = report.strata.find("sf_bucket");
    for (const char* bucket : {"Two", "Three", "FourPlus"}) {
      std::optional<ScoreMeans> a;
      if (it != report.strata.end())
        if (auto b = it->second.find(bucket); b != it->second.end()) a = b->second.answer;
      row.push_back(pct(em_of(a)));
      row.push_back(pct(f1_of(a)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Scenario matrix

struct MatrixRow {
  ScenarioId scenario;
  std::string label;
  MetricReport report;
};

inline std::vector<MatrixRow> scenario_matrix(const std::vector<HotpotExample>& corpus, const std::vector<PipelineConfig>& configs,
                                              std::size_t parallelism = 1,
                                              const std::optional<std::filesystem::path>& records_dir = std::nullopt) {
  std::vector<MatrixRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& cfg = configs[i];
    BatchOptions opts;
    opts.parallelism = parallelism;
    if (records_dir)
      opts.records_path = *records_dir / ("matrix_" + std::to_string(i) + "_" + std::string(to_string(cfg.scenario)) + ".jsonl");
    auto batch = run_batch(cfg, corpus, opts);
    rows.push_back({cfg.scenario, cfg.label, std::move(batch.report)});
  }
  return rows;
}

/// Columns: supporting facts EM/F1, answer EM/F1, joint EM/F1.
inline TextTable matrix_table(const std::vector<MatrixRow>& rows) {
  TextTable t;
  t.title = "Selector-reader integrations";
  t.header = {"Scenario", "Reader", "SF EM", "SF F1", "Answer EM", "Answer F1", "Joint EM", "Joint F1"};
  for (const auto& r : rows) {
    const auto& o = r.report.overall;
    t.rows.push_back({std::to_string(scenario_number(r.scenario)), r.label.empty() ? "-" : r.label, pct(em_of(o.sp)),
                      pct(f1_of(o.sp)), pct(em_of(o.answer)), pct(f1_of(o.answer)), pct(em_of(o.joint)), pct(f1_of(o.joint))});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Standalone scoring

struct ScoreFileResult {
  MetricReport report;
  std::vector<std::string> warnings;
};

/// Scores a predictions object {"answer": {id: text}, "sp": {id: [[title, i], ...]}}
/// against the gold corpus. Missing ids score as empty predictions.
inline ScoreFileResult score_predictions(const json& predictions, const std::vector<HotpotExample>& gold) {
  ScoreFileResult out;
  const json empty = json::object();
  const auto& answers = predictions.contains("answer") ? predictions.at("answer") : empty;
  const auto& sps = predictions.contains("sp") ? predictions.at("sp") : empty;
  std::vector<ExampleScores> scores;
  scores.reserve(gold.size());
  for (const auto& ex : gold) {
    std::string answer;
    std::vector<SupportingFact> facts;
    if (auto it = answers.find(ex.id); it != answers.end()) {
      answer = it->get<std::string>();
    } else {
      out.warnings.push_back("missing answer for " + ex.id);
    }
    if (auto it = sps.find(ex.id); it != sps.end()) {
      for (const auto& sf : *it) facts.push_back({sf.at(0).get<std::string>(), sf.at(1).get<std::size_t>()});
    } else {
      out.warnings.push_back("missing supporting facts for " + ex.id);
    }
    ExampleScores s;
    s.id = ex.id;
    s.answer = score_answer(answer, ex.answer);
    s.sp = score_sp(facts, ex.supporting_facts);
    s.joint = score_joint(*s.answer, *s.sp);
    s.strata = strata_of(ex);
    scores.push_back(std::move(s));
  }
  out.report = aggregate(std::move(scores), {"sf_bucket", "qtype", "level"});
  return out;
}

inline ScoreFileResult score_file(const std::filesystem::path& predictions_path, const std::vector<HotpotExample>& gold) {
  std::ifstream in(predictions_path);
  if (!in) throw CorpusIOError("cannot open predictions file " + predictions_path.string());
  return score_predictions(json::parse(in), gold);
}

/// Predictions object in the scoring format, built from run records.
inline json predictions_json(const std::vector<RunRecord>& records) {
  json answers = json::object(), sp = json::object();
  for (const auto& r : records) {
    answers[r.example_id] = r.prediction.answer;
    sp[r.example_id] = facts_to_json(r.prediction.supporting_facts);
  }
  return json{{"answer", std::move(answers)}, {"sp", std::move(sp)}};
}

inline TextTable summary_table(const std::string& label, const MetricReport& report) {
  TextTable t;
  t.header = {"System", "SF EM", "SF F1", "Answer EM", "Answer F1", "Joint EM", "Joint F1"};
  const auto& o = report.overall;
  t.rows.push_back({label, pct(em_of(o.sp)), pct(f1_of(o.sp)), pct(em_of(o.answer)), pct(f1_of(o.answer)), pct(em_of(o.joint)),
                    pct(f1_of(o.joint))});
  return t;
}

// ---------------------------------------------------------------------------
// Sampling

/// Fixed-seed uniform sample of `limit` examples, kept in corpus order.
inline std::vector<HotpotExample> sample_corpus(const std::vector<HotpotExample>& corpus, std::optional<std::size_t> limit,
                                                std::uint64_t seed) {
  if (!limit || *limit >= corpus.size()) return corpus;
  std::vector<HotpotExample> out;
  for (auto i : util::sample_indices(corpus.size(), *limit, seed)) out.push_back(corpus[i]);
  return out;
}

}  // namespace mhqa
