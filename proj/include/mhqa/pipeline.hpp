#pragma once

// The six selector/reader integration topologies as explicit stage graphs,
// plus a reader-only path, and the batch runner with JSON-lines persistence
// and resume.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mhqa/backend.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/prompting.hpp"

namespace mhqa {

enum class ScenarioId { S1_AllInOne, S2_SingleStage, S3_TwoStage_SF, S4_TwoStage_Gold, S5_TwoStageSubq_SF, S6_TwoStageSubq_Gold };

inline constexpr ScenarioId kAllScenarios[] = {ScenarioId::S1_AllInOne,        ScenarioId::S2_SingleStage,
                                               ScenarioId::S3_TwoStage_SF,     ScenarioId::S4_TwoStage_Gold,
                                               ScenarioId::S5_TwoStageSubq_SF, ScenarioId::S6_TwoStageSubq_Gold};

inline std::string_view to_string(ScenarioId s) {
  switch (s) {
    case ScenarioId::S1_AllInOne: return "S1_AllInOne";
    case ScenarioId::S2_SingleStage: return "S2_SingleStage";
    case ScenarioId::S3_TwoStage_SF: return "S3_TwoStage_SF";
    case ScenarioId::S4_TwoStage_Gold: return "S4_TwoStage_Gold";
    case ScenarioId::S5_TwoStageSubq_SF: return "S5_TwoStageSubq_SF";
    case ScenarioId::S6_TwoStageSubq_Gold: return "S6_TwoStageSubq_Gold";
  }
  return "?";
}

inline int scenario_number(ScenarioId s) { return static_cast<int>(s) + 1; }

/// Accepts "S3", "3" or the full name "S3_TwoStage_SF".
inline ScenarioId parse_scenario(std::string_view s) {
  for (auto id : kAllScenarios) {
    auto name = to_string(id);
    auto num = std::to_string(scenario_number(id));
    if (s == name || s == "S" + num || s == num) return id;
  }
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

namespace stage {
inline constexpr std::string_view kAllInOne = "all_in_one";
inline constexpr std::string_view kSingleStageSelector = "single_stage_selector";
inline constexpr std::string_view kParagraphSelector = "paragraph_selector";
inline constexpr std::string_view kDecomposer = "decomposer";
inline constexpr std::string_view kSentenceSelector = "sentence_selector";
inline constexpr std::string_view kReader = "reader";
}  // namespace stage

inline std::vector<std::string_view> stage_sequence(ScenarioId s) {
  using namespace stage;
  switch (s) {
    case ScenarioId::S1_AllInOne: return {kAllInOne};
    case ScenarioId::S2_SingleStage: return {kSingleStageSelector, kReader};
    case ScenarioId::S3_TwoStage_SF:
    case ScenarioId::S4_TwoStage_Gold: return {kParagraphSelector, kSentenceSelector, kReader};
    case ScenarioId::S5_TwoStageSubq_SF:
    case ScenarioId::S6_TwoStageSubq_Gold: return {kParagraphSelector, kDecomposer, kSentenceSelector, kReader};
  }
  return {};
}

inline bool uses_decomposer(ScenarioId s) {
  return s == ScenarioId::S5_TwoStageSubq_SF || s == ScenarioId::S6_TwoStageSubq_Gold;
}
inline bool two_stage(ScenarioId s) { return s != ScenarioId::S1_AllInOne && s != ScenarioId::S2_SingleStage; }
inline bool reader_gets_paragraphs(ScenarioId s) {
  return s == ScenarioId::S4_TwoStage_Gold || s == ScenarioId::S6_TwoStageSubq_Gold;
}

struct PipelineConfig {
  ScenarioId scenario = ScenarioId::S3_TwoStage_SF;
  ChatHandle selector;           // all-in-one model (S1), single-stage (S2), paragraph selector (S3-S6)
  ChatHandle sentence_selector;  // S3-S6
  ChatHandle decomposer;         // S5, S6
  ChatHandle reader;             // S2-S6
  PromptProfile reader_profile;
  std::shared_ptr<const Prompter> prompter = std::make_shared<const Prompter>();
  std::chrono::milliseconds timeout{std::chrono::seconds(120)};
  std::string label;  // reader variant or any row label

  void validate() const {
    if (!prompter) throw ConfigError("pipeline needs a prompter");
    if (!selector) throw ConfigError(std::string(to_string(scenario)) + " needs a selector backend");
    if (scenario != ScenarioId::S1_AllInOne && !reader) throw ConfigError(std::string(to_string(scenario)) + " needs a reader backend");
    if (two_stage(scenario) && !sentence_selector)
      throw ConfigError(std::string(to_string(scenario)) + " needs a sentence selector backend");
    if (uses_decomposer(scenario) && !decomposer)
      throw ConfigError(std::string(to_string(scenario)) + " needs a decomposer backend");
    reader_profile.validate();
  }

  /// The reader profile with the scenario's forced input mode applied.
  PromptProfile effective_reader_profile() const {
    auto p = reader_profile;
    p.role = PromptRole::reader;
    p.reader_input_mode = reader_gets_paragraphs(scenario) ? ReaderInputMode::gold_only : ReaderInputMode::supporting_facts;
    return p;
  }
};

struct StageEntry {
  std::string name;
  std::string prompt_digest;
  std::string raw_output;
  json parsed;
  std::vector<std::string> warnings;
  long latency_ms = 0;
  bool cache_hit = false;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct RunRecord {
  std::string example_id;
  std::string run;  // scenario name or reader condition
  std::string label;
  std::vector<StageEntry> stages;
  Prediction prediction;
  std::optional<AnswerScore> answer;
  std::optional<SpScore> sp;
  std::optional<JointScore> joint;
  std::vector<std::string> failures;

  std::vector<std::string> stage_names() const {
    std::vector<std::string> out;
    for (const auto& s : stages) out.push_back(s.name);
    return out;
  }
};

inline json to_json(const StageEntry& s) {
  return json{{"name", s.name},     {"prompt_digest", s.prompt_digest}, {"raw_output", s.raw_output},
              {"parsed", s.parsed}, {"warnings", s.warnings},           {"latency_ms", s.latency_ms},
              {"cache_hit", s.cache_hit}, {"error", s.error}};
}

inline StageEntry stage_from_json(const json& j) {
  StageEntry s;
  s.name = j.at("name").get<std::string>();
  s.prompt_digest = j.at("prompt_digest").get<std::string>();
  s.raw_output = j.at("raw_output").get<std::string>();
  s.parsed = j.at("parsed");
  s.warnings = j.at("warnings").get<std::vector<std::string>>();
  s.latency_ms = j.at("latency_ms").get<long>();
  s.cache_hit = j.at("cache_hit").get<bool>();
  s.error = j.at("error").get<std::string>();
  return s;
}

inline json to_json(const RunRecord& r) {
  json stages = json::array();
  for (const auto& s : r.stages) stages.push_back(to_json(s));
  auto score = [](const auto& s) { return score_to_json(s); };
  return json{{"id", r.example_id},
              {"run", r.run},
              {"label", r.label},
              {"stages", std::move(stages)},
              {"prediction", to_json(r.prediction)},
              {"answer", optional_to_json(r.answer, score)},
              {"sp", optional_to_json(r.sp, score)},
              {"joint", optional_to_json(r.joint, score)},
              {"failures", r.failures}};
}

inline RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.example_id = j.at("id").get<std::string>();
  r.run = j.at("run").get<std::string>();
  r.label = j.at("label").get<std::string>();
  for (const auto& s : j.at("stages")) r.stages.push_back(stage_from_json(s));
  r.prediction = prediction_from_json(j.at("prediction"));
  if (!j.at("answer").is_null()) r.answer = score_from_json<AnswerScore>(j.at("answer"));
  if (!j.at("sp").is_null()) r.sp = score_from_json<SpScore>(j.at("sp"));
  if (!j.at("joint").is_null()) r.joint = score_from_json<JointScore>(j.at("joint"));
  r.failures = j.at("failures").get<std::vector<std::string>>();
  return r;
}

inline std::map<std::string, std::string> strata_of(const HotpotExample& ex) {
  return {{"sf_bucket", std::string(to_string(sf_count_bucket(ex)))},
          {"qtype", std::string(to_string(ex.qtype))},
          {"level", std::string(to_string(ex.level))}};
}

inline ExampleScores scores_of(const RunRecord& r, const HotpotExample* ex = nullptr) {
  ExampleScores s;
  s.id = r.example_id;
  s.answer = r.answer;
  s.sp = r.sp;
  s.joint = r.joint;
  if (ex != nullptr) s.strata = strata_of(*ex);
  return s;
}

namespace detail {

class StageRunner {
 public:
  StageRunner(RunRecord& record, std::chrono::steady_clock::time_point deadline) : record_(record), deadline_(deadline) {}

  /// Calls the backend and records the stage. Returns the raw text, or
  /// nullopt when the stage failed (the failure is recorded).
  std::optional<std::string> call(std::string_view name, const ChatHandle& backend,
                                  const std::function<ChatRequest()>& make_request) {
    StageEntry& entry = record_.stages.emplace_back();
    entry.name = std::string(name);
    if (std::chrono::steady_clock::now() > deadline_) return fail(entry, "per-example timeout exceeded before stage");
    try {
      auto request = make_request();
      entry.prompt_digest = cache_key(*backend, request);
      const auto start = std::chrono::steady_clock::now();
      auto response = backend->generate(request);
      entry.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
      entry.cache_hit = response.cache_hit;
      entry.raw_output = response.text;
      return response.text;
    } catch (const BackendError& e) {
      return fail(entry, std::string("backend error: ") + e.what());
    } catch (const ConfigError& e) {
      return fail(entry, std::string("configuration error: ") + e.what());
    }
  }

  StageEntry& last() { return record_.stages.back(); }

  void parse_failure(const std::string& reason) {
    last().warnings.push_back("parse failed: " + reason);
    record_.failures.push_back(last().name + ": parse failed: " + reason);
  }

 private:
  std::nullopt_t fail(StageEntry& entry, std::string why) {
    entry.error = why;
    record_.failures.push_back(entry.name + ": " + why);
    return std::nullopt;
  }

  RunRecord& record_;
  std::chrono::steady_clock::time_point deadline_;
};

inline json selection_json(const Prediction& p) {
  return json{{"titles", p.titles}, {"supporting_facts", facts_to_json(p.supporting_facts)}, {"parse_failed", p.parse_failed}};
}

inline void append_warnings(std::vector<std::string>& dst, const std::vector<std::string>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

/// Runs the reader stage and stores the parsed answer in the prediction.
inline void reader_stage(StageRunner& runner, RunRecord& record, const ChatHandle& reader, const Prompter& prompter,
                         const HotpotExample& ex, const PromptProfile& profile, const ReaderEvidence& evidence) {
  auto text = runner.call(stage::kReader, reader, [&] { return prompter.build_reader_prompt(ex, profile, evidence); });
  if (!text) {
    record.prediction.parse_failed = true;
    return;
  }
  auto out = parse_reader_output(*text);
  auto& entry = runner.last();
  entry.parsed = json{{"answer", out.answer}, {"rationale", out.rationale ? json(*out.rationale) : json(nullptr)}, {"no_marker", out.no_marker}};
  if (out.no_marker) entry.warnings.push_back("no answer marker; whole output taken as answer");
  if (out.parse_failed) {
    runner.parse_failure(out.failure_reason);
    record.prediction.parse_failed = true;
    record.prediction.failure_reason = out.failure_reason;
  }
  record.prediction.answer = out.answer;
  append_warnings(record.prediction.warnings, entry.warnings);
}

inline Prediction selector_stage(StageRunner& runner, std::string_view name, const ChatHandle& backend,
                                 const std::function<ChatRequest()>& make_request, const std::vector<Paragraph>& candidates,
                                 RunRecord& record) {
  auto text = runner.call(name, backend, make_request);
  if (!text) {
    Prediction p;
    p.parse_failed = true;
    p.failure_reason = runner.last().error;
    return p;
  }
  auto p = parse_selector_output(*text, candidates);
  auto& entry = runner.last();
  entry.parsed = selection_json(p);
  append_warnings(entry.warnings, p.warnings);
  if (p.parse_failed) runner.parse_failure(p.failure_reason);
  append_warnings(record.prediction.warnings, p.warnings);
  return p;
}

inline void finalize_scores(RunRecord& record, const HotpotExample& ex, bool with_sp) {
  record.answer = score_answer(record.prediction.answer, ex.answer);
  if (with_sp) {
    record.sp = score_sp(record.prediction.supporting_facts, ex.supporting_facts);
    record.joint = score_joint(*record.answer, *record.sp);
  }
  if (!record.failures.empty() && record.prediction.failure_reason.empty())
    record.prediction.failure_reason = record.failures.front();
}

}  // namespace detail

/// Runs one example through the scenario's stage graph. Stage failures never
/// throw: downstream stages receive empty evidence and the record is flagged.
inline RunRecord run_example(const PipelineConfig& cfg, const HotpotExample& ex) {
  cfg.validate();
  RunRecord record;
  record.example_id = ex.id;
  record.run = std::string(to_string(cfg.scenario));
  record.label = cfg.label;
  detail::StageRunner runner(record, std::chrono::steady_clock::now() + cfg.timeout);
  const auto& prompter = *cfg.prompter;
  const auto reader_profile = cfg.effective_reader_profile();
  auto& pred = record.prediction;

  if (cfg.scenario == ScenarioId::S1_AllInOne) {
    auto text = runner.call(stage::kAllInOne, cfg.selector, [&] { return prompter.build_all_in_one_prompt(ex); });
    if (text) {
      auto p = parse_all_in_one_output(*text, ex.context);
      auto& entry = runner.last();
      entry.parsed = detail::selection_json(p);
      entry.parsed["answer"] = p.answer;
      detail::append_warnings(entry.warnings, p.warnings);
      if (p.parse_failed) runner.parse_failure(p.failure_reason);
      pred = p;
    } else {
      pred.parse_failed = true;
    }
    detail::finalize_scores(record, ex, true);
    return record;
  }

  if (cfg.scenario == ScenarioId::S2_SingleStage) {
    auto sel = detail::selector_stage(
        runner, stage::kSingleStageSelector, cfg.selector,
        [&] { return prompter.build_selector_prompt(SelectorVariant::single_stage, ex, ex.context); }, ex.context, record);
    pred.supporting_facts = sel.supporting_facts;
    pred.titles = sel.titles;
    pred.parse_failed = sel.parse_failed;
    ReaderEvidence evidence;
    evidence.facts = sel.supporting_facts;
    detail::reader_stage(runner, record, cfg.reader, prompter, ex, reader_profile, evidence);
    detail::finalize_scores(record, ex, true);
    return record;
  }

  // Two-stage selector: paragraphs, optional decomposition, sentences.
  auto paragraphs = detail::selector_stage(
      runner, stage::kParagraphSelector, cfg.selector,
      [&] { return prompter.build_selector_prompt(SelectorVariant::paragraph, ex, ex.context); }, ex.context, record);
  pred.titles = paragraphs.titles;
  const auto selected = paragraphs_in_context_order(ex, paragraphs.titles);

  std::optional<SubQuestions> subs;
  if (uses_decomposer(cfg.scenario)) {
    auto text = runner.call(stage::kDecomposer, cfg.decomposer, [&] { return prompter.build_decomposer_prompt(ex.id, ex.question); });
    if (text) {
      auto out = parse_decomposer_output(*text, ex.question);
      auto& entry = runner.last();
      entry.parsed = json{{"subs", out.sub_questions.subs}};
      detail::append_warnings(entry.warnings, out.warnings);
      if (out.parse_failed) {
        runner.parse_failure(out.failure_reason);
      } else {
        subs = out.sub_questions;
      }
    }
  }

  auto sentences = detail::selector_stage(
      runner, stage::kSentenceSelector, cfg.sentence_selector,
      [&] { return prompter.build_selector_prompt(SelectorVariant::sentence, ex, selected, subs ? &*subs : nullptr); },
      selected, record);
  pred.supporting_facts = sentences.supporting_facts;
  pred.parse_failed = paragraphs.parse_failed || sentences.parse_failed;

  ReaderEvidence evidence;
  if (reader_gets_paragraphs(cfg.scenario)) {
    evidence.titles = paragraphs.titles;
  } else {
    evidence.facts = sentences.supporting_facts;
  }
  detail::reader_stage(runner, record, cfg.reader, prompter, ex, reader_profile, evidence);
  detail::finalize_scores(record, ex, true);
  return record;
}

/// Reader evaluated alone on one input condition (ablations, shot sweeps).
struct ReaderRunConfig {
  ChatHandle reader;
  PromptProfile profile;
  std::shared_ptr<const Prompter> prompter = std::make_shared<const Prompter>();
  std::chrono::milliseconds timeout{std::chrono::seconds(120)};
  std::string label;
};

inline RunRecord run_reader_example(const ReaderRunConfig& cfg, const HotpotExample& ex, const ReaderEvidence& evidence = {}) {
  if (!cfg.reader) throw ConfigError("reader run needs a reader backend");
  RunRecord record;
  record.example_id = ex.id;
  record.run = "reader:" + std::string(to_string(cfg.profile.reader_input_mode)) + ":shots" + std::to_string(cfg.profile.shots) +
               (cfg.profile.cot ? ":cot" : "");
  record.label = cfg.label;
  detail::StageRunner runner(record, std::chrono::steady_clock::now() + cfg.timeout);
  detail::reader_stage(runner, record, cfg.reader, *cfg.prompter, ex, cfg.profile, evidence);
  detail::finalize_scores(record, ex, false);
  return record;
}

// ---------------------------------------------------------------------------
// Batch runner

struct BatchOptions {
  std::size_t parallelism = 1;
  std::optional<std::filesystem::path> records_path;  // JSON-lines, append-only
  std::vector<std::string> strata_keys;
  std::optional<std::size_t> stop_after;  // stop scheduling after this many new records
};

struct BatchResult {
  MetricReport report;
  std::vector<RunRecord> records;  // sorted by example id
  std::size_t resumed = 0;
  std::size_t executed = 0;
  bool complete = false;
};

/// Reads complete records from a JSON-lines file; a torn final line is
/// ignored.
inline std::vector<RunRecord> read_records(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (util::trim(line).empty()) continue;
    try {
      out.push_back(run_record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      util::log_warning(path.string() + ":" + std::to_string(lineno) + ": skipping unreadable record (" + e.what() + ")");
    }
  }
  return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<RunRecord>& records) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

/// Runs `fn` over the corpus on a bounded worker pool. With a records path,
/// ids already recorded there are skipped and new records are appended as
/// they complete. The report covers every corpus example that has a record.
inline BatchResult run_batch_with(const std::function<RunRecord(const HotpotExample&)>& fn,
                                  const std::vector<HotpotExample>& corpus, const BatchOptions& opts = {}) {
  BatchResult result;
  std::vector<RunRecord> previous;
  std::unordered_set<std::string> done;
  std::unordered_set<std::string> wanted;
  for (const auto& ex : corpus) wanted.insert(ex.id);

  std::ofstream sink;
  if (opts.records_path) {
    if (std::filesystem::exists(*opts.records_path)) {
      for (auto& r : read_records(*opts.records_path))
        if (wanted.count(r.example_id) != 0 && done.insert(r.example_id).second) previous.push_back(std::move(r));
      // Rewrite without a torn tail so appends start on a clean line.
      write_records(*opts.records_path, previous);
    } else if (opts.records_path->has_parent_path()) {
      std::filesystem::create_directories(opts.records_path->parent_path());
    }
    sink.open(*opts.records_path, std::ios::binary | std::ios::app);
    if (!sink) throw std::runtime_error("cannot append to " + opts.records_path->string());
  }
  result.resumed = previous.size();

  std::vector<const HotpotExample*> todo;
  for (const auto& ex : corpus)
    if (done.count(ex.id) == 0) todo.push_back(&ex);

  std::vector<std::optional<RunRecord>> fresh(todo.size());
  std::mutex sink_mu;
  std::atomic<std::size_t> started{0};
  util::parallel_for(todo.size(), opts.parallelism, [&](std::size_t i) {
    if (opts.stop_after && started.fetch_add(1) >= *opts.stop_after) return;
    RunRecord r;
    try {
      r = fn(*todo[i]);
    } catch (const std::exception& e) {
      // Isolate unexpected failures to the example.
      r = RunRecord{};
      r.example_id = todo[i]->id;
      r.failures.push_back(std::string("unhandled error: ") + e.what());
      r.prediction.parse_failed = true;
      r.prediction.failure_reason = r.failures.back();
      r.answer = score_answer("", todo[i]->answer);
      r.sp = score_sp({}, todo[i]->supporting_facts);
      r.joint = score_joint(*r.answer, *r.sp);
    }
    if (sink.is_open()) {
      auto line = to_json(r).dump();
      std::lock_guard lock(sink_mu);
      sink << line << '\n';
      sink.flush();
    }
    fresh[i] = std::move(r);
  });

  result.records = std::move(previous);
  for (auto& r : fresh)
    if (r) {
      ++result.executed;
      result.records.push_back(std::move(*r));
    }
  std::sort(result.records.begin(), result.records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.example_id < b.example_id; });
  result.complete = result.records.size() == wanted.size();

  std::unordered_map<std::string, const HotpotExample*> by_id;
  for (const auto& ex : corpus) by_id.emplace(ex.id, &ex);
  std::vector<ExampleScores> scores;
  scores.reserve(result.records.size());
  for (const auto& r : result.records) scores.push_back(scores_of(r, by_id.at(r.example_id)));
  result.report = aggregate(std::move(scores), opts.strata_keys);
  return result;
}

inline BatchResult run_batch(const PipelineConfig& cfg, const std::vector<HotpotExample>& corpus, const BatchOptions& opts = {}) {
  cfg.validate();
  return run_batch_with([&](const HotpotExample& ex) { return run_example(cfg, ex); }, corpus, opts);
}

}  // namespace mhqa
