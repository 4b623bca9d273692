#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mhqa/harness.hpp"
#include "support/oracle_setup.hpp"
#include "support/synthetic_corpus.hpp"

using namespace mhqa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("mhqa_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Brute force: score every non-gold paragraph, stable sort by score.
std::vector<std::string> brute_force_top2(const HotpotExample& ex, const EmbedBackend& e) {
  auto gold = gold_titles(ex);
  auto q = e.embed({ex.question})[0].values;
  std::vector<std::pair<double, std::string>> all;
  for (const auto& p : ex.context) {
    if (std::find(gold.begin(), gold.end(), p.title) != gold.end()) continue;
    auto v = e.embed({p.title + " " + p.text()})[0].values;
    double dot = 0, nq = 0, nv = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      dot += q[i] * v[i];
      nq += q[i] * q[i];
      nv += v[i] * v[i];
    }
    all.emplace_back(std::round((nq == 0 || nv == 0 ? 0.0 : dot / std::sqrt(nq * nv)) * 1e9), p.title);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return {all[0].second, all[1].second};
}

// Answers correctly only when the answer-bearing sentence is in the prompt.
ChatHandle evidence_sensitive_reader(CorpusHandle corpus) {
  auto b = std::make_shared<ScriptedBackend>("evidence-sensitive");
  b->add_responder([corpus](const ChatRequest& r) -> std::optional<std::string> {
    const auto& ex = corpus->at(r.meta.example_id);
    auto key = std::string(util::trim(*ex.resolve(ex.supporting_facts.back())));
    return format_reader_output(r.user_text().find(key) != std::string::npos ? ex.answer : "unknown");
  });
  return b;
}

RunRecord record(const std::string& id, double em) {
  RunRecord r;
  r.example_id = id;
  r.answer = AnswerScore{em, em, em, em};
  return r;
}

}  // namespace

TEST(Distractors, MatchBruteForceOracle) {
  MockEmbedder e;
  for (const auto& ex : fixtures::synthetic_corpus(100)) {
    auto d = select_distractors(ex, e);
    EXPECT_EQ(d.chosen, brute_force_top2(ex, e)) << ex.id;
    EXPECT_FALSE(d.insufficient);
    ASSERT_EQ(d.scores.size(), 2u);
    EXPECT_GE(d.scores[0], d.scores[1]);
  }
}

TEST(Distractors, PlantedVectorsPickPlantedParagraphs) {
  HotpotExample ex;
  ex.id = "planted";
  ex.question = "q";
  for (char c = 'A'; c <= 'J'; ++c) ex.context.push_back({std::string(1, c), {std::string("text ") + c}});
  ex.supporting_facts = {{"A", 0}, {"B", 0}};
  MockEmbedder e(3);
  e.plant("q", {1, 0, 0});
  for (const auto& p : ex.context) e.plant(embedding_text(p), {0, 0, 1});
  e.plant(embedding_text(ex.context[3]), {1, 0.1, 0});  // D
  e.plant(embedding_text(ex.context[5]), {1, 0.2, 0});  // F
  e.plant(embedding_text(ex.context[0]), {1, 0, 0});    // gold A never chosen
  auto d = select_distractors(ex, e);
  EXPECT_EQ(d.chosen, (std::vector<std::string>{"D", "F"}));
}

TEST(Distractors, TiesGoToEarlierParagraph) {
  HotpotExample ex;
  ex.id = "ties";
  ex.question = "q";
  for (char c = 'A'; c <= 'J'; ++c) ex.context.push_back({std::string(1, c), {std::string("s ") + c}});
  ex.supporting_facts = {{"A", 0}, {"C", 0}};
  MockEmbedder e(2);
  e.plant("q", {1, 0});
  for (const auto& p : ex.context) e.plant(embedding_text(p), {1, 1});
  EXPECT_EQ(select_distractors(ex, e).chosen, (std::vector<std::string>{"B", "D"}));
}

TEST(Distractors, FewerThanTwoNonGold) {
  HotpotExample ex;
  ex.id = "small";
  ex.question = "q";
  ex.context = {{"A", {"a"}}, {"B", {"b"}}, {"C", {"c"}}};
  ex.supporting_facts = {{"A", 0}, {"B", 0}};
  MockEmbedder e;
  auto d = select_distractors(ex, e);
  EXPECT_TRUE(d.insufficient);
  EXPECT_EQ(d.chosen, (std::vector<std::string>{"C"}));
}

TEST(Distractors, CachePersistsAndReusesChoices) {
  auto dir = temp_dir("distractor_cache");
  auto corpus = fixtures::synthetic_corpus(10);
  MockEmbedder e;
  {
    DistractorCache cache(dir / "d.json");
    for (const auto& ex : corpus) cache.get(ex, e);
    cache.save();
  }
  DistractorCache again(dir / "d.json");
  EXPECT_EQ(again.size(), 10u);
  MockEmbedder other(8);  // would pick differently if consulted
  for (const auto& ex : corpus) EXPECT_EQ(again.get(ex, other), select_distractors(ex, e));
}

TEST(Ablation, OracleReaderIsPerfectEverywhere) {
  auto examples = fixtures::synthetic_corpus(40);
  auto corpus = make_corpus_index(examples);
  MockEmbedder e;
  DistractorCache cache;
  auto r = ablate_inputs(examples, std::make_shared<OracleReader>(corpus), e, cache, {.parallelism = 4});
  ASSERT_EQ(r.conditions.size(), 5u);
  for (const auto& [mode, report] : r.conditions) EXPECT_EQ(report.overall.answer->em, 1.0) << to_string(mode);
  EXPECT_EQ(cache.size(), examples.size());
}

TEST(Ablation, ConditionsReachTheReader) {
  auto examples = fixtures::synthetic_corpus(40);
  auto corpus = make_corpus_index(examples);
  MockEmbedder e;
  DistractorCache cache;
  auto r = ablate_inputs(examples, evidence_sensitive_reader(corpus), e, cache);
  EXPECT_EQ(r.conditions.at(ReaderInputMode::question_only).overall.answer->em, 0.0);
  for (auto m : {ReaderInputMode::supporting_facts, ReaderInputMode::gold_only, ReaderInputMode::gold_plus_2_distractors,
                 ReaderInputMode::all_paragraphs})
    EXPECT_EQ(r.conditions.at(m).overall.answer->em, 1.0) << to_string(m);
}

TEST(Ablation, TableColumnsFollowInputConditionTable) {
  AblationReport r;
  r.label = "m";
  auto t = ablation_table({r});
  // Column groups of the input-condition table, left to right.
  const std::vector<std::string> groups = {"Question", "Supporting Facts", "Gold Only", "Gold + 2 Distractors", "All Paragraphs"};
  ASSERT_EQ(t.header.size(), 1 + 2 * groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    EXPECT_EQ(t.header[1 + 2 * i], groups[i] + " EM");
    EXPECT_EQ(t.header[2 + 2 * i], groups[i] + " F1");
  }
  EXPECT_EQ(t.rows[0][1], "-");
}

TEST(Sweep, TenCellsOverSameExamples) {
  auto examples = fixtures::synthetic_corpus(20);
  auto corpus = make_corpus_index(examples);
  ReaderExperimentOptions opts;
  opts.prompter = std::make_shared<const Prompter>(TemplateSet::builtin(), std::make_shared<ShotPool>(ShotPool::builtin()));
  auto sweep = fewshot_sweep(examples, std::make_shared<OracleReader>(corpus), opts);
  ASSERT_EQ(sweep.cells.size(), 10u);
  for (const auto& c : sweep.cells) {
    EXPECT_EQ(c.report.overall.count, 20u);
    EXPECT_EQ(c.report.examples.size(), 20u);
  }
  auto t = sweep_table(sweep);
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.header.size(), 2u + 10u);
  EXPECT_EQ(TextTable::parse(t.emit()), t);
}

TEST(Sweep, RequiresShotPool) {
  auto examples = fixtures::synthetic_corpus(2);
  auto corpus = make_corpus_index(examples);
  EXPECT_THROW(fewshot_sweep(examples, std::make_shared<OracleReader>(corpus)), ConfigError);
}

TEST(Stratify, HandBuiltSixRecords) {
  std::vector<HotpotExample> examples;
  for (std::size_t n : {2, 2, 3, 3, 4, 5}) {
    HotpotExample ex;
    ex.id = "e" + std::to_string(examples.size());
    ex.context = {{"A", {"0", "1", "2"}}, {"B", {"0", "1", "2"}}};
    for (std::size_t i = 0; i < n; ++i) ex.supporting_facts.push_back({i % 2 ? "B" : "A", i / 2});
    examples.push_back(ex);
  }
  auto corpus = make_corpus_index(examples);
  std::vector<RunRecord> records = {record("e0", 1), record("e1", 0), record("e2", 1), record("e3", 1), record("e4", 0),
                                    record("e5", 0), record("zz", 1)};
  std::vector<std::string> unknown;
  auto report = stratify(records, *corpus, &unknown);
  EXPECT_EQ(unknown, (std::vector<std::string>{"zz"}));
  const auto& b = report.strata.at("sf_bucket");
  EXPECT_EQ(b.at("Two").answer->count, 2u);
  EXPECT_EQ(b.at("Three").answer->count, 2u);
  EXPECT_EQ(b.at("FourPlus").answer->count, 2u);
  EXPECT_EQ(b.at("Two").answer->em, 0.5);
  EXPECT_EQ(b.at("Three").answer->em, 1.0);
  EXPECT_EQ(b.at("FourPlus").answer->em, 0.0);
  auto t = stratified_table({{"m", report}});
  EXPECT_EQ(t.rows[0], (std::vector<std::string>{"m", "50.00", "50.00", "100.00", "100.00", "0.00", "0.00"}));
}

TEST(Matrix, RowsPerConfigAndTableRoundTrip) {
  auto examples = fixtures::synthetic_corpus(20);
  auto corpus = make_corpus_index(examples);
  std::vector<PipelineConfig> configs;
  for (auto s : kAllScenarios) configs.push_back(fixtures::oracle_pipeline(corpus, s));
  auto dir = temp_dir("matrix");
  auto rows = scenario_matrix(examples, configs, 4, dir);
  ASSERT_EQ(rows.size(), 6u);
  auto t = matrix_table(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(t.rows[i][0], std::to_string(i + 1));
    for (std::size_t c = 2; c < t.rows[i].size(); ++c) EXPECT_EQ(t.rows[i][c], "100.00");
  }
  EXPECT_EQ(TextTable::parse(t.emit()), t);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 6);
}

TEST(ScoreFile, PerfectMissingAndPartial) {
  auto examples = fixtures::synthetic_corpus(4);
  json preds{{"answer", json::object()}, {"sp", json::object()}};
  for (const auto& ex : examples) {
    preds["answer"][ex.id] = ex.answer;
    preds["sp"][ex.id] = facts_to_json(ex.supporting_facts);
  }
  auto perfect = score_predictions(preds, examples);
  EXPECT_EQ(perfect.report.overall.joint->em, 1.0);
  EXPECT_TRUE(perfect.warnings.empty());

  preds["answer"].erase(examples[0].id);
  preds["sp"].erase(examples[1].id);
  auto missing = score_predictions(preds, examples);
  EXPECT_EQ(missing.warnings.size(), 2u);
  EXPECT_EQ(missing.report.overall.answer->em, 0.75);
  EXPECT_EQ(missing.report.overall.sp->em, 0.75);
  EXPECT_EQ(missing.report.overall.joint->em, 0.5);

  auto path = temp_dir("score") / "p.json";
  std::ofstream(path) << preds.dump();
  EXPECT_EQ(score_file(path, examples).report, missing.report);
  EXPECT_THROW(score_file(path.parent_path() / "none.json", examples), CorpusIOError);
}

TEST(ScoreFile, PipelinePredictionsRescoreIdentically) {
  auto examples = fixtures::synthetic_corpus(30);
  auto corpus = make_corpus_index(examples);
  auto cfg = fixtures::oracle_pipeline(corpus, ScenarioId::S3_TwoStage_SF);
  cfg.sentence_selector = fixtures::drop_last_fact_selector(corpus);
  auto batch = run_batch(cfg, examples, {.strata_keys = {"sf_bucket", "qtype", "level"}});
  auto rescored = score_predictions(json::parse(predictions_json(batch.records).dump()), examples);
  EXPECT_EQ(rescored.report.overall, batch.report.overall);
  EXPECT_EQ(rescored.report.strata, batch.report.strata);
}

TEST(Sampling, FixedSeedSubsetInCorpusOrder) {
  auto examples = fixtures::synthetic_corpus(100);
  auto a = sample_corpus(examples, 10, 13), b = sample_corpus(examples, 10, 13);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.id < y.id; }));
  EXPECT_EQ(sample_corpus(examples, std::nullopt, 1).size(), 100u);
}
