// mhqa: command-line front end for the evaluation harness.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mhqa/config.hpp"
#include "mhqa/harness.hpp"
#include "mhqa/sftgen.hpp"
#include "mhqa/tables.hpp"

namespace fs = std::filesystem;
using namespace mhqa;

namespace {

struct CommonFlags {
  std::string corpus;
  std::string split = "dev";
  std::string config;
  std::string out = "mhqa_out";
  std::optional<std::size_t> limit;
  std::uint64_t seed = 13;
  std::size_t parallelism = 4;
  bool no_cache = false;
  bool strict = false;
};

void add_common(CLI::App* sub, CommonFlags& f, bool needs_config) {
  sub->add_option("--corpus", f.corpus, "HotpotQA JSON file")->required();
  sub->add_option("--split", f.split, "dev or train")->check(CLI::IsMember({"dev", "train"}));
  auto* c = sub->add_option("--config", f.config, "YAML experiment config");
  if (needs_config) c->required();
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--limit", f.limit, "sample at most N examples");
  sub->add_option("--seed", f.seed, "sampling seed");
  sub->add_option("--parallelism", f.parallelism, "worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--no-cache", f.no_cache, "bypass the response cache");
  sub->add_flag("--strict", f.strict, "drop examples that fail validation");
}

struct Session {
  CommonFlags flags;
  CorpusHandle index;
  std::vector<HotpotExample> sample;
  std::optional<ExperimentConfig> config;
  std::shared_ptr<ResponseCache> cache;
  std::optional<BackendFactory> factory;

  explicit Session(const CommonFlags& f) : flags(f) {
    auto loaded = load_corpus(f.corpus, parse_split(f.split), LoadOptions{f.strict});
    if (loaded.flagged > 0)
      util::log_warning(std::to_string(loaded.flagged) + " examples failed validation" +
                        (f.strict ? " and were dropped" : ""));
    index = make_corpus_index(loaded.examples);
    sample = sample_corpus(index->examples(), f.limit, f.seed);
    fs::create_directories(f.out);
    if (!f.config.empty()) config = ExperimentConfig::load(f.config);
    if (!f.no_cache) {
      const char* env = std::getenv("MHQA_CACHE_DIR");
      cache = std::make_shared<ResponseCache>(env != nullptr && *env != '\0' ? fs::path(env) : fs::path(f.out) / "cache");
    }
    auto limit = config ? config->value<std::size_t>("in_flight_limit", 8) : std::size_t{8};
    auto timeout = std::chrono::seconds(config ? config->value<long>("timeout_s", 120) : 120);
    factory.emplace(index, cache, limit, timeout);
  }

  fs::path out(const std::string& name) const { return fs::path(flags.out) / name; }

  BackendSpec require_backend(const char* role) const {
    auto spec = config ? config->backend(role) : std::nullopt;
    if (!spec) throw ConfigError(std::string("config has no backends.") + role + " entry");
    return *spec;
  }

  EmbedHandle embedder() const {
    auto spec = config ? config->backend("embed") : std::nullopt;
    return factory->embed(spec ? *spec : BackendSpec{BackendKind::mock_embed});
  }

  ReaderExperimentOptions reader_options(const std::string& cell_dir) const {
    ReaderExperimentOptions o;
    o.parallelism = flags.parallelism;
    o.prompter = config->prompter();
    o.timeout = config->timeout();
    o.label = config->value<std::string>("label", "reader");
    o.records_dir = out(cell_dir);
    fs::create_directories(*o.records_dir);
    return o;
  }
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void emit(const Session& s, const std::string& stem, const json& report, const TextTable& table) {
  write_file(s.out(stem + ".json"), report.dump(2) + "\n");
  auto text = table.emit();
  write_file(s.out(stem + ".txt"), text);
  std::cout << text;
}

int cmd_stats(const CommonFlags& f) {
  auto loaded = load_corpus(f.corpus, parse_split(f.split), LoadOptions{f.strict});
  auto stats = to_json(corpus_stats(loaded.examples));
  stats["flagged"] = loaded.flagged;
  stats["dropped"] = loaded.dropped;
  std::cout << stats.dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f) {
  Session s(f);
  auto cfg = s.config->pipeline(*s.factory);
  BatchOptions opts;
  opts.parallelism = f.parallelism;
  opts.records_path = s.out("records.jsonl");
  opts.strata_keys = {"sf_bucket", "qtype", "level"};
  auto batch = run_batch(cfg, s.sample, opts);
  write_file(s.out("predictions.json"), predictions_json(batch.records).dump(2) + "\n");
  emit(s, "report", to_json(batch.report), summary_table(std::string(to_string(cfg.scenario)) + " " + cfg.label, batch.report));
  if (batch.resumed > 0) std::cerr << "resumed " << batch.resumed << " records\n";
  return 0;
}

int cmd_ablate(const CommonFlags& f) {
  Session s(f);
  auto reader = s.factory->chat(s.require_backend("reader"));
  auto embed = s.embedder();
  DistractorCache distractors(s.out("distractors.json"));
  auto report = ablate_inputs(s.sample, reader, *embed, distractors, s.reader_options("ablate"));
  json j = json::object();
  for (const auto& [mode, r] : report.conditions) j[std::string(to_string(mode))] = to_json(r, false);
  emit(s, "ablation", j, ablation_table({report}));
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::vector<int>& shots) {
  Session s(f);
  auto reader = s.factory->chat(s.require_backend("reader"));
  auto report = fewshot_sweep(s.sample, reader, s.reader_options("sweep"), shots);
  json cells = json::array();
  for (const auto& c : report.cells) cells.push_back({{"shots", c.shots}, {"cot", c.cot}, {"report", to_json(c.report, false)}});
  emit(s, "sweep", cells, sweep_table(report));
  return 0;
}

int cmd_stratify(const CommonFlags& f, const std::vector<std::string>& record_files) {
  Session s(f);
  std::vector<std::pair<std::string, MetricReport>> reports;
  json j = json::object();
  for (const auto& spec : record_files) {
    // label=path, or a bare path labelled by its stem
    auto eq = spec.find('=');
    std::string label = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    fs::path path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    std::vector<std::string> unknown;
    auto report = stratify(read_records(path), *s.index, &unknown);
    for (const auto& id : unknown) util::log_warning(label + ": record id not in corpus: " + id);
    j[label] = to_json(report, false);
    reports.emplace_back(label, std::move(report));
  }
  emit(s, "stratified", j, stratified_table(reports));
  return 0;
}

int cmd_matrix(const CommonFlags& f) {
  Session s(f);
  auto configs = s.config->matrix(*s.factory);
  fs::create_directories(s.out("matrix"));
  auto rows = scenario_matrix(s.sample, configs, f.parallelism, s.out("matrix"));
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"scenario", to_string(r.scenario)}, {"label", r.label}, {"report", to_json(r.report, false)}});
  emit(s, "matrix", j, matrix_table(rows));
  return 0;
}

int cmd_score(const CommonFlags& f, const std::string& predictions) {
  auto loaded = load_corpus(f.corpus, parse_split(f.split), LoadOptions{f.strict});
  auto result = score_file(predictions, loaded.examples);
  for (const auto& w : result.warnings) util::log_warning(w);
  std::cout << to_json(result.report, false).dump(2) << "\n";
  return 0;
}

int cmd_distractors(const CommonFlags& f) {
  Session s(f);
  auto embed = s.embedder();
  DistractorCache cache(s.out("distractors.json"));
  std::size_t insufficient = 0;
  for (const auto& ex : s.sample) insufficient += cache.get(ex, *embed).insufficient ? 1 : 0;
  cache.save();
  std::cout << "selected distractors for " << s.sample.size() << " examples";
  if (insufficient > 0) std::cout << " (" << insufficient << " with fewer than 2 candidates)";
  std::cout << "\n";
  return 0;
}

std::map<std::string, SubQuestions> read_subquestion_targets(const fs::path& path) {
  std::map<std::string, SubQuestions> out;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    auto j = json::parse(line);
    out[j.at("id").get<std::string>()] = SubQuestions{j.value("question", ""), j.at("subs").get<std::vector<std::string>>()};
  }
  return out;
}

struct ExportFlags {
  std::string variant = "reader";
  std::string cot_targets;
  std::string subquestions;
  bool oracle_subquestions = false;
  std::string manifest;
};

int cmd_export_sft(const CommonFlags& f, const ExportFlags& e) {
  if (!e.manifest.empty()) {
    fs::create_directories(f.out);
    auto path = fs::path(f.out) / (e.manifest + ".yaml");
    write_file(path, emit_training_manifest(training_preset(e.manifest)));
    std::cout << "wrote " << path.string() << "\n";
    if (f.corpus.empty()) return 0;
  }
  if (f.corpus.empty()) throw ConfigError("--corpus is required unless only --manifest is given");
  auto loaded = load_corpus(f.corpus, parse_split(f.split), LoadOptions{f.strict});
  auto corpus = sample_corpus(loaded.examples, f.limit, f.seed);
  auto prompter = f.config.empty() ? Prompter(TemplateSet::builtin(), std::make_shared<const ShotPool>(ShotPool::builtin()))
                                   : *ExperimentConfig::load(f.config).prompter();
  fs::create_directories(f.out);
  auto path = fs::path(f.out) / ("sft_" + e.variant + ".jsonl");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  auto sink = jsonl_sink(out);
  ExportSummary summary;
  if (e.variant == "reader") {
    std::optional<std::map<std::string, std::string>> cot;
    if (!e.cot_targets.empty()) cot = read_cot_targets(e.cot_targets);
    summary = export_reader_sft(corpus, prompter.templates(), cot ? &*cot : nullptr, sink);
  } else {
    auto variant = parse_sft_variant(e.variant);
    std::optional<std::map<std::string, SubQuestions>> targets;
    if (!e.subquestions.empty()) {
      targets = read_subquestion_targets(e.subquestions);
    } else if (e.oracle_subquestions) {
      targets.emplace();
      for (const auto& ex : corpus) (*targets)[ex.id] = SubQuestions{ex.question, oracle_sub_questions(ex)};
    }
    summary = export_selector_sft(corpus, prompter, variant, targets ? &*targets : nullptr, sink);
  }
  std::cout << "wrote " << summary.written << " records to " << path.string();
  if (summary.skipped_flagged > 0) std::cout << "; skipped " << summary.skipped_flagged << " flagged";
  if (summary.skipped_missing_target > 0) std::cout << "; skipped " << summary.skipped_missing_target << " without target";
  std::cout << "\n";
  return 0;
}

int cmd_gen_cot(const CommonFlags& f, bool hard_only) {
  Session s(f);
  auto teacher = s.factory->chat(s.require_backend("teacher"));
  CotOptions opts;
  opts.filter = hard_only ? CotFilter::hard_only : CotFilter::all;
  opts.parallelism = f.parallelism;
  opts.store = s.out("cot_targets.jsonl");
  auto result = gen_cot_targets(s.sample, teacher, *s.config->prompter(), opts);
  for (const auto& [id, err] : result.failures) util::log_warning("teacher failed on " + id + ": " + err);
  std::cout << result.rationales.size() << " rationales (" << result.resumed << " resumed, " << result.failures.size()
            << " failed) in " << opts.store->string() << "\n";
  return result.failures.empty() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-hop QA evaluation harness"};
  app.require_subcommand(1);

  CommonFlags stats_f, eval_f, ablate_f, sweep_f, strat_f, matrix_f, score_f, dist_f, export_f, cot_f;

  auto* stats = app.add_subcommand("stats", "corpus statistics");
  stats->add_option("--corpus", stats_f.corpus, "HotpotQA JSON file")->required();
  stats->add_option("--split", stats_f.split, "dev or train");
  stats->add_flag("--strict", stats_f.strict, "drop examples that fail validation");

  auto* eval = app.add_subcommand("eval", "run one pipeline scenario");
  add_common(eval, eval_f, true);

  auto* ablate = app.add_subcommand("ablate", "reader input-condition ablation");
  add_common(ablate, ablate_f, true);

  std::vector<int> shot_grid(std::begin(kDefaultShotGrid), std::end(kDefaultShotGrid));
  auto* sweep = app.add_subcommand("sweep", "few-shot and chain-of-thought grid");
  add_common(sweep, sweep_f, true);
  sweep->add_option("--shots", shot_grid, "shot counts")->check(CLI::IsMember({0, 1, 2, 4, 8}));

  std::vector<std::string> record_files;
  auto* strat = app.add_subcommand("stratify", "re-aggregate run records by supporting-fact count");
  add_common(strat, strat_f, false);
  strat->add_option("--records", record_files, "records file, optionally label=path")->required();

  auto* matrix = app.add_subcommand("matrix", "scenario comparison table");
  add_common(matrix, matrix_f, true);

  std::string predictions;
  auto* score = app.add_subcommand("score", "score a predictions file against gold");
  score->add_option("--corpus", score_f.corpus, "HotpotQA JSON file")->required();
  score->add_option("--split", score_f.split, "dev or train");
  score->add_option("--predictions", predictions, "official-format predictions JSON")->required();

  auto* dist = app.add_subcommand("distractors", "select two distractor paragraphs per example");
  add_common(dist, dist_f, false);

  ExportFlags export_flags;
  auto* exp = app.add_subcommand("export-sft", "write Alpaca datasets and training manifests");
  exp->add_option("--corpus", export_f.corpus, "HotpotQA JSON file");
  exp->add_option("--split", export_f.split, "dev or train");
  exp->add_option("--config", export_f.config, "YAML experiment config");
  exp->add_option("--out", export_f.out, "output directory");
  exp->add_option("--limit", export_f.limit, "sample at most N examples");
  exp->add_option("--seed", export_f.seed, "sampling seed");
  exp->add_flag("--strict", export_f.strict, "drop examples that fail validation");
  exp->add_option("--variant", export_flags.variant, "dataset to write")
      ->check(CLI::IsMember({"reader", "single_stage", "paragraph", "sentence", "decomposer"}));
  exp->add_option("--cot-targets", export_flags.cot_targets, "JSON-lines rationales from gen-cot");
  exp->add_option("--subquestions", export_flags.subquestions, "JSON-lines {id, subs} decomposer targets");
  exp->add_flag("--oracle-subquestions", export_flags.oracle_subquestions, "derive decomposer targets from gold titles");
  exp->add_option("--manifest", export_flags.manifest, "training preset name");

  bool hard_only = false;
  auto* cot = app.add_subcommand("gen-cot", "collect chain-of-thought targets from a teacher model");
  add_common(cot, cot_f, true);
  cot->add_flag("--hard-only", hard_only, "only level=hard examples");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*stats) return cmd_stats(stats_f);
    if (*eval) return cmd_eval(eval_f);
    if (*ablate) return cmd_ablate(ablate_f);
    if (*sweep) return cmd_sweep(sweep_f, shot_grid);
    if (*strat) return cmd_stratify(strat_f, record_files);
    if (*matrix) return cmd_matrix(matrix_f);
    if (*score) return cmd_score(score_f, predictions);
    if (*dist) return cmd_distractors(dist_f);
    if (*exp) return cmd_export_sft(export_f, export_flags);
    if (*cot) return cmd_gen_cot(cot_f, hard_only);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
