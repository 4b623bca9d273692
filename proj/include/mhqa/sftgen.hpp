#pragma once

// Instruction-tuning data (Alpaca JSON-lines) for the reader, selectors and
// decomposer, chain-of-thought target generation with a teacher model, and
// the fine-tuning hyperparameter manifests handed to external trainers.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <yaml-cpp/yaml.h>
#include <json.hpp>

#include "mhqa/backend.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/prompting.hpp"

namespace mhqa {

struct AlpacaRecord {
  std::string instruction;
  std::string input;
  std::string output;

  bool operator==(const AlpacaRecord&) const = default;
};

inline json to_json(const AlpacaRecord& r) {
  return json{{"instruction", r.instruction}, {"input", r.input}, {"output", r.output}};
}

inline AlpacaRecord alpaca_from_json(const json& j) {
  AlpacaRecord r{j.at("instruction").get<std::string>(), j.at("input").get<std::string>(), j.at("output").get<std::string>()};
  if (r.output.empty()) throw std::invalid_argument("alpaca record with empty output");
  return r;
}

using AlpacaSink = std::function<void(const AlpacaRecord&)>;

inline AlpacaSink jsonl_sink(std::ostream& out) {
  return [&out](const AlpacaRecord& r) { out << to_json(r).dump() << '\n'; };
}

struct ExportSummary {
  std::size_t written = 0;
  std::size_t skipped_flagged = 0;
  std::size_t skipped_missing_target = 0;
};

inline std::string reader_sft_input(const HotpotExample& ex) {
  return "Question: " + ex.question + "\nSupporting facts:\n" + render::fact_lines(fact_sentences(ex, ex.supporting_facts));
}

/// Question + supporting sentences → answer; with a chain-of-thought target
/// the output is the rationale followed by the answer line.
inline ExportSummary export_reader_sft(const std::vector<HotpotExample>& corpus, const TemplateSet& templates,
                                       const std::map<std::string, std::string>* cot_targets, const AlpacaSink& sink) {
  ExportSummary s;
  const auto& instruction = templates.get("sft_reader_instruction");
  for (const auto& ex : corpus) {
    if (ex.flagged()) {
      ++s.skipped_flagged;
      continue;
    }
    AlpacaRecord r{instruction, reader_sft_input(ex), ex.answer};
    if (cot_targets != nullptr)
      if (auto it = cot_targets->find(ex.id); it != cot_targets->end()) r.output = format_reader_output(ex.answer, it->second);
    if (r.output.empty()) {
      ++s.skipped_flagged;
      continue;
    }
    sink(r);
    ++s.written;
  }
  return s;
}

enum class SftVariant { single_stage, paragraph, sentence, decomposer };

inline std::string_view to_string(SftVariant v) {
  switch (v) {
    case SftVariant::single_stage: return "single_stage";
    case SftVariant::paragraph: return "paragraph";
    case SftVariant::sentence: return "sentence";
    case SftVariant::decomposer: return "decomposer";
  }
  return "?";
}

inline SftVariant parse_sft_variant(std::string_view s) {
  for (auto v : {SftVariant::single_stage, SftVariant::paragraph, SftVariant::sentence, SftVariant::decomposer})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown selector SFT variant '" + std::string(s) + "'");
}

/// Inputs mirror the selector prompts the pipeline builds, outputs use the
/// selector output format, so a fine-tuned model plugs straight in.
inline ExportSummary export_selector_sft(const std::vector<HotpotExample>& corpus, const Prompter& prompter, SftVariant variant,
                                         const std::map<std::string, SubQuestions>* decomposer_targets, const AlpacaSink& sink) {
  if (variant == SftVariant::decomposer && decomposer_targets == nullptr)
    throw ConfigError("decomposer SFT export needs sub-question targets");
  const auto& t = prompter.templates();
  ExportSummary s;
  for (const auto& ex : corpus) {
    if (ex.flagged()) {
      ++s.skipped_flagged;
      continue;
    }
    AlpacaRecord r;
    switch (variant) {
      case SftVariant::single_stage:
        r.instruction = t.get("sft_single_stage_instruction");
        r.input = prompter.selector_input(SelectorVariant::single_stage, ex.question, ex.context);
        r.output = format_selector_output(SelectorVariant::single_stage, gold_titles(ex), ex.supporting_facts);
        break;
      case SftVariant::paragraph:
        r.instruction = t.get("sft_paragraph_instruction");
        r.input = prompter.selector_input(SelectorVariant::paragraph, ex.question, ex.context);
        r.output = format_selector_output(SelectorVariant::paragraph, gold_titles(ex), {});
        break;
      case SftVariant::sentence:
        r.instruction = t.get("sft_sentence_instruction");
        r.input = prompter.selector_input(SelectorVariant::sentence, ex.question, gold_paragraphs(ex));
        r.output = format_selector_output(SelectorVariant::sentence, {}, ex.supporting_facts);
        break;
      case SftVariant::decomposer: {
        auto it = decomposer_targets->find(ex.id);
        if (it == decomposer_targets->end() || it->second.subs.empty()) {
          ++s.skipped_missing_target;
          continue;
        }
        r.instruction = t.get("sft_decomposer_instruction");
        r.input = ex.question;
        r.output = format_decomposer_output(it->second.subs);
        break;
      }
    }
    sink(r);
    ++s.written;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Chain-of-thought targets

enum class CotFilter { all, hard_only };

struct CotOptions {
  CotFilter filter = CotFilter::all;
  std::size_t parallelism = 1;
  std::optional<std::filesystem::path> store;  // JSON-lines {"id", "rationale"}; enables resume
  std::optional<std::size_t> stop_after;
};

struct CotResult {
  std::map<std::string, std::string> rationales;
  std::map<std::string, std::string> failures;  // id → error
  std::size_t resumed = 0;
};

inline std::map<std::string, std::string> read_cot_targets(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("rationale").get<std::string>();
    } catch (const std::exception&) {
      // torn final line from an interrupted run
    }
  }
  return out;
}

/// Asks the teacher for the reasoning linking question, supporting facts and
/// answer. Previously stored rationales are reused; teacher failures are
/// reported and left out of the map.
inline CotResult gen_cot_targets(const std::vector<HotpotExample>& corpus, const ChatHandle& teacher, const Prompter& prompter,
                                 const CotOptions& opts = {}) {
  CotResult result;
  if (opts.store && std::filesystem::exists(*opts.store)) {
    result.rationales = read_cot_targets(*opts.store);
    result.resumed = result.rationales.size();
    std::ofstream rewrite(*opts.store, std::ios::binary | std::ios::trunc);
    for (const auto& [id, r] : result.rationales) rewrite << json{{"id", id}, {"rationale", r}}.dump() << '\n';
  }
  std::vector<const HotpotExample*> todo;
  std::unordered_set<std::string> selected;
  for (const auto& ex : corpus) {
    if (opts.filter == CotFilter::hard_only && ex.level != Level::hard) continue;
    if (ex.flagged()) continue;
    selected.insert(ex.id);
    if (result.rationales.count(ex.id) == 0) todo.push_back(&ex);
  }
  std::erase_if(result.rationales, [&](const auto& kv) { return selected.count(kv.first) == 0; });
  result.resumed = result.rationales.size();
  std::ofstream sink;
  if (opts.store) sink.open(*opts.store, std::ios::binary | std::ios::app);
  std::mutex mu;
  std::atomic<std::size_t> started{0};
  util::parallel_for(todo.size(), opts.parallelism, [&](std::size_t i) {
    if (opts.stop_after && started.fetch_add(1) >= *opts.stop_after) return;
    const auto& ex = *todo[i];
    try {
      auto response = teacher->generate(prompter.build_cot_teacher_prompt(ex));
      auto rationale = std::string(util::trim(response.text));
      if (rationale.empty()) throw BackendError(BackendError::Kind::protocol, "teacher returned an empty rationale");
      std::lock_guard lock(mu);
      if (sink.is_open()) {
        sink << json{{"id", ex.id}, {"rationale", rationale}}.dump() << '\n';
        sink.flush();
      }
      result.rationales[ex.id] = std::move(rationale);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      result.failures[ex.id] = e.what();
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Training manifests

struct TrainingManifest {
  std::string name;
  std::string base_model;
  long data_points = 0;
  int training_steps = 0;
  int batch_size = 0;
  int gradient_accumulation_steps = 0;
  double max_learning_rate = 0;
  std::string scheduler_type;
  double warmup_ratio = 0;
  int max_sequence_length = 0;
  int lora_rank = 0;
  int lora_alpha = 0;
  std::string trainable_lora_weights;
  std::string fully_trainable_layer;
  double lora_dropout = 0;

  bool operator==(const TrainingManifest&) const = default;
};

inline const std::vector<TrainingManifest>& training_presets() {
  static const std::vector<TrainingManifest> presets = {
      // reader
      {"Bactrainus8B", "Llama 3.1 Instruct 8B", 90564, 2, 8, 32, 1.0e-4, "Cosine", 0.03, 512, 64, 128, "QKVO, MLP", "lm-head", 0.05},
      {"Bactrainus8B_CoT8B", "Llama 3.1 Instruct 8B", 90564, 2, 4, 16, 1.0e-4, "Cosine", 0.03, 1024, 64, 128, "QKVO, MLP", "lm-head", 0.05},
      {"Bactrainus8B_CoT70B", "Bactrainus 8B (1 epoch)", 15661, 1, 4, 16, 1.0e-4, "Cosine", 0.1, 1024, 64, 32, "QKVO, MLP", "lm-head", 0.05},
      {"Bactrainus70B", "Llama 3.1 Instruct 70B", 90564, 1, 1, 8, 1.0e-4, "Cosine", 0.03, 512, 16, 16, "QKVO, MLP", "-", 0.05},
      // selectors
      {"SingleStageSelector", "Llama 3.1 Instruct 8B", 90564, 2, 2, 8, 1.0e-4, "cosine", 0.03, 4096, 64, 128, "QKVO, MLP", "lm-head", 0.05},
      {"ParagraphSelector", "Llama 3.1 Instruct 8B", 90564, 2, 2, 8, 1.0e-4, "cosine", 0.03, 4096, 64, 128, "QKVO, MLP", "lm-head", 0.05},
      {"SentenceSelector", "Llama 3.1 Instruct 8B", 90564, 2, 4, 16, 2.0e-5, "cosine", 0.03, 1024, 64, 128, "QKVO, MLP", "lm-head", 0.05},
      {"QuestionDecomposer", "Llama 3.1 Instruct 8B", 90564, 1, 8, 32, 2.0e-5, "cosine", 0.03, 2048, 64, 32, "QKVO, MLP", "lm-head", 0.05},
  };
  return presets;
}

inline const TrainingManifest& training_preset(std::string_view name) {
  for (const auto& p : training_presets())
    if (p.name == name) return p;
  std::string valid;
  for (const auto& p : training_presets()) valid += (valid.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown training preset '" + std::string(name) + "'; valid presets: " + valid);
}

/// Learning rate in the "1.00E-04" notation used by the hyperparameter tables.
inline std::string format_learning_rate(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2E", lr);
  return buf;
}

inline std::string shortest(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string emit_training_manifest(const TrainingManifest& m) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << m.name;
  out << YAML::Key << "base_model" << YAML::Value << m.base_model;
  out << YAML::Key << "data_points" << YAML::Value << m.data_points;
  out << YAML::Key << "training_steps" << YAML::Value << m.training_steps;
  out << YAML::Key << "batch_size" << YAML::Value << m.batch_size;
  out << YAML::Key << "gradient_accumulation_steps" << YAML::Value << m.gradient_accumulation_steps;
  out << YAML::Key << "max_learning_rate" << YAML::Value << format_learning_rate(m.max_learning_rate);
  out << YAML::Key << "scheduler_type" << YAML::Value << m.scheduler_type;
  out << YAML::Key << "warmup_ratio" << YAML::Value << shortest(m.warmup_ratio);
  out << YAML::Key << "max_sequence_length" << YAML::Value << m.max_sequence_length;
  out << YAML::Key << "lora_rank" << YAML::Value << m.lora_rank;
  out << YAML::Key << "lora_alpha" << YAML::Value << m.lora_alpha;
  out << YAML::Key << "trainable_lora_weights" << YAML::Value << m.trainable_lora_weights;
  out << YAML::Key << "fully_trainable_layer" << YAML::Value << m.fully_trainable_layer;
  out << YAML::Key << "lora_dropout" << YAML::Value << shortest(m.lora_dropout);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

inline TrainingManifest parse_training_manifest(std::string_view text) {
  auto y = YAML::Load(std::string(text));
  TrainingManifest m;
  m.name = y["name"].as<std::string>();
  m.base_model = y["base_model"].as<std::string>();
  m.data_points = y["data_points"].as<long>();
  m.training_steps = y["training_steps"].as<int>();
  m.batch_size = y["batch_size"].as<int>();
  m.gradient_accumulation_steps = y["gradient_accumulation_steps"].as<int>();
  m.max_learning_rate = std::stod(y["max_learning_rate"].as<std::string>());
  m.scheduler_type = y["scheduler_type"].as<std::string>();
  m.warmup_ratio = std::stod(y["warmup_ratio"].as<std::string>());
  m.max_sequence_length = y["max_sequence_length"].as<int>();
  m.lora_rank = y["lora_rank"].as<int>();
  m.lora_alpha = y["lora_alpha"].as<int>();
  m.trainable_lora_weights = y["trainable_lora_weights"].as<std::string>();
  m.fully_trainable_layer = y["fully_trainable_layer"].as<std::string>();
  m.lora_dropout = std::stod(y["lora_dropout"].as<std::string>());
  return m;
}

}  // namespace mhqa
