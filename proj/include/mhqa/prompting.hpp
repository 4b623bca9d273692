#pragma once

// Prompt construction for every stage and parsing of model outputs back into
// typed predictions. Each parser has an inverse formatter so scripted and
// oracle backends can emit well-formed outputs.

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mhqa/backend.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/templates.hpp"

namespace mhqa {

enum class ReaderInputMode { question_only, supporting_facts, gold_only, gold_plus_2_distractors, all_paragraphs };

inline constexpr ReaderInputMode kAllReaderInputModes[] = {
    ReaderInputMode::question_only, ReaderInputMode::supporting_facts, ReaderInputMode::gold_only,
    ReaderInputMode::gold_plus_2_distractors, ReaderInputMode::all_paragraphs};

inline std::string_view to_string(ReaderInputMode m) {
  switch (m) {
    case ReaderInputMode::question_only: return "question_only";
    case ReaderInputMode::supporting_facts: return "supporting_facts";
    case ReaderInputMode::gold_only: return "gold_only";
    case ReaderInputMode::gold_plus_2_distractors: return "gold_plus_2_distractors";
    case ReaderInputMode::all_paragraphs: return "all_paragraphs";
  }
  return "?";
}

inline ReaderInputMode parse_reader_input_mode(std::string_view s) {
  for (auto m : kAllReaderInputModes)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown reader input mode '" + std::string(s) + "'");
}

enum class SelectorVariant { single_stage, paragraph, sentence };

inline PromptRole role_of(SelectorVariant v) {
  switch (v) {
    case SelectorVariant::single_stage: return PromptRole::single_stage_selector;
    case SelectorVariant::paragraph: return PromptRole::paragraph_selector;
    case SelectorVariant::sentence: return PromptRole::sentence_selector;
  }
  return PromptRole::single_stage_selector;
}

inline constexpr int kAllowedShotCounts[] = {0, 1, 2, 4, 8};

struct ShotExample {
  std::string question;
  std::vector<std::pair<std::string, std::string>> evidence;  // (title, sentence)
  std::string answer;
  std::optional<std::string> rationale;
  QuestionType qtype = QuestionType::bridge;
};

class ShotPool {
 public:
  ShotPool() = default;
  explicit ShotPool(std::vector<ShotExample> shots) : shots_(std::move(shots)) {}

  static ShotPool from_json(const json& j) {
    std::vector<ShotExample> shots;
    for (const auto& s : j) {
      ShotExample e;
      e.question = s.at("question").get<std::string>();
      e.answer = s.at("answer").get<std::string>();
      e.qtype = parse_question_type(s.at("qtype").get<std::string>());
      for (const auto& ev : s.at("evidence")) e.evidence.emplace_back(ev.at(0).get<std::string>(), ev.at(1).get<std::string>());
      if (s.contains("rationale") && !s["rationale"].is_null()) e.rationale = s["rationale"].get<std::string>();
      shots.push_back(std::move(e));
    }
    return ShotPool(std::move(shots));
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& s : shots_) {
      json ev = json::array();
      for (const auto& [t, sent] : s.evidence) ev.push_back(json::array({t, sent}));
      json o{{"question", s.question}, {"qtype", mhqa::to_string(s.qtype)}, {"evidence", std::move(ev)}, {"answer", s.answer}};
      if (s.rationale) o["rationale"] = *s.rationale;
      arr.push_back(std::move(o));
    }
    return arr;
  }

  static ShotPool builtin() { return from_json(json::parse(embedded::kShotPool)); }

  /// Fixed-seed pool from a training corpus: `per_type` hard bridge and
  /// `per_type` hard comparison questions, evidence = gold SF sentences.
  /// Rationales are left empty (fill them with the CoT teacher).
  static ShotPool sample_from(const std::vector<HotpotExample>& corpus, std::size_t per_type, std::uint64_t seed) {
    std::vector<ShotExample> out;
    for (auto type : {QuestionType::bridge, QuestionType::comparison}) {
      std::vector<const HotpotExample*> candidates;
      for (const auto& ex : corpus)
        if (ex.level == Level::hard && ex.qtype == type && !ex.flagged()) candidates.push_back(&ex);
      for (auto i : util::sample_indices(candidates.size(), per_type, seed)) {
        const auto& ex = *candidates[i];
        ShotExample s{ex.question, {}, ex.answer, std::nullopt, ex.qtype};
        for (const auto& sf : ex.supporting_facts)
          if (const auto* sent = ex.resolve(sf)) s.evidence.emplace_back(sf.title, std::string(util::trim(*sent)));
        out.push_back(std::move(s));
      }
    }
    return ShotPool(std::move(out));
  }

  const std::vector<ShotExample>& shots() const { return shots_; }

  /// Picks `n` shots alternating bridge / comparison (bridge first), in pool
  /// order, so any n >= 2 covers both types. CoT requires rationales.
  std::vector<const ShotExample*> select(int n, bool cot) const {
    std::vector<const ShotExample*> bridge, comparison;
    for (const auto& s : shots_) {
      if (cot && !s.rationale) continue;
      (s.qtype == QuestionType::bridge ? bridge : comparison).push_back(&s);
    }
    const auto need_bridge = static_cast<std::size_t>((n + 1) / 2);
    const auto need_comparison = static_cast<std::size_t>(n / 2);
    if (bridge.size() < need_bridge || comparison.size() < need_comparison)
      throw ConfigError("shot pool too small for " + std::to_string(n) + " shots" + (cot ? " with rationales" : ""));
    std::vector<const ShotExample*> out;
    for (std::size_t i = 0; out.size() < static_cast<std::size_t>(n); ++i) {
      if (i < need_bridge) out.push_back(bridge[i]);
      if (out.size() < static_cast<std::size_t>(n) && i < need_comparison) out.push_back(comparison[i]);
    }
    return out;
  }

 private:
  std::vector<ShotExample> shots_;
};

struct PromptProfile {
  PromptRole role = PromptRole::reader;
  int shots = 0;
  bool cot = false;
  ReaderInputMode reader_input_mode = ReaderInputMode::supporting_facts;

  void validate() const {
    if (std::find(std::begin(kAllowedShotCounts), std::end(kAllowedShotCounts), shots) == std::end(kAllowedShotCounts))
      throw ConfigError("shot count must be one of 0, 1, 2, 4, 8");
  }

  bool operator==(const PromptProfile&) const = default;
};

/// Evidence overrides for the reader; anything unset falls back to gold.
struct ReaderEvidence {
  std::optional<std::vector<SupportingFact>> facts;  // supporting_facts mode
  std::optional<std::vector<std::string>> titles;    // gold_only mode
  std::vector<std::string> distractor_titles;        // gold_plus_2_distractors mode
};

struct SubQuestions {
  std::string original;
  std::vector<std::string> subs;
  bool operator==(const SubQuestions&) const = default;
};

inline constexpr std::size_t kMinSubQuestions = 2;
inline constexpr std::size_t kMaxSubQuestions = 4;

// ---------------------------------------------------------------------------
// Rendering helpers

namespace render {

inline std::string sentence(std::string_view s) { return std::string(util::trim(s)); }

inline std::string paragraph_text(const Paragraph& p) {
  std::vector<std::string> parts;
  for (const auto& s : p.sentences) {
    auto t = sentence(s);
    if (!t.empty()) parts.push_back(std::move(t));
  }
  return util::join(parts, " ");
}

inline std::string fact_lines(const std::vector<std::pair<std::string, std::string>>& evidence) {
  std::vector<std::string> lines;
  for (const auto& [title, sent] : evidence) lines.push_back("- " + title + ": " + sentence(sent));
  return util::join(lines, "\n");
}

/// "[i] Title" followed by "(j) sentence" lines, in the given order.
inline std::string candidates(const std::vector<Paragraph>& paragraphs) {
  std::vector<std::string> blocks;
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    std::string b = "[" + std::to_string(i) + "] " + paragraphs[i].title;
    for (std::size_t j = 0; j < paragraphs[i].sentences.size(); ++j)
      b += "\n(" + std::to_string(j) + ") " + sentence(paragraphs[i].sentences[j]);
    blocks.push_back(std::move(b));
  }
  return util::join(blocks, "\n");
}

inline std::string numbered(const std::vector<std::string>& items) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < items.size(); ++i) lines.push_back(std::to_string(i + 1) + ". " + items[i]);
  return util::join(lines, "\n");
}

}  // namespace render

/// Supporting-fact sentences of an example in context order, deduplicated,
/// skipping references that do not resolve.
inline std::vector<std::pair<std::string, std::string>> fact_sentences(const HotpotExample& ex,
                                                                       const std::vector<SupportingFact>& facts) {
  std::set<SupportingFact> wanted(facts.begin(), facts.end());
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : ex.context)
    for (std::size_t j = 0; j < p.sentences.size(); ++j)
      if (wanted.count({p.title, j}) != 0) out.emplace_back(p.title, p.sentences[j]);
  return out;
}

inline std::vector<Paragraph> paragraphs_in_context_order(const HotpotExample& ex, const std::vector<std::string>& titles) {
  std::set<std::string> wanted(titles.begin(), titles.end());
  for (const auto& t : wanted)
    if (ex.find_paragraph(t) == nullptr) throw ConfigError("title '" + t + "' is not in the context of " + ex.id);
  std::vector<Paragraph> out;
  for (const auto& p : ex.context)
    if (wanted.count(p.title) != 0) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Prompt builders

class Prompter {
 public:
  explicit Prompter(TemplateSet templates = TemplateSet::builtin(), std::shared_ptr<const ShotPool> pool = nullptr,
                    GenerationParams params = {})
      : templates_(std::move(templates)), pool_(std::move(pool)), params_(std::move(params)) {}

  const TemplateSet& templates() const { return templates_; }
  const GenerationParams& params() const { return params_; }
  const std::shared_ptr<const ShotPool>& shot_pool() const { return pool_; }

  ChatRequest build_reader_prompt(const HotpotExample& ex, const PromptProfile& profile,
                                  const ReaderEvidence& evidence = {}) const {
    profile.validate();
    if (profile.role != PromptRole::reader) throw ConfigError("reader prompt needs a reader profile");
    std::string shots;
    if (profile.shots > 0) {
      if (!pool_) throw ConfigError("shots > 0 requires a shot pool");
      auto chosen = pool_->select(profile.shots, profile.cot);
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        const auto& s = *chosen[i];
        shots += templates_.render("reader_shot", {{"index", std::to_string(i + 1)},
                                                   {"question", s.question},
                                                   {"evidence", render::fact_lines(s.evidence)},
                                                   {"reasoning", profile.cot ? "Reasoning: " + *s.rationale + "\n" : ""},
                                                   {"answer", s.answer}});
        shots += "\n\n";
      }
    }
    auto task = templates_.render("reader_task", {{"question", ex.question},
                                                  {"evidence", reader_evidence(ex, profile.reader_input_mode, evidence)},
                                                  {"closing", templates_.get(profile.cot ? "reader_closing_cot" : "reader_closing_direct")}});
    auto params = params_;
    if (profile.cot) params.max_tokens = std::max(params.max_tokens, GenerationParams::chain_of_thought().max_tokens);
    return make_request(templates_.get("reader_system"), templates_.get("reader_instruction") + "\n\n" + shots + task,
                        std::move(params), {ex.id, PromptRole::reader});
  }

  ChatRequest build_selector_prompt(SelectorVariant variant, const HotpotExample& ex,
                                    const std::vector<Paragraph>& candidates,
                                    const SubQuestions* subs = nullptr) const {
    return make_request(templates_.get(selector_system(variant)), selector_input(variant, ex.question, candidates, subs),
                        params_, {ex.id, role_of(variant)});
  }

  /// User-message body of a selector prompt; shared with SFT export.
  std::string selector_input(SelectorVariant variant, const std::string& question, const std::vector<Paragraph>& candidates,
                             const SubQuestions* subs = nullptr) const {
    if (candidates.empty()) throw ConfigError("selector prompt needs at least one candidate paragraph");
    std::string hints;
    if (subs != nullptr && !subs->subs.empty()) {
      if (variant != SelectorVariant::sentence) throw ConfigError("sub-question hints are only valid for the sentence selector");
      hints = templates_.render("selector_hints", {{"subquestions", render::numbered(subs->subs)}}) + "\n";
    }
    return templates_.render("selector_task",
                             {{"question", question},
                              {"hints", hints},
                              {"candidates", render::candidates(candidates)},
                              {"output_instruction", templates_.get(variant == SelectorVariant::paragraph ? "selector_output_titles"
                                                                                                           : "selector_output_facts")}});
  }

  ChatRequest build_all_in_one_prompt(const HotpotExample& ex) const {
    auto params = params_;
    return make_request(templates_.get("all_in_one_system"),
                        templates_.render("all_in_one_task", {{"question", ex.question}, {"candidates", render::candidates(ex.context)}}),
                        std::move(params), {ex.id, PromptRole::all_in_one});
  }

  ChatRequest build_cot_teacher_prompt(const std::string& example_id, const std::string& question,
                                       const std::vector<std::pair<std::string, std::string>>& supporting_sentences,
                                       const std::string& answer) const {
    if (supporting_sentences.empty()) throw ConfigError("chain-of-thought teacher prompt needs supporting sentences");
    auto params = params_;
    params.max_tokens = std::max(params.max_tokens, GenerationParams::chain_of_thought().max_tokens);
    return make_request(templates_.get("cot_teacher_system"),
                        templates_.render("cot_teacher_task", {{"question", question},
                                                               {"evidence", render::fact_lines(supporting_sentences)},
                                                               {"answer", answer}}),
                        std::move(params), {example_id, PromptRole::cot_teacher});
  }

  ChatRequest build_cot_teacher_prompt(const HotpotExample& ex) const {
    return build_cot_teacher_prompt(ex.id, ex.question, fact_sentences(ex, ex.supporting_facts), ex.answer);
  }

  ChatRequest build_decomposer_prompt(const std::string& example_id, const std::string& question) const {
    return make_request(templates_.get("decomposer_system"), templates_.render("decomposer_task", {{"question", question}}),
                        params_, {example_id, PromptRole::decomposer});
  }

  /// Evidence section of a reader prompt for the given input condition.
  std::string reader_evidence(const HotpotExample& ex, ReaderInputMode mode, const ReaderEvidence& evidence) const {
    switch (mode) {
      case ReaderInputMode::question_only:
        return "Evidence: none";
      case ReaderInputMode::supporting_facts: {
        auto sentences = fact_sentences(ex, evidence.facts ? *evidence.facts : ex.supporting_facts);
        return "Supporting facts:\n" + (sentences.empty() ? std::string("(none)") : render::fact_lines(sentences));
      }
      case ReaderInputMode::gold_only:
        return paragraph_block(paragraphs_in_context_order(ex, evidence.titles ? *evidence.titles : gold_titles(ex)));
      case ReaderInputMode::gold_plus_2_distractors: {
        if (evidence.distractor_titles.empty()) throw ConfigError("gold_plus_2_distractors needs distractor titles");
        auto titles = evidence.titles ? *evidence.titles : gold_titles(ex);
        titles.insert(titles.end(), evidence.distractor_titles.begin(), evidence.distractor_titles.end());
        return paragraph_block(paragraphs_in_context_order(ex, titles));
      }
      case ReaderInputMode::all_paragraphs:
        return paragraph_block(ex.context);
    }
    return {};
  }

 private:
  static std::string paragraph_block(const std::vector<Paragraph>& paragraphs) {
    std::string out = "Paragraphs:";
    if (paragraphs.empty()) return out + "\n(none)";
    for (const auto& p : paragraphs) out += "\nParagraph: " + p.title + "\n" + render::paragraph_text(p);
    return out;
  }

  static std::string_view selector_system(SelectorVariant v) {
    switch (v) {
      case SelectorVariant::single_stage: return "selector_system_single_stage";
      case SelectorVariant::paragraph: return "selector_system_paragraph";
      case SelectorVariant::sentence: return "selector_system_sentence";
    }
    return "";
  }

  TemplateSet templates_;
  std::shared_ptr<const ShotPool> pool_;
  GenerationParams params_;
};

// ---------------------------------------------------------------------------
// Output parsing and inverse formatting

inline constexpr std::string_view kAnswerMarker = "Answer:";

struct ReaderOutput {
  std::string answer;
  std::optional<std::string> rationale;
  bool no_marker = false;
  bool parse_failed = false;
  std::string failure_reason;
};

/// Answer after the last "Answer:" marker; everything before is rationale.
inline ReaderOutput parse_reader_output(std::string_view text) {
  ReaderOutput out;
  auto trimmed = util::trim(text);
  if (trimmed.empty()) {
    out.parse_failed = true;
    out.failure_reason = "empty reader output";
    return out;
  }
  auto pos = trimmed.rfind(kAnswerMarker);
  if (pos == std::string_view::npos) {
    out.answer = std::string(trimmed);
    out.no_marker = true;
    return out;
  }
  out.answer = std::string(util::trim(trimmed.substr(pos + kAnswerMarker.size())));
  auto before = util::trim(trimmed.substr(0, pos));
  if (!before.empty()) out.rationale = std::string(before);
  return out;
}

inline std::string format_reader_output(std::string_view answer, const std::optional<std::string>& rationale = std::nullopt) {
  std::string out;
  if (rationale && !rationale->empty()) out = *rationale + "\n";
  out += std::string(kAnswerMarker) + " " + std::string(answer);
  return out;
}

namespace detail {

inline std::string_view strip_bullet(std::string_view line) {
  line = util::trim(line);
  if (line.starts_with("- ") || line.starts_with("* ")) return util::trim(line.substr(2));
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ')
    return util::trim(line.substr(i + 2));
  return line;
}

inline std::string_view strip_label(std::string_view item) {
  if (item.starts_with("[")) {
    auto close = item.find(']');
    if (close != std::string_view::npos && close > 1 &&
        std::all_of(item.begin() + 1, item.begin() + static_cast<long>(close), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      return util::trim(item.substr(close + 1));
  }
  return item;
}

inline bool is_header(std::string_view line) {
  std::string lower;
  for (char c : line) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "supporting facts:" || lower == "paragraphs:" || lower == "titles:" || lower == "gold paragraphs:" ||
         lower == "selected paragraphs:" || lower == "supporting sentences:";
}

class SelectionCollector {
 public:
  explicit SelectionCollector(const std::vector<Paragraph>& candidates) : candidates_(candidates) {}

  // Returns false when the item is not recognizable at all.
  bool add_item(std::string_view raw) {
    auto item = strip_label(util::trim(raw));
    if (item.empty()) return true;
    static const std::regex ref_re(R"(^(.*\S)\s*#\s*(\d+)$)");
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_match(item.begin(), item.end(), m, ref_re)) {
      add_fact(std::string(strip_label(util::trim(std::string_view(&*m[1].first, static_cast<std::size_t>(m[1].length()))))),
               m[2].str());
      return true;
    }
    if (const auto* p = find(item)) {
      titles_.insert(p->title);
      ++recognized_;
      return true;
    }
    return false;
  }

  void add_fact(const std::string& title, const std::string& index_text) {
    ++recognized_;
    const auto* p = find(title);
    if (p == nullptr) {
      warnings_.push_back("dropped reference to unknown title '" + title + "'");
      return;
    }
    std::size_t idx = 0;
    try {
      idx = std::stoul(index_text);
    } catch (...) {
      warnings_.push_back("dropped reference with unreadable index '" + title + "#" + index_text + "'");
      return;
    }
    if (idx >= p->sentences.size()) {
      warnings_.push_back("dropped out-of-range reference '" + title + "#" + index_text + "'");
      return;
    }
    if (!facts_.insert({p->title, idx}).second) warnings_.push_back("duplicate reference '" + title + "#" + index_text + "'");
  }

  bool would_resolve(std::string_view item) const {
    item = strip_label(util::trim(item));
    static const std::regex ref_re(R"(^(.*\S)\s*#\s*(\d+)$)");
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_match(item.begin(), item.end(), m, ref_re)) {
      auto title = strip_label(util::trim(std::string_view(&*m[1].first, static_cast<std::size_t>(m[1].length()))));
      return find(title) != nullptr;
    }
    return find(item) != nullptr;
  }

  void warn(std::string w) { warnings_.push_back(std::move(w)); }

  Prediction finish() const {
    Prediction p;
    p.warnings = warnings_;
    std::set<std::string> titles = titles_;
    for (const auto& sf : facts_) titles.insert(sf.title);
    // context (candidate) order
    for (const auto& c : candidates_) {
      if (titles.count(c.title) != 0) p.titles.push_back(c.title);
      for (std::size_t j = 0; j < c.sentences.size(); ++j)
        if (facts_.count({c.title, j}) != 0) p.supporting_facts.push_back({c.title, j});
    }
    if (p.titles.empty()) {
      p.parse_failed = true;
      p.failure_reason = recognized_ == 0 ? "no recognizable references in selector output"
                                          : "every reference in selector output was invalid";
    }
    return p;
  }

 private:
  const Paragraph* find(std::string_view title) const {
    for (const auto& c : candidates_)
      if (c.title == title) return &c;
    return nullptr;
  }

  const std::vector<Paragraph>& candidates_;
  std::set<std::string> titles_;
  std::set<SupportingFact> facts_;
  std::vector<std::string> warnings_;
  std::size_t recognized_ = 0;
};

}  // namespace detail

/// Recognizes one reference per line as `Title#j`, `(Title, j)` or a bare
/// title (optionally with an `[i]` label), and `;`-separated lists of these.
/// References are validated against the candidates; invalid ones are dropped
/// with a warning. Titles of cited sentences count as selected titles.
inline Prediction parse_selector_output(std::string_view text, const std::vector<Paragraph>& candidates) {
  detail::SelectionCollector col(candidates);
  static const std::regex tuple_re(R"(\((.+?),\s*(\d+)\))");
  for (auto raw_line : util::split_lines(text)) {
    auto line = detail::strip_bullet(raw_line);
    if (line.empty() || detail::is_header(line)) continue;
    if (col.would_resolve(line)) {
      col.add_item(line);
      continue;
    }
    std::string owned(line);
    bool any_tuple = false;
    for (std::sregex_iterator it(owned.begin(), owned.end(), tuple_re), end; it != end; ++it) {
      any_tuple = true;
      col.add_fact(std::string(util::trim((*it)[1].str())), (*it)[2].str());
    }
    if (any_tuple) continue;
    bool ok = true;
    for (auto piece : util::split(line, ';'))
      if (!col.add_item(piece)) {
        ok = false;
        auto p = std::string(util::trim(piece));
        if (!p.empty()) col.warn("dropped unrecognized item '" + p + "'");
      }
    (void)ok;
  }
  return col.finish();
}

/// Inverse of parse_selector_output: titles one per line for the paragraph
/// variant, `Title#j` lines otherwise.
inline std::string format_selector_output(SelectorVariant variant, const std::vector<std::string>& titles,
                                          const std::vector<SupportingFact>& facts) {
  std::vector<std::string> lines;
  if (variant == SelectorVariant::paragraph) {
    lines = titles;
  } else {
    for (const auto& sf : facts) lines.push_back(sf.title + "#" + std::to_string(sf.sentence_index));
  }
  return util::join(lines, "\n");
}

/// Supporting facts block followed by the answer line.
inline Prediction parse_all_in_one_output(std::string_view text, const std::vector<Paragraph>& candidates) {
  auto trimmed = util::trim(text);
  auto pos = trimmed.rfind(kAnswerMarker);
  Prediction p;
  if (pos == std::string_view::npos) {
    p = parse_selector_output(trimmed, candidates);
    p.warnings.push_back("no answer marker in all-in-one output");
    return p;
  }
  p = parse_selector_output(trimmed.substr(0, pos), candidates);
  p.answer = std::string(util::trim(trimmed.substr(pos + kAnswerMarker.size())));
  return p;
}

inline std::string format_all_in_one_output(const std::vector<SupportingFact>& facts, std::string_view answer) {
  auto block = format_selector_output(SelectorVariant::single_stage, {}, facts);
  return (block.empty() ? std::string() : block + "\n") + format_reader_output(answer);
}

struct DecomposerOutput {
  SubQuestions sub_questions;
  std::vector<std::string> warnings;
  bool parse_failed = false;
  std::string failure_reason;
};

/// Numbered lines ("1. x" / "1) x"). Keeps the first four distinct ones.
inline DecomposerOutput parse_decomposer_output(std::string_view text, std::string original = {}) {
  DecomposerOutput out;
  out.sub_questions.original = std::move(original);
  static const std::regex num_re(R"(^\s*\d+\s*[.)]\s*(.*\S)\s*$)");
  std::vector<std::string> found;
  for (auto line : util::split_lines(text)) {
    std::string s(line);
    std::smatch m;
    if (!std::regex_match(s, m, num_re)) continue;
    auto q = m[1].str();
    if (std::find(found.begin(), found.end(), q) != found.end()) {
      out.warnings.push_back("duplicate sub-question dropped");
      continue;
    }
    found.push_back(std::move(q));
  }
  if (found.size() > kMaxSubQuestions) {
    out.warnings.push_back("kept first " + std::to_string(kMaxSubQuestions) + " of " + std::to_string(found.size()) + " sub-questions");
    found.resize(kMaxSubQuestions);
  }
  if (found.size() < kMinSubQuestions) {
    out.parse_failed = true;
    out.failure_reason = found.empty() ? "no numbered sub-questions" : "fewer than 2 sub-questions";
  }
  out.sub_questions.subs = std::move(found);
  return out;
}

inline std::string format_decomposer_output(const std::vector<std::string>& subs) { return render::numbered(subs); }

}  // namespace mhqa
