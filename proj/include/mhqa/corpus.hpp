#pragma once

// HotpotQA distractor-setting corpus: types, loading, validation, statistics.

#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mhqa/util.hpp"

namespace mhqa {

using json = nlohmann::json;

enum class QuestionType { bridge, comparison };
enum class Level { easy, medium, hard };
enum class Split { train, dev };
enum class SfBucket { Two, Three, FourPlus };

inline constexpr std::size_t kDistractorContextSize = 10;
inline constexpr std::size_t kGoldParagraphCount = 2;

inline std::string_view to_string(QuestionType t) { return t == QuestionType::bridge ? "bridge" : "comparison"; }
inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::easy: return "easy";
    case Level::medium: return "medium";
    case Level::hard: return "hard";
  }
  return "?";
}
inline std::string_view to_string(SfBucket b) {
  switch (b) {
    case SfBucket::Two: return "Two";
    case SfBucket::Three: return "Three";
    case SfBucket::FourPlus: return "FourPlus";
  }
  return "?";
}

inline QuestionType parse_question_type(std::string_view s) {
  if (s == "bridge") return QuestionType::bridge;
  if (s == "comparison") return QuestionType::comparison;
  throw std::invalid_argument("unknown question type '" + std::string(s) + "'");
}
inline Level parse_level(std::string_view s) {
  if (s == "easy") return Level::easy;
  if (s == "medium") return Level::medium;
  if (s == "hard") return Level::hard;
  throw std::invalid_argument("unknown level '" + std::string(s) + "'");
}
inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "dev"; }
inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

struct Paragraph {
  std::string title;
  std::vector<std::string> sentences;

  std::string text() const { return util::join(sentences, ""); }
  bool operator==(const Paragraph&) const = default;
};

struct SupportingFact {
  std::string title;
  std::size_t sentence_index = 0;

  auto operator<=>(const SupportingFact&) const = default;
};

// Validation flags attached to examples; loading never drops a flagged
// example unless strict mode is on.
namespace flags {
inline constexpr std::string_view kUnresolvableFact = "unresolvable supporting fact";
inline constexpr std::string_view kFactIndexOutOfRange = "supporting fact index out of range";
inline constexpr std::string_view kGoldTitleCount = "gold title count is not 2";
inline constexpr std::string_view kContextSize = "context size is not 10";
inline constexpr std::string_view kDuplicateTitle = "duplicate paragraph title";
inline constexpr std::string_view kEmptyParagraph = "paragraph without sentences";
inline constexpr std::string_view kEmptyTitle = "empty paragraph title";
inline constexpr std::string_view kTooFewFacts = "fewer than 2 supporting facts";
}  // namespace flags

struct HotpotExample {
  std::string id;
  std::string question;
  std::string answer;
  QuestionType qtype = QuestionType::bridge;
  Level level = Level::medium;
  std::vector<Paragraph> context;
  std::vector<SupportingFact> supporting_facts;
  std::vector<std::string> flags;

  bool flagged() const { return !flags.empty(); }
  bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }

  const Paragraph* find_paragraph(std::string_view title) const {
    for (const auto& p : context)
      if (p.title == title) return &p;
    return nullptr;
  }

  /// Sentence text for a supporting fact, or nullptr if it does not resolve.
  const std::string* resolve(const SupportingFact& sf) const {
    const auto* p = find_paragraph(sf.title);
    if (p == nullptr || sf.sentence_index >= p->sentences.size()) return nullptr;
    return &p->sentences[sf.sentence_index];
  }

  bool operator==(const HotpotExample&) const = default;
};

/// Recomputes the validation flags of an example from scratch.
inline std::vector<std::string> validate(const HotpotExample& ex) {
  std::vector<std::string> out;
  auto add = [&](std::string_view f) {
    if (std::find(out.begin(), out.end(), f) == out.end()) out.emplace_back(f);
  };
  std::set<std::string_view> titles;
  for (const auto& p : ex.context) {
    if (p.title.empty()) add(flags::kEmptyTitle);
    if (p.sentences.empty()) add(flags::kEmptyParagraph);
    if (!titles.insert(p.title).second) add(flags::kDuplicateTitle);
  }
  if (ex.context.size() != kDistractorContextSize) add(flags::kContextSize);
  std::set<std::string_view> gold_titles;
  for (const auto& sf : ex.supporting_facts) {
    const auto* p = ex.find_paragraph(sf.title);
    if (p == nullptr) {
      add(flags::kUnresolvableFact);
      continue;
    }
    if (sf.sentence_index >= p->sentences.size()) add(flags::kFactIndexOutOfRange);
    gold_titles.insert(sf.title);
  }
  if (gold_titles.size() != kGoldParagraphCount) add(flags::kGoldTitleCount);
  if (ex.supporting_facts.size() < 2) add(flags::kTooFewFacts);
  return out;
}

/// Context paragraphs cited by the supporting facts, in context order.
inline std::vector<Paragraph> gold_paragraphs(const HotpotExample& ex) {
  std::set<std::string_view> cited;
  for (const auto& sf : ex.supporting_facts) cited.insert(sf.title);
  std::vector<Paragraph> out;
  for (const auto& p : ex.context)
    if (cited.count(p.title) != 0) out.push_back(p);
  return out;
}

inline std::vector<std::string> gold_titles(const HotpotExample& ex) {
  std::vector<std::string> out;
  for (const auto& p : gold_paragraphs(ex)) out.push_back(p.title);
  return out;
}

inline SfBucket sf_count_bucket(std::size_t count) {
  if (count <= 2) return SfBucket::Two;
  if (count == 3) return SfBucket::Three;
  return SfBucket::FourPlus;
}

/// Counts below 2 land in Two; such examples already carry kTooFewFacts.
inline SfBucket sf_count_bucket(const HotpotExample& ex) { return sf_count_bucket(ex.supporting_facts.size()); }

struct CorpusStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_sf_bucket{{"Two", 0}, {"Three", 0}, {"FourPlus", 0}};
  std::map<std::string, std::size_t> by_qtype{{"bridge", 0}, {"comparison", 0}};
  std::map<std::string, std::size_t> by_level{{"easy", 0}, {"medium", 0}, {"hard", 0}};
  std::size_t flagged = 0;

  bool operator==(const CorpusStats&) const = default;
};

inline CorpusStats corpus_stats(const std::vector<HotpotExample>& corpus) {
  CorpusStats s;
  for (const auto& ex : corpus) {
    ++s.total;
    ++s.by_sf_bucket[std::string(to_string(sf_count_bucket(ex)))];
    ++s.by_qtype[std::string(to_string(ex.qtype))];
    ++s.by_level[std::string(to_string(ex.level))];
    if (ex.flagged()) ++s.flagged;
  }
  return s;
}

inline json to_json(const CorpusStats& s) {
  return json{{"total", s.total},
              {"flagged", s.flagged},
              {"by_sf_bucket", s.by_sf_bucket},
              {"by_qtype", s.by_qtype},
              {"by_level", s.by_level}};
}

// ---------------------------------------------------------------------------
// Serialization in the published HotpotQA schema.

inline json to_json(const HotpotExample& ex) {
  json sfs = json::array();
  for (const auto& sf : ex.supporting_facts) sfs.push_back(json::array({sf.title, sf.sentence_index}));
  json ctx = json::array();
  for (const auto& p : ex.context) ctx.push_back(json::array({p.title, p.sentences}));
  return json{{"_id", ex.id},
              {"question", ex.question},
              {"answer", ex.answer},
              {"type", to_string(ex.qtype)},
              {"level", to_string(ex.level)},
              {"supporting_facts", std::move(sfs)},
              {"context", std::move(ctx)}};
}

/// Structural parse of one record. Throws std::exception on malformed input;
/// semantic problems become flags instead.
inline HotpotExample example_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  HotpotExample ex;
  ex.id = j.at("_id").get<std::string>();
  ex.question = j.at("question").get<std::string>();
  ex.answer = j.at("answer").get<std::string>();
  ex.qtype = parse_question_type(j.at("type").get<std::string>());
  ex.level = parse_level(j.at("level").get<std::string>());
  for (const auto& sf : j.at("supporting_facts")) {
    if (!sf.is_array() || sf.size() != 2) throw std::invalid_argument("supporting fact is not a [title, index] pair");
    auto idx = sf.at(1).get<long long>();
    if (idx < 0) throw std::invalid_argument("negative supporting fact index");
    ex.supporting_facts.push_back({sf.at(0).get<std::string>(), static_cast<std::size_t>(idx)});
  }
  for (const auto& p : j.at("context")) {
    if (!p.is_array() || p.size() != 2) throw std::invalid_argument("context entry is not a [title, sentences] pair");
    ex.context.push_back({p.at(0).get<std::string>(), p.at(1).get<std::vector<std::string>>()});
  }
  ex.flags = validate(ex);
  return ex;
}

struct RecordError {
  std::size_t index = 0;  // position in the top-level array
  std::string message;
};

struct LoadOptions {
  bool strict = false;  // drop flagged examples
};

struct LoadResult {
  Split split = Split::dev;
  std::vector<HotpotExample> examples;
  std::vector<RecordError> errors;
  std::size_t flagged = 0;
  std::size_t dropped = 0;
};

class CorpusIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline LoadResult parse_corpus(const json& root, Split split, LoadOptions opts = {}) {
  if (!root.is_array()) throw CorpusIOError("corpus root is not a JSON array");
  LoadResult out;
  out.split = split;
  out.examples.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    try {
      auto ex = example_from_json(root[i]);
      if (ex.flagged()) {
        ++out.flagged;
        if (opts.strict) {
          ++out.dropped;
          continue;
        }
      }
      out.examples.push_back(std::move(ex));
    } catch (const std::exception& e) {
      out.errors.push_back({i, e.what()});
    }
  }
  return out;
}

inline LoadResult load_corpus(const std::filesystem::path& path, Split split, LoadOptions opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusIOError("cannot open corpus file " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorpusIOError("corpus file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_corpus(root, split, opts);
}

inline json corpus_to_json(const std::vector<HotpotExample>& corpus) {
  json arr = json::array();
  for (const auto& ex : corpus) arr.push_back(to_json(ex));
  return arr;
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<HotpotExample>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusIOError("cannot write corpus file " + path.string());
  out << corpus_to_json(corpus).dump();
}

/// Shared, immutable id → example lookup. Oracle backends and the stratified
/// reports resolve ids through it.
class CorpusIndex {
 public:
  explicit CorpusIndex(std::vector<HotpotExample> examples) : examples_(std::move(examples)) {
    by_id_.reserve(examples_.size());
    for (std::size_t i = 0; i < examples_.size(); ++i) by_id_.emplace(examples_[i].id, i);
  }

  const std::vector<HotpotExample>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }

  const HotpotExample* find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &examples_[it->second];
  }

  const HotpotExample& at(std::string_view id) const {
    const auto* ex = find(id);
    if (ex == nullptr) throw std::out_of_range("unknown example id '" + std::string(id) + "'");
    return *ex;
  }

 private:
  std::vector<HotpotExample> examples_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

using CorpusHandle = std::shared_ptr<const CorpusIndex>;

inline CorpusHandle make_corpus_index(std::vector<HotpotExample> examples) {
  return std::make_shared<const CorpusIndex>(std::move(examples));
}

}  // namespace mhqa
