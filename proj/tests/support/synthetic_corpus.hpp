#pragma once

// Deterministic corpora in the HotpotQA distractor schema. Each example is a
// pure function of (seed, index), so large splits can be produced in chunks.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mhqa/corpus.hpp"

namespace mhqa::fixtures {

inline constexpr std::size_t kDevSize = 7405;     // published dev-distractor record count
inline constexpr std::size_t kTrainSize = 90564;  // training data points in the fine-tuning tables

struct SyntheticOptions {
  std::uint64_t seed = 2024;
  std::size_t min_sentences = 2;
  std::size_t max_sentences = 5;
  bool light = false;  // one sentence per distractor paragraph
};

namespace detail {

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = [] {
    const char* onsets[] = {"b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "st", "th"};
    const char* vowels[] = {"a", "e", "i", "o", "u", "ae", "io"};
    const char* codas[] = {"n", "r", "l", "s", "th", "m"};
    std::vector<std::string> out;
    for (auto* o : onsets)
      for (auto* v : vowels)
        for (auto* c : codas) out.push_back(std::string(o) + v + c);
    return out;
  }();
  return words;
}

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }

  std::string word() { return vocabulary()[below(vocabulary().size())]; }
  std::string name() {
    auto a = word(), b = word();
    a[0] = static_cast<char>(std::toupper(a[0]));
    b[0] = static_cast<char>(std::toupper(b[0]));
    return a + " " + b;
  }

  std::string sentence(const std::string& subject) {
    static const char* verbs[] = {"was founded by", "is located near", "borders", "was written by", "is known for",
                                  "was directed by", "succeeded", "is a member of"};
    auto s = subject + " " + verbs[below(8)] + " " + name() + " in " + std::to_string(between(1700, 2020)) + " with the " + word() +
             " " + word() + ".";
    return s;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace detail

/// Example `index` of the synthetic corpus. Always validates cleanly: ten
/// paragraphs with unique titles, two gold paragraphs, 2 to 6 facts.
inline HotpotExample synthetic_example(std::size_t index, const SyntheticOptions& opts = {}) {
  detail::Gen g(opts.seed * 0x9E3779B97F4A7C15ULL + index * 0xBF58476D1CE4E5B9ULL + 1);
  HotpotExample ex;
  char id[32];
  std::snprintf(id, sizeof id, "syn%07zu", index);
  ex.id = id;
  ex.qtype = g.below(5) == 0 ? QuestionType::comparison : QuestionType::bridge;
  static const Level levels[] = {Level::easy, Level::medium, Level::medium, Level::hard, Level::hard};
  ex.level = levels[g.below(5)];

  std::set<std::string> titles;
  while (titles.size() < kDistractorContextSize) titles.insert(g.name());
  std::vector<std::string> title_list(titles.begin(), titles.end());
  // shuffle deterministically
  for (std::size_t i = title_list.size(); i > 1; --i) std::swap(title_list[i - 1], title_list[g.below(i)]);

  // SF count: 2 (35%), 3 (35%), 4-6 (30%)
  auto roll = g.below(100);
  std::size_t k = roll < 35 ? 2 : roll < 70 ? 3 : g.between(4, 6);
  std::size_t first_facts = g.between(1, k - 1);
  std::size_t second_facts = k - first_facts;

  std::size_t gold_a = g.below(kDistractorContextSize);
  std::size_t gold_b = g.below(kDistractorContextSize - 1);
  if (gold_b >= gold_a) ++gold_b;

  std::set<std::string> seen;
  for (std::size_t p = 0; p < kDistractorContextSize; ++p) {
    Paragraph para;
    para.title = title_list[p];
    const bool gold = p == gold_a || p == gold_b;
    std::size_t need = p == gold_a ? first_facts : p == gold_b ? second_facts : 0;
    std::size_t n = opts.light && !gold ? 1 : g.between(opts.min_sentences, opts.max_sentences);
    n = std::max(n, need + (gold ? 1 : 0));
    while (para.sentences.size() < n) {
      auto s = g.sentence(para.sentences.empty() ? para.title : (g.below(2) == 0 ? "It" : "The " + g.word()));
      if (!seen.insert(s).second) continue;
      para.sentences.push_back(para.sentences.empty() ? s : " " + s);
    }
    if (gold) {
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[g.below(i)]);
      idx.resize(need);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) ex.supporting_facts.push_back({para.title, i});
    }
    ex.context.push_back(std::move(para));
  }

  const auto& a = ex.context[gold_a];
  const auto& b = ex.context[gold_b];
  if (ex.qtype == QuestionType::comparison) {
    ex.question = "Are " + a.title + " and " + b.title + " both known for the same " + g.word() + "?";
    auto pick = g.below(3);
    ex.answer = pick == 0 ? "yes" : pick == 1 ? "no" : a.title;
  } else {
    ex.question = "What " + g.word() + " links " + a.title + " to the " + g.word() + " described in " + b.title + "?";
    const auto& sent = *ex.resolve(ex.supporting_facts.back());
    // answer: the "Name Name" right after the verb phrase
    auto in = sent.find(" in ");
    auto start = sent.rfind(' ', sent.rfind(' ', in - 1) - 1);
    ex.answer = sent.substr(start + 1, in - start - 1);
  }
  ex.flags = validate(ex);
  return ex;
}

inline std::vector<HotpotExample> synthetic_corpus(std::size_t count, const SyntheticOptions& opts = {}, std::size_t first = 0) {
  std::vector<HotpotExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_example(first + i, opts));
  return out;
}

/// A real corpus file named by `env_var`, if set and readable.
inline std::optional<std::vector<HotpotExample>> corpus_from_env(const char* env_var, Split split) {
  const char* path = std::getenv(env_var);
  if (path == nullptr || *path == '\0' || !std::filesystem::exists(path)) return std::nullopt;
  return load_corpus(path, split).examples;
}

}  // namespace mhqa::fixtures
