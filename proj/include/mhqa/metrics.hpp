#pragma once

// Answer, supporting-fact and joint EM/F1 with HotpotQA evaluation semantics.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mhqa/corpus.hpp"

namespace mhqa {

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace. Matches the SQuAD/HotpotQA reference normalizer.
inline std::string normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::string out;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && util::is_space(cleaned[i])) ++i;
    std::size_t start = i;
    while (i < cleaned.size() && !util::is_space(cleaned[i])) ++i;
    if (start == i) break;
    std::string_view tok(cleaned.data() + start, i - start);
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

inline std::vector<std::string> answer_tokens(std::string_view normalized) {
  std::vector<std::string> out;
  for (auto piece : util::split(normalized, ' '))
    if (!piece.empty()) out.emplace_back(piece);
  return out;
}

struct AnswerScore {
  double em = 0, f1 = 0, precision = 0, recall = 0;
  bool operator==(const AnswerScore&) const = default;
};

struct SpScore {
  double em = 0, f1 = 0, precision = 0, recall = 0;
  bool operator==(const SpScore&) const = default;
};

struct JointScore {
  double em = 0, f1 = 0, precision = 0, recall = 0;
  bool operator==(const JointScore&) const = default;
};

inline double harmonic_mean(double p, double r) { return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

inline AnswerScore score_answer(std::string_view pred, std::string_view gold) {
  const auto np = normalize_answer(pred);
  const auto ng = normalize_answer(gold);
  AnswerScore s;
  s.em = np == ng ? 1.0 : 0.0;
  auto special = [](const std::string& x) { return x == "yes" || x == "no" || x == "noanswer"; };
  if ((special(np) || special(ng)) && np != ng) return s;

  auto pt = answer_tokens(np);
  auto gt = answer_tokens(ng);
  std::unordered_map<std::string, long> gold_counts;
  for (const auto& t : gt) ++gold_counts[t];
  long common = 0;
  for (const auto& t : pt) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return s;
  s.precision = static_cast<double>(common) / static_cast<double>(pt.size());
  s.recall = static_cast<double>(common) / static_cast<double>(gt.size());
  s.f1 = harmonic_mean(s.precision, s.recall);
  return s;
}

/// Set-level scoring over deduplicated (title, sentence index) pairs.
inline SpScore score_sp(const std::vector<SupportingFact>& pred, const std::vector<SupportingFact>& gold) {
  const std::set<SupportingFact> p(pred.begin(), pred.end());
  const std::set<SupportingFact> g(gold.begin(), gold.end());
  std::size_t tp = 0;
  for (const auto& sf : p) tp += g.count(sf);
  SpScore s;
  s.em = p == g ? 1.0 : 0.0;
  if (p.empty()) {
    s.precision = g.empty() ? 1.0 : 0.0;
  } else {
    s.precision = static_cast<double>(tp) / static_cast<double>(p.size());
  }
  s.recall = g.empty() ? 1.0 : static_cast<double>(tp) / static_cast<double>(g.size());
  s.f1 = harmonic_mean(s.precision, s.recall);
  return s;
}

inline JointScore score_joint(const AnswerScore& ans, const SpScore& sp) {
  JointScore j;
  j.precision = ans.precision * sp.precision;
  j.recall = ans.recall * sp.recall;
  j.f1 = harmonic_mean(j.precision, j.recall);
  j.em = ans.em * sp.em;
  return j;
}

/// A system output for one example. Parse failures keep whatever was
/// recovered (possibly nothing) and are scored as such.
struct Prediction {
  std::string answer;
  std::vector<SupportingFact> supporting_facts;
  std::vector<std::string> titles;
  bool parse_failed = false;
  std::string failure_reason;
  std::vector<std::string> warnings;

  bool operator==(const Prediction&) const = default;
};

// ---------------------------------------------------------------------------
// Aggregation

struct ExampleScores {
  std::string id;
  std::optional<AnswerScore> answer;
  std::optional<SpScore> sp;
  std::optional<JointScore> joint;
  std::map<std::string, std::string> strata;  // e.g. sf_bucket → "Two"

  bool operator==(const ExampleScores&) const = default;
};

struct ScoreMeans {
  std::size_t count = 0;
  double em = 0, f1 = 0, precision = 0, recall = 0;
  bool operator==(const ScoreMeans&) const = default;
};

/// Means over a set of examples. A group with no contributing examples is
/// absent rather than zero.
struct Summary {
  std::size_t count = 0;
  std::optional<ScoreMeans> answer, sp, joint;
  bool operator==(const Summary&) const = default;
};

struct MetricReport {
  std::vector<ExampleScores> examples;  // sorted by id
  Summary overall;
  // stratum key → stratum value → summary
  std::map<std::string, std::map<std::string, Summary>> strata;

  bool operator==(const MetricReport&) const = default;
};

namespace detail {

// Sorting before summing makes the mean a function of the multiset of values,
// so aggregation is independent of input order down to the last bit.
inline double sorted_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

template <typename Score, typename Get>
std::optional<ScoreMeans> means_of(const std::vector<const ExampleScores*>& rows, Get get) {
  std::vector<double> em, f1, p, r;
  for (const auto* row : rows) {
    const std::optional<Score>& s = get(*row);
    if (!s) continue;
    em.push_back(s->em);
    f1.push_back(s->f1);
    p.push_back(s->precision);
    r.push_back(s->recall);
  }
  if (em.empty()) return std::nullopt;
  ScoreMeans m;
  m.count = em.size();
  m.em = sorted_mean(std::move(em));
  m.f1 = sorted_mean(std::move(f1));
  m.precision = sorted_mean(std::move(p));
  m.recall = sorted_mean(std::move(r));
  return m;
}

inline Summary summarize(const std::vector<const ExampleScores*>& rows) {
  Summary s;
  s.count = rows.size();
  s.answer = means_of<AnswerScore>(rows, [](const ExampleScores& e) -> const auto& { return e.answer; });
  s.sp = means_of<SpScore>(rows, [](const ExampleScores& e) -> const auto& { return e.sp; });
  s.joint = means_of<JointScore>(rows, [](const ExampleScores& e) -> const auto& { return e.joint; });
  return s;
}

}  // namespace detail

inline MetricReport aggregate(std::vector<ExampleScores> scores, const std::vector<std::string>& strata_keys = {}) {
  MetricReport report;
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  report.examples = std::move(scores);

  std::vector<const ExampleScores*> all;
  all.reserve(report.examples.size());
  for (const auto& e : report.examples) all.push_back(&e);
  report.overall = detail::summarize(all);

  for (const auto& key : strata_keys) {
    std::map<std::string, std::vector<const ExampleScores*>> groups;
    for (const auto* e : all) {
      auto it = e->strata.find(key);
      if (it != e->strata.end()) groups[it->second].push_back(e);
    }
    auto& out = report.strata[key];
    for (const auto& [value, rows] : groups) out[value] = detail::summarize(rows);
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON

template <typename Score>
json score_to_json(const Score& s) {
  return json{{"em", s.em}, {"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}};
}

template <typename Score>
Score score_from_json(const json& j) {
  Score s;
  s.em = j.at("em").get<double>();
  s.f1 = j.at("f1").get<double>();
  s.precision = j.at("precision").get<double>();
  s.recall = j.at("recall").get<double>();
  return s;
}

template <typename T, typename F>
json optional_to_json(const std::optional<T>& v, F f) {
  return v ? f(*v) : json(nullptr);
}

inline json to_json(const ScoreMeans& m) {
  return json{{"count", m.count}, {"em", m.em}, {"f1", m.f1}, {"precision", m.precision}, {"recall", m.recall}};
}

inline ScoreMeans means_from_json(const json& j) {
  ScoreMeans m;
  m.count = j.at("count").get<std::size_t>();
  m.em = j.at("em").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  return m;
}

inline json to_json(const Summary& s) {
  auto m = [](const ScoreMeans& x) { return to_json(x); };
  return json{{"count", s.count},
              {"answer", optional_to_json(s.answer, m)},
              {"sp", optional_to_json(s.sp, m)},
              {"joint", optional_to_json(s.joint, m)}};
}

inline Summary summary_from_json(const json& j) {
  Summary s;
  s.count = j.at("count").get<std::size_t>();
  auto opt = [&](const char* key) -> std::optional<ScoreMeans> {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return means_from_json(v);
  };
  s.answer = opt("answer");
  s.sp = opt("sp");
  s.joint = opt("joint");
  return s;
}

inline json to_json(const ExampleScores& e) {
  return json{{"id", e.id},
              {"answer", optional_to_json(e.answer, [](const auto& s) { return score_to_json(s); })},
              {"sp", optional_to_json(e.sp, [](const auto& s) { return score_to_json(s); })},
              {"joint", optional_to_json(e.joint, [](const auto& s) { return score_to_json(s); })},
              {"strata", e.strata}};
}

inline ExampleScores example_scores_from_json(const json& j) {
  ExampleScores e;
  e.id = j.at("id").get<std::string>();
  if (!j.at("answer").is_null()) e.answer = score_from_json<AnswerScore>(j.at("answer"));
  if (!j.at("sp").is_null()) e.sp = score_from_json<SpScore>(j.at("sp"));
  if (!j.at("joint").is_null()) e.joint = score_from_json<JointScore>(j.at("joint"));
  e.strata = j.at("strata").get<std::map<std::string, std::string>>();
  return e;
}

inline json to_json(const MetricReport& r, bool include_examples = true) {
  json strata = json::object();
  for (const auto& [key, groups] : r.strata) {
    json g = json::object();
    for (const auto& [value, summary] : groups) g[value] = to_json(summary);
    strata[key] = std::move(g);
  }
  json out{{"overall", to_json(r.overall)}, {"strata", std::move(strata)}};
  if (include_examples) {
    json ex = json::array();
    for (const auto& e : r.examples) ex.push_back(to_json(e));
    out["examples"] = std::move(ex);
  }
  return out;
}

inline MetricReport report_from_json(const json& j) {
  MetricReport r;
  r.overall = summary_from_json(j.at("overall"));
  for (const auto& [key, groups] : j.at("strata").items())
    for (const auto& [value, summary] : groups.items()) r.strata[key][value] = summary_from_json(summary);
  if (j.contains("examples"))
    for (const auto& e : j.at("examples")) r.examples.push_back(example_scores_from_json(e));
  return r;
}

inline json to_json(const SupportingFact& sf) { return json::array({sf.title, sf.sentence_index}); }

inline json facts_to_json(const std::vector<SupportingFact>& facts) {
  json arr = json::array();
  for (const auto& sf : facts) arr.push_back(to_json(sf));
  return arr;
}

inline std::vector<SupportingFact> facts_from_json(const json& j) {
  std::vector<SupportingFact> out;
  for (const auto& sf : j) out.push_back({sf.at(0).get<std::string>(), sf.at(1).get<std::size_t>()});
  return out;
}

inline json to_json(const Prediction& p) {
  return json{{"answer", p.answer},
              {"supporting_facts", facts_to_json(p.supporting_facts)},
              {"titles", p.titles},
              {"parse_failed", p.parse_failed},
              {"failure_reason", p.failure_reason},
              {"warnings", p.warnings}};
}

inline Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.answer = j.at("answer").get<std::string>();
  p.supporting_facts = facts_from_json(j.at("supporting_facts"));
  p.titles = j.at("titles").get<std::vector<std::string>>();
  p.parse_failed = j.at("parse_failed").get<bool>();
  p.failure_reason = j.at("failure_reason").get<std::string>();
  p.warnings = j.at("warnings").get<std::vector<std::string>>();
  return p;
}

}  // namespace mhqa
