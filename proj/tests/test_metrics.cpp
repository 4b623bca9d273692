#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mhqa/metrics.hpp"
#include "support/metric_golden.hpp"

using namespace mhqa;

namespace {

std::string random_text(std::mt19937_64& rng) {
  static const std::string alphabet = "abcXYZ the an a ,.!?'-\t\n 019";
  std::uniform_int_distribution<std::size_t> len(0, 40), pick(0, alphabet.size() - 1);
  std::string s;
  for (auto n = len(rng); n > 0; --n) s.push_back(alphabet[pick(rng)]);
  return s;
}

std::vector<SupportingFact> random_facts(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(0, 6), t(0, 3), i(0, 4);
  std::vector<SupportingFact> out;
  for (int k = n(rng); k > 0; --k) out.push_back({std::string(1, static_cast<char>('A' + t(rng))), static_cast<std::size_t>(i(rng))});
  return out;
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_answer(""), "");
  EXPECT_EQ(normalize_answer("The Beatles!"), "beatles");
  EXPECT_EQ(normalize_answer("yes"), "yes");
  EXPECT_EQ(normalize_answer("  A   tale of  two\tcities. "), "tale of two cities");
  EXPECT_EQ(normalize_answer("theatre"), "theatre");
}

TEST(Normalize, Idempotent) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    auto s = random_text(rng);
    auto once = normalize_answer(s);
    EXPECT_EQ(normalize_answer(once), once) << s;
  }
}

TEST(MetricGolden, TwentyFiveHandComputedCases) {
  auto suite = fixtures::metric_golden_suite();
  ASSERT_EQ(suite.size(), 25u);
  for (const auto& c : suite) {
    auto got = c.compute();
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(got[k], c.expected[k], 1e-9) << c.name << " field " << k;
  }
}

TEST(AnswerScore, Invariants) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    auto a = random_text(rng), b = random_text(rng);
    auto s = score_answer(a, b);
    for (double v : {s.em, s.f1, s.precision, s.recall}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_TRUE(s.em == 0.0 || s.em == 1.0);
    // equal normalized strings score f1 1, unless both normalize to nothing
    if (s.em == 1.0 && !normalize_answer(a).empty()) EXPECT_EQ(s.f1, 1.0);
    EXPECT_EQ(s.f1 == 0.0, s.precision * s.recall == 0.0);
    // swapping sides exchanges precision and recall
    auto r = score_answer(b, a);
    EXPECT_DOUBLE_EQ(r.f1, s.f1);
    EXPECT_DOUBLE_EQ(r.precision, s.recall);
    EXPECT_DOUBLE_EQ(r.recall, s.precision);
  }
}

TEST(SpScore, InvariantUnderDuplicationAndOrder) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    auto p = random_facts(rng), g = random_facts(rng);
    auto base = score_sp(p, g);
    auto p2 = p;
    p2.insert(p2.end(), p.begin(), p.end());
    std::shuffle(p2.begin(), p2.end(), rng);
    auto g2 = g;
    std::reverse(g2.begin(), g2.end());
    if (!g.empty()) g2.push_back(g.front());
    auto again = score_sp(p2, g2);
    EXPECT_EQ(fixtures::as_array(base), fixtures::as_array(again));
    // em iff deduplicated sets are equal
    std::set<SupportingFact> ps(p.begin(), p.end()), gs(g.begin(), g.end());
    EXPECT_EQ(base.em == 1.0, ps == gs);
  }
}

TEST(JointScore, BoundedByComponents) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    auto a = score_answer(random_text(rng), random_text(rng));
    auto s = score_sp(random_facts(rng), random_facts(rng));
    auto j = score_joint(a, s);
    EXPECT_LE(j.precision, std::min(a.precision, s.precision) + 1e-15);
    EXPECT_LE(j.recall, std::min(a.recall, s.recall) + 1e-15);
    EXPECT_EQ(j.em, a.em * s.em);
    EXPECT_DOUBLE_EQ(j.precision, a.precision * s.precision);
  }
}

TEST(Aggregate, SimpleMeans) {
  ExampleScores one{"a", AnswerScore{1, 1, 1, 1}, SpScore{1, 1, 1, 1}, JointScore{1, 1, 1, 1}, {}};
  auto r = aggregate({one});
  ASSERT_TRUE(r.overall.answer);
  EXPECT_EQ(r.overall.answer->f1, 1.0);
  EXPECT_EQ(r.overall.joint->em, 1.0);

  ExampleScores zero{"b", AnswerScore{0, 0, 0, 0}, std::nullopt, std::nullopt, {}};
  r = aggregate({one, zero});
  EXPECT_EQ(r.overall.answer->f1, 0.5);
  EXPECT_EQ(r.overall.sp->count, 1u);  // absent sp does not count as zero
}

TEST(Aggregate, EmptyInputHasAbsentMeans) {
  auto r = aggregate({});
  EXPECT_EQ(r.overall.count, 0u);
  EXPECT_FALSE(r.overall.answer);
  EXPECT_FALSE(r.overall.sp);
  EXPECT_FALSE(r.overall.joint);
}

TEST(Aggregate, TwentyExampleSuiteMatchesIndependentSums) {
  std::mt19937_64 rng(20);
  std::vector<ExampleScores> rows;
  for (int i = 0; i < 20; ++i) {
    ExampleScores e;
    e.id = "ex" + std::to_string(i);
    e.answer = score_answer(random_text(rng), random_text(rng));
    e.sp = score_sp(random_facts(rng), random_facts(rng));
    e.joint = score_joint(*e.answer, *e.sp);
    e.strata["bucket"] = i % 3 == 0 ? "x" : "y";
    rows.push_back(e);
  }
  // Spreadsheet-style oracle: long double column sums in input order.
  long double f1 = 0, p = 0, jr = 0;
  for (const auto& e : rows) {
    f1 += e.answer->f1;
    p += e.sp->precision;
    jr += e.joint->recall;
  }
  auto r = aggregate(rows, {"bucket"});
  EXPECT_NEAR(r.overall.answer->f1, static_cast<double>(f1 / 20), 1e-9);
  EXPECT_NEAR(r.overall.sp->precision, static_cast<double>(p / 20), 1e-9);
  EXPECT_NEAR(r.overall.joint->recall, static_cast<double>(jr / 20), 1e-9);

  // strata recombine to the global mean under count weighting
  double weighted = 0;
  std::size_t n = 0;
  for (const auto& [v, s] : r.strata.at("bucket")) {
    weighted += s.answer->f1 * static_cast<double>(s.answer->count);
    n += s.answer->count;
  }
  EXPECT_EQ(n, 20u);
  EXPECT_NEAR(weighted / 20.0, r.overall.answer->f1, 1e-12);
}

TEST(Aggregate, PermutationInvariantBitwise) {
  std::mt19937_64 rng(99);
  std::vector<ExampleScores> rows;
  for (int i = 0; i < 200; ++i) {
    ExampleScores e;
    e.id = "ex" + std::to_string(i);
    e.answer = score_answer(random_text(rng), random_text(rng));
    e.strata["k"] = std::to_string(i % 4);
    rows.push_back(e);
  }
  auto base = aggregate(rows, {"k"});
  for (int t = 0; t < 20; ++t) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(aggregate(rows, {"k"}), base);
  }
}

TEST(MetricReport, JsonRoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<ExampleScores> rows;
  for (int i = 0; i < 10; ++i) {
    ExampleScores e;
    e.id = "ex" + std::to_string(i);
    e.answer = score_answer(random_text(rng), random_text(rng));
    if (i % 2 == 0) {
      e.sp = score_sp(random_facts(rng), random_facts(rng));
      e.joint = score_joint(*e.answer, *e.sp);
    }
    e.strata["k"] = i < 5 ? "lo" : "hi";
    rows.push_back(e);
  }
  auto r = aggregate(rows, {"k"});
  EXPECT_EQ(report_from_json(json::parse(to_json(r).dump())), r);
}

TEST(Prediction, JsonRoundTrip) {
  Prediction p{"Paris", {{"A", 0}, {"B", 2}}, {"A", "B"}, true, "why", {"w1"}};
  EXPECT_EQ(prediction_from_json(to_json(p)), p);
}
