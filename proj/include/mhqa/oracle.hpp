#pragma once

// Gold-data oracle backends. They resolve the example named in the request
// metadata and emit the gold view the requesting stage expects, formatted
// with the same inverse formatters the parsers are tested against.

#include <memory>
#include <string>

#include "mhqa/backend.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/prompting.hpp"

namespace mhqa {

/// Sub-questions an oracle decomposer emits: one per gold paragraph.
inline std::vector<std::string> oracle_sub_questions(const HotpotExample& ex) {
  std::vector<std::string> subs;
  for (const auto& t : gold_titles(ex)) subs.push_back("What does the question need to know about " + t + "?");
  while (subs.size() < kMinSubQuestions) subs.push_back("What is the answer to: " + ex.question + " (part " + std::to_string(subs.size() + 1) + ")");
  if (subs.size() > kMaxSubQuestions) subs.resize(kMaxSubQuestions);
  return subs;
}

class OracleSelector final : public ChatBackend {
 public:
  explicit OracleSelector(CorpusHandle corpus) : corpus_(std::move(corpus)) {}

  BackendKind kind() const override { return BackendKind::oracle_selector; }
  std::string model_id() const override { return "oracle-selector"; }
  bool cacheable() const override { return false; }

  ChatResponse generate(const ChatRequest& request) const override {
    const auto& ex = corpus_->at(request.meta.example_id);
    switch (request.meta.role) {
      case PromptRole::paragraph_selector:
        return {format_selector_output(SelectorVariant::paragraph, gold_titles(ex), {})};
      case PromptRole::sentence_selector:
      case PromptRole::single_stage_selector:
        return {format_selector_output(SelectorVariant::single_stage, {}, ex.supporting_facts)};
      case PromptRole::all_in_one:
        return {format_all_in_one_output(ex.supporting_facts, ex.answer)};
      case PromptRole::decomposer:
        return {format_decomposer_output(oracle_sub_questions(ex))};
      default:
        throw BackendError(BackendError::Kind::unscripted,
                           "oracle selector cannot answer a " + std::string(to_string(request.meta.role)) + " prompt");
    }
  }

 private:
  CorpusHandle corpus_;
};

/// Emits the gold answer verbatim, whatever the prompt contains.
class OracleReader final : public ChatBackend {
 public:
  explicit OracleReader(CorpusHandle corpus) : corpus_(std::move(corpus)) {}

  BackendKind kind() const override { return BackendKind::oracle_reader; }
  std::string model_id() const override { return "oracle-reader"; }
  bool cacheable() const override { return false; }

  ChatResponse generate(const ChatRequest& request) const override { return {corpus_->at(request.meta.example_id).answer}; }

 private:
  CorpusHandle corpus_;
};

}  // namespace mhqa
