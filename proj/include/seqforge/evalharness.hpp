#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqforge/corpus.hpp"
#include "seqforge/gateway.hpp"
#include "seqforge/prompts.hpp"

namespace seqforge {

struct EvalRecord {
  std::string id;
  std::string instruction;
  std::vector<std::string> segments;
  std::string response;
  std::optional<std::string> reference_final;  // gold final answer, when known
  std::optional<std::vector<std::string>> reference_intermediates;  // |segments| - 1 entries
};

// EvalRecord JSONL: {"id", "instruction", "segments", "response",
// "reference_final", "reference_intermediates"}.
std::vector<EvalRecord> load_eval_records(const std::string& path);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// ROUGE-L over token sequences: LCS length against candidate and reference
// lengths; empty candidate or reference scores zero.
RougeScore rouge_l(std::string_view candidate, std::string_view reference,
                   const Tokenizer& tokenizer);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Normalized string equality: case fold, trim, collapse whitespace runs,
// strip one terminal period.
bool exact_match(std::string_view prediction, std::string_view gold);
std::string normalize_for_match(std::string_view text);

enum class FollowMethod { rouge_threshold, judge };

struct FollowParams {
  double rouge_threshold = 0.3;
  std::string response_delimiter = "\n\n";
  TokenizerSpec tokenizer;
};

// A record is followed when every intermediate response part clears the
// ROUGE-L F1 threshold against its reference and the final part is
// non-empty. Responses with fewer parts than tasks are scored leniently
// (whole response against each reference).
bool record_followed_rouge(const EvalRecord& record, const FollowParams& params,
                           const Tokenizer& tokenizer);

// Percentage of records whose response attempts every task. rouge_threshold
// requires reference_intermediates on every record; judge needs a gateway.
double following_rate(const std::vector<EvalRecord>& records, FollowMethod method,
                      const FollowParams& params, Gateway* judge_gateway = nullptr,
                      const TemplateSet* templates = nullptr);

struct JudgeRow {
  std::string id;
  std::optional<JudgeVerdict> verdict;  // absent when the reply was malformed
  std::string raw;
};

struct JudgeAggregate {
  double mean_score = 0.0;    // over parsed verdicts
  double follow_pct = 0.0;    // over parsed verdicts
  std::size_t malformed = 0;  // excluded from the means
  std::size_t total = 0;
};

struct JudgeOutcome {
  std::vector<JudgeRow> rows;
  JudgeAggregate aggregate;
};

// Scores each response 1-5 with a followed flag via the judge prompt at
// temperature 0.
JudgeOutcome judge_responses(const std::vector<EvalRecord>& records, Gateway& judge_gateway,
                             const TemplateSet& templates);

// 100 * mean of (1 if a>b, 0.5 if tie, 0 otherwise), aligned by position.
double win_rate(const std::vector<int>& scores_a, const std::vector<int>& scores_b);

struct ParseAnnotation {
  std::string verb;
  std::optional<std::string> noun;
};

struct VerbNoun {
  std::string verb;  // empty when the heuristic declines
  std::optional<std::string> noun;

  bool declined() const { return verb.empty(); }
};

// Root verb and first direct noun object. With annotations supplied they
// pass through; otherwise a heuristic reads imperative-shaped instructions
// (first token as verb, first later non-stopword as noun) and declines
// interrogatives.
VerbNoun extract_verb_noun(std::string_view instruction,
                           const std::optional<ParseAnnotation>& annotation = std::nullopt);

}  // namespace seqforge
