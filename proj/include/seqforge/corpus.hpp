#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "seqforge/chat.hpp"
#include "seqforge/prompts.hpp"

namespace seqforge {

enum class ActionSource { model_classified, sampled };

std::string_view action_source_name(ActionSource source);
std::optional<ActionSource> action_source_from_name(std::string_view name);

// Per-iteration record of what the pipeline did to one record.
struct GenerationTrace {
  std::string record_id;
  int iteration = 1;
  Action action = Action::hold;
  ActionSource action_source = ActionSource::model_classified;
  std::optional<std::string> raw_classify;
  std::optional<std::string> raw_rewrite;
  std::optional<std::string> raw_respond;
  bool fallback = false;
  bool truncated = false;

  bool operator==(const GenerationTrace&) const = default;
};

// One dataset instance. `segments` annotates the instruction's task
// structure (length n >= 1); `output_segments`, when known, pairs each task
// with its part of the response.
struct InstructionRecord {
  std::string id;
  std::string instruction;
  std::optional<std::string> input;
  std::string output;
  std::vector<std::string> segments;
  std::optional<std::vector<std::string>> output_segments;
  int iteration = 0;
  std::optional<GenerationTrace> trace;

  bool operator==(const InstructionRecord&) const = default;
};

enum class DatasetFormat { alpaca_json, jsonl, chat };

DatasetFormat dataset_format_from_name(std::string_view name);  // throws FormatError
std::string_view dataset_format_name(DatasetFormat format);

struct Dataset {
  std::vector<InstructionRecord> records;
  std::string name;
  DatasetFormat format = DatasetFormat::jsonl;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

enum class TokenizerKind { whitespace, external_bpe };

struct TokenizerSpec {
  TokenizerKind kind = TokenizerKind::whitespace;
  std::optional<std::string> vocab_path;
};

// Whitespace tokenization splits on maximal non-whitespace runs and is total.
// external_bpe counts pieces by greedy longest-match against a vocabulary
// file (one piece per line); characters not covered count one piece each.
class Tokenizer {
 public:
  explicit Tokenizer(TokenizerSpec spec = {});  // throws VocabError

  std::vector<std::string> tokenize(std::string_view text) const;
  std::size_t count(std::string_view text) const;
  const TokenizerSpec& spec() const { return spec_; }

 private:
  TokenizerSpec spec_;
  std::set<std::string> pieces_;
  std::size_t max_piece_len_ = 0;
};

std::size_t count_tokens(std::string_view text, const TokenizerSpec& spec);

struct StatsRow {
  int iteration = 0;
  double avg_input_tokens = 0.0;
  double avg_output_tokens = 0.0;
  // Undefined (absent) for iteration 0.
  std::optional<double> pct_decompose;
  std::optional<double> pct_prefix;
  std::optional<double> pct_suffix;
  std::optional<double> pct_hold;
};

// One row per distinct iteration value in the dataset, ascending. Every
// record with iteration >= 1 must carry a trace (MissingTraceError).
std::vector<StatsRow> dataset_stats(const Dataset& dataset, const TokenizerSpec& tokenizer);

std::string stats_to_csv(const std::vector<StatsRow>& rows);

Dataset load_dataset(const std::string& path, DatasetFormat format);
void save_dataset(const Dataset& dataset, const std::string& path, DatasetFormat format);

// Instruction+input tokens of one record (the "input" side of Table-style
// token statistics).
std::size_t record_input_tokens(const InstructionRecord& record, const Tokenizer& tokenizer);

// Conversation layout used by the chat format: [user i1, assistant y1, ...].
// Throws SegmentMismatch when per-task responses cannot be recovered.
ChatRecord record_to_chat(const InstructionRecord& record,
                          std::string_view response_delimiter = "\n\n");

// Per-task responses: output_segments when present, otherwise the output
// split on the delimiter. Throws SegmentMismatch if the count disagrees with
// the instruction segments.
std::vector<std::string> response_segments_of(const InstructionRecord& record,
                                              std::string_view response_delimiter = "\n\n");

std::string synthesize_record_id(std::size_t ordinal);

// Joins task segments into one instruction string, lowercasing the first
// letter of every segment after the first.
std::string compose_instruction(const std::vector<std::string>& segments);

std::string lower_first(std::string_view text);

}  // namespace seqforge
