#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqforge/corpus.hpp"
#include "seqforge/gateway.hpp"
#include "seqforge/prompts.hpp"

namespace seqforge {

enum class PipelineMode { model_classified, sampled };

struct PipelineConfig {
  int iterations = 2;
  PipelineMode mode = PipelineMode::model_classified;
  // Per-iteration action pools for sampled mode (entry 0 = iteration 1);
  // iterations beyond the list reuse the last entry. Empty list means all
  // four actions. Ignored in model_classified mode.
  std::vector<std::vector<Action>> allowed_actions;
  std::int64_t rng_seed = 0;
  bool regenerate_responses = true;
  bool respond_final_only = false;
  // A run aborts when more than this fraction of records fails in one
  // iteration.
  double failure_abort_fraction = 0.5;
};

struct DecideOutcome {
  Action action = Action::hold;
  GenerationTrace trace;
};

// Picks the action for one record at one iteration: model_classified renders
// the classify prompt and parses the option; sampled draws uniformly from the
// iteration's action pool with a stream keyed on (seed, record id, iteration).
DecideOutcome decide_action(const InstructionRecord& record, const PipelineConfig& config,
                            int iteration, Gateway& gateway, const TemplateSet& templates);

struct RewriteOutcome {
  std::string instruction;
  std::vector<std::string> segments;
  std::string raw;
  bool fallback = false;   // segment derivation used a fallback path
  bool truncated = false;  // model reply lacked the ### terminator
};

// Rewrites the instruction for a non-hold action via the action's template
// and derives the updated task segments (decompose splits one task into two;
// prefix inserts at the front; suffix appends at the end).
// Throws RewriteFailed when the reply has no extractable instruction.
RewriteOutcome rewrite_instruction(const InstructionRecord& record, Action action,
                                   Gateway& gateway, const TemplateSet& templates);

// Asks the same model for a response to the (new) instruction; returns the
// completion text verbatim.
std::string regenerate_response(const std::string& instruction, Gateway& gateway,
                                const TemplateSet& templates);

struct PipelineResult {
  Dataset dataset;
  std::vector<StatsRow> stats;        // one row per iteration 0..N
  std::vector<GenerationTrace> traces;  // one per record per iteration
  std::size_t failed_records = 0;
};

// The full iterative loop: decide -> (rewrite -> respond | hold) per record
// per iteration. The output has exactly the input's record count and id set;
// held records stay byte-identical. Per-record failures are flagged and
// carried forward unchanged.
PipelineResult run_pipeline(const Dataset& dataset, const PipelineConfig& config,
                            Gateway& gateway, const TemplateSet& templates,
                            const TokenizerSpec& tokenizer = {});

// Regenerates every record's output without touching instructions, so a
// baseline dataset and its augmented counterpart share the same generator.
Dataset regenerate_dataset_responses(const Dataset& dataset, Gateway& gateway,
                                     const TemplateSet& templates);

// Traces persist as JSONL, one object per line.
void save_traces(const std::vector<GenerationTrace>& traces, const std::string& path);

}  // namespace seqforge
