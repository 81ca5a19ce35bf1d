#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqforge/corpus.hpp"
#include "seqforge/gateway.hpp"
#include "seqforge/prompts.hpp"

namespace seqforge {

struct ParallelInputEntry {
  std::string lang;  // BCP-47 code
  std::string text;  // translated input
};

using ParallelInputMap = std::map<std::string, ParallelInputEntry>;  // record id -> entry
using CaptionMap = std::map<std::string, std::string>;               // record id -> caption

// JSONL side files: {"id", "lang", "text"} and {"id", "caption"}.
ParallelInputMap load_parallel_inputs(const std::string& path);
CaptionMap load_captions(const std::string& path);

// Replaces the input of a seeded sample of floor(fraction * eligible)
// records (eligible = non-empty input) with its foreign translation,
// prepends the translate task to instruction and the English input to the
// output. Selected records without a translation raise MissingTranslation.
Dataset translate_prefix_transform(const Dataset& dataset, const ParallelInputMap& translations,
                                   double fraction, std::int64_t seed);

// sequential=false rewrites every instruction to the single-step baseline;
// sequential=true prepends the describe-the-image task and the caption.
Dataset caption_transform(const Dataset& dataset, const CaptionMap& captions, bool sequential);

enum class DummyTask { repeat, paraphrase };

struct DummyTaskResult {
  Dataset dataset;
  std::vector<std::string> failed_ids;  // paraphrase calls that failed; records left untouched
};

// Prepends a repeat/paraphrase-the-input task to records that have an input;
// input-free records pass through unchanged. Paraphrase mode needs a gateway
// for the model-generated paraphrases; repeat mode never calls it.
DummyTaskResult dummy_task_transform(const Dataset& dataset, DummyTask task, Gateway* gateway,
                                     const TemplateSet* templates);

}  // namespace seqforge
