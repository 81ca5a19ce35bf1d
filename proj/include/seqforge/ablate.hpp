#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqforge/chat.hpp"
#include "seqforge/corpus.hpp"

namespace seqforge {

// Seeded-random-order prefix whose cumulative output tokens first reach the
// budget; the total lands within one max-record output length of it.
Dataset sample_to_token_budget(const Dataset& dataset, std::size_t budget,
                               const Tokenizer& tokenizer, std::int64_t seed);

// Greedy length pairing across the two datasets (total tokens of
// instruction+input+output). tolerance 0 means exact-length matching. The
// returned subsets have identical length multisets and equal sizes.
std::pair<Dataset, Dataset> match_instance_lengths(const Dataset& it_dataset,
                                                   const Dataset& sit_dataset,
                                                   const Tokenizer& tokenizer, std::int64_t seed,
                                                   std::size_t tolerance = 0);

// Each n-segment record becomes n single-task records pairing segment k with
// response segment k; multi-segment ids gain a `-k` suffix.
Dataset split_sequential(const Dataset& dataset, std::string_view response_delimiter = "\n\n");

// Dialogue form: [user i1, assistant y1, ..., user in, assistant yn].
std::vector<ChatRecord> to_multiturn(const Dataset& dataset,
                                     std::string_view response_delimiter = "\n\n");

// Conversation JSONL: {"id", "messages": [{"role", "content"}]}.
void save_chat_records(const std::vector<ChatRecord>& records, const std::string& path);
std::vector<ChatRecord> load_chat_records(const std::string& path);

// Total token length used by the matching ablation.
std::size_t record_total_tokens(const InstructionRecord& record, const Tokenizer& tokenizer);

}  // namespace seqforge
