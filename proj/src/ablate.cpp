#include "seqforge/ablate.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/rng.hpp"

namespace seqforge {

using nlohmann::json;

std::size_t record_total_tokens(const InstructionRecord& record, const Tokenizer& tokenizer) {
  std::size_t total = tokenizer.count(record.instruction) + tokenizer.count(record.output);
  if (record.input) {
    total += tokenizer.count(*record.input);
  }
  return total;
}

Dataset sample_to_token_budget(const Dataset& dataset, std::size_t budget,
                               const Tokenizer& tokenizer, std::int64_t seed) {
  if (budget == 0) {
    throw InvalidRequest("budget must be positive");
  }
  std::vector<std::size_t> output_tokens(dataset.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    output_tokens[i] = tokenizer.count(dataset.records[i].output);
    total += output_tokens[i];
  }
  if (budget > total) {
    throw BudgetTooLarge("budget " + std::to_string(budget) + " exceeds dataset total of " +
                         std::to_string(total) + " output tokens");
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  KeyedRng rng = KeyedRng::for_key(seed, "token-budget", 0);
  rng.shuffle(order);

  Dataset out;
  out.name = dataset.name;
  out.format = dataset.format;
  std::size_t running = 0;
  for (std::size_t index : order) {
    if (running >= budget) {
      break;
    }
    out.records.push_back(dataset.records[index]);
    running += output_tokens[index];
  }
  return out;
}

std::pair<Dataset, Dataset> match_instance_lengths(const Dataset& it_dataset,
                                                   const Dataset& sit_dataset,
                                                   const Tokenizer& tokenizer, std::int64_t seed,
                                                   std::size_t tolerance) {
  if (it_dataset.empty() || sit_dataset.empty()) {
    throw InvalidRequest("match_instance_lengths requires two non-empty datasets");
  }

  auto measured = [&](const Dataset& dataset, std::string_view salt) {
    std::vector<std::pair<std::size_t, std::size_t>> items;  // (length, index)
    items.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      items.emplace_back(record_total_tokens(dataset.records[i], tokenizer), i);
    }
    KeyedRng rng = KeyedRng::for_key(seed, salt, 0);
    rng.shuffle(items);  // randomizes ties before the stable sort
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return items;
  };

  auto it_items = measured(it_dataset, "match-it");
  auto sit_items = measured(sit_dataset, "match-sit");

  // Two-pointer greedy over the sorted lengths maximizes the pair count for
  // a |a-b| <= tolerance constraint.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (it index, sit index)
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < it_items.size() && j < sit_items.size()) {
    std::size_t a = it_items[i].first;
    std::size_t b = sit_items[j].first;
    std::size_t diff = a > b ? a - b : b - a;
    if (diff <= tolerance) {
      pairs.emplace_back(it_items[i].second, sit_items[j].second);
      ++i;
      ++j;
    } else if (a < b) {
      ++i;
    } else {
      ++j;
    }
  }
  if (pairs.empty()) {
    throw NoMatches();
  }

  Dataset out_it;
  out_it.name = it_dataset.name;
  Dataset out_sit;
  out_sit.name = sit_dataset.name;
  for (const auto& [it_index, sit_index] : pairs) {
    out_it.records.push_back(it_dataset.records[it_index]);
    out_sit.records.push_back(sit_dataset.records[sit_index]);
  }
  return {std::move(out_it), std::move(out_sit)};
}

Dataset split_sequential(const Dataset& dataset, std::string_view response_delimiter) {
  Dataset out;
  out.name = dataset.name;
  out.format = dataset.format;
  for (const auto& record : dataset.records) {
    std::size_t n = record.segments.size();
    if (n == 1) {
      out.records.push_back(record);
      continue;
    }
    std::vector<std::string> responses = response_segments_of(record, response_delimiter);
    for (std::size_t k = 0; k < n; ++k) {
      InstructionRecord piece;
      piece.id = record.id + "-" + std::to_string(k + 1);
      piece.instruction = record.segments[k];
      piece.segments = {record.segments[k]};
      piece.input = record.input;
      piece.output = responses[k];
      out.records.push_back(std::move(piece));
    }
  }
  return out;
}

std::vector<ChatRecord> to_multiturn(const Dataset& dataset, std::string_view response_delimiter) {
  std::vector<ChatRecord> out;
  out.reserve(dataset.size());
  for (const auto& record : dataset.records) {
    out.push_back(record_to_chat(record, response_delimiter));
  }
  return out;
}

void save_chat_records(const std::vector<ChatRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write chat records: " + path);
  }
  for (const auto& record : records) {
    json obj;
    obj["id"] = record.id;
    json messages = json::array();
    for (const auto& message : record.messages) {
      messages.push_back({{"role", message.role}, {"content", message.content}});
    }
    obj["messages"] = messages;
    out << obj.dump() << '\n';
  }
}

std::vector<ChatRecord> load_chat_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open chat records: " + path);
  }
  std::vector<ChatRecord> records;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid chat line: ") + ex.what(), index);
    }
    ChatRecord record;
    record.id = obj.value("id", "");
    if (!obj.contains("messages") || !obj.at("messages").is_array()) {
      throw SchemaError("chat record needs a `messages` array", index);
    }
    for (std::size_t m = 0; m < obj.at("messages").size(); ++m) {
      const auto& msg = obj.at("messages")[m];
      std::string role = msg.value("role", "");
      std::string expected = (m % 2 == 0) ? "user" : "assistant";
      if (role != expected) {
        throw SchemaError("chat roles must alternate user/assistant starting with user", index);
      }
      record.messages.push_back({role, msg.value("content", "")});
    }
    if (record.messages.empty() || record.messages.size() % 2 != 0) {
      throw SchemaError("chat record must have an even, non-zero message count", index);
    }
    records.push_back(std::move(record));
    ++index;
  }
  return records;
}

}  // namespace seqforge
