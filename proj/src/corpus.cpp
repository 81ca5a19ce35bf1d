#include "seqforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqforge/errors.hpp"

namespace seqforge {

using nlohmann::json;

namespace {

std::string trimmed(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

std::vector<std::string> split_literal(std::string_view text, std::string_view delimiter) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    std::size_t hit = text.find(delimiter, pos);
    if (hit == std::string_view::npos) {
      parts.emplace_back(text.substr(pos));
      break;
    }
    parts.emplace_back(text.substr(pos, hit - pos));
    pos = hit + delimiter.size();
  }
  // Blank parts (trailing delimiter, doubled separators) carry no response.
  parts.erase(std::remove_if(parts.begin(), parts.end(),
                             [](const std::string& p) { return trimmed(p).empty(); }),
              parts.end());
  return parts;
}

json trace_to_json(const GenerationTrace& trace) {
  json out;
  out["record_id"] = trace.record_id;
  out["iteration"] = trace.iteration;
  out["action"] = std::string(action_name(trace.action));
  out["action_source"] = std::string(action_source_name(trace.action_source));
  if (trace.raw_classify) out["raw_classify"] = *trace.raw_classify;
  if (trace.raw_rewrite) out["raw_rewrite"] = *trace.raw_rewrite;
  if (trace.raw_respond) out["raw_respond"] = *trace.raw_respond;
  out["fallback"] = trace.fallback;
  out["truncated"] = trace.truncated;
  return out;
}

GenerationTrace trace_from_json(const json& obj, std::size_t index) {
  if (!obj.is_object()) {
    throw SchemaError("trace must be an object", index);
  }
  GenerationTrace trace;
  trace.record_id = obj.value("record_id", "");
  trace.iteration = obj.value("iteration", 1);
  auto action = action_from_name(obj.value("action", ""));
  if (!action) {
    throw SchemaError("trace has unknown action", index);
  }
  trace.action = *action;
  auto source = action_source_from_name(obj.value("action_source", "model_classified"));
  if (!source) {
    throw SchemaError("trace has unknown action_source", index);
  }
  trace.action_source = *source;
  if (obj.contains("raw_classify") && !obj.at("raw_classify").is_null()) {
    trace.raw_classify = obj.at("raw_classify").get<std::string>();
  }
  if (obj.contains("raw_rewrite") && !obj.at("raw_rewrite").is_null()) {
    trace.raw_rewrite = obj.at("raw_rewrite").get<std::string>();
  }
  if (obj.contains("raw_respond") && !obj.at("raw_respond").is_null()) {
    trace.raw_respond = obj.at("raw_respond").get<std::string>();
  }
  trace.fallback = obj.value("fallback", false);
  trace.truncated = obj.value("truncated", false);
  return trace;
}

std::string require_string(const json& obj, const char* key, std::size_t index) {
  if (!obj.contains(key) || !obj.at(key).is_string()) {
    throw SchemaError(std::string("missing `") + key + "` field", index);
  }
  return obj.at(key).get<std::string>();
}

InstructionRecord record_from_json(const json& obj, std::size_t index) {
  if (!obj.is_object()) {
    throw SchemaError("record must be a JSON object", index);
  }
  InstructionRecord record;
  record.instruction = require_string(obj, "instruction", index);
  record.output = require_string(obj, "output", index);

  if (obj.contains("input") && obj.at("input").is_string()) {
    std::string input = obj.at("input").get<std::string>();
    if (!input.empty()) {
      record.input = std::move(input);
    }
  }

  if (obj.contains("id") && obj.at("id").is_string()) {
    record.id = obj.at("id").get<std::string>();
  } else {
    record.id = synthesize_record_id(index);
  }

  if (obj.contains("segments") && !obj.at("segments").is_null()) {
    if (!obj.at("segments").is_array() || obj.at("segments").empty()) {
      throw SchemaError("`segments` must be a non-empty array of strings", index);
    }
    for (const auto& seg : obj.at("segments")) {
      if (!seg.is_string()) {
        throw SchemaError("`segments` must contain only strings", index);
      }
      record.segments.push_back(seg.get<std::string>());
    }
    if (record.segments.size() == 1 &&
        trimmed(record.segments[0]) != trimmed(record.instruction)) {
      throw SchemaError("single-segment record must have segments[0] == instruction", index);
    }
  } else {
    record.segments = {record.instruction};
  }

  if (obj.contains("output_segments") && !obj.at("output_segments").is_null()) {
    if (!obj.at("output_segments").is_array()) {
      throw SchemaError("`output_segments` must be an array of strings", index);
    }
    std::vector<std::string> parts;
    for (const auto& part : obj.at("output_segments")) {
      if (!part.is_string()) {
        throw SchemaError("`output_segments` must contain only strings", index);
      }
      parts.push_back(part.get<std::string>());
    }
    record.output_segments = std::move(parts);
  }

  if (obj.contains("iteration") && !obj.at("iteration").is_null()) {
    if (!obj.at("iteration").is_number_integer() || obj.at("iteration").get<int>() < 0) {
      throw SchemaError("`iteration` must be a non-negative integer", index);
    }
    record.iteration = obj.at("iteration").get<int>();
  }

  if (obj.contains("trace") && !obj.at("trace").is_null()) {
    record.trace = trace_from_json(obj.at("trace"), index);
  }
  if (record.iteration == 0 && record.trace) {
    throw SchemaError("iteration 0 records cannot carry a trace", index);
  }
  return record;
}

json record_to_jsonl_object(const InstructionRecord& record) {
  json out;
  out["id"] = record.id;
  out["instruction"] = record.instruction;
  if (record.input) {
    out["input"] = *record.input;
  }
  out["output"] = record.output;
  out["segments"] = record.segments;
  if (record.output_segments) {
    out["output_segments"] = *record.output_segments;
  }
  out["iteration"] = record.iteration;
  out["trace"] = record.trace ? trace_to_json(*record.trace) : json(nullptr);
  return out;
}

// Alpaca export keeps the canonical three keys and adds the bookkeeping
// fields only when they carry information, so plain Alpaca consumers still
// read the file and a reload reproduces the dataset exactly.
json record_to_alpaca_object(const InstructionRecord& record) {
  json out;
  out["instruction"] = record.instruction;
  out["input"] = record.input ? *record.input : "";
  out["output"] = record.output;
  out["id"] = record.id;
  if (record.segments != std::vector<std::string>{record.instruction}) {
    out["segments"] = record.segments;
  }
  if (record.output_segments) {
    out["output_segments"] = *record.output_segments;
  }
  if (record.iteration != 0) {
    out["iteration"] = record.iteration;
  }
  if (record.trace) {
    out["trace"] = trace_to_json(*record.trace);
  }
  return out;
}

void check_unique_ids(const Dataset& dataset) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (!seen.insert(dataset.records[i].id).second) {
      throw SchemaError("duplicate record id: " + dataset.records[i].id, i);
    }
  }
}

Dataset load_alpaca(const std::string& path, std::ifstream& in) {
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& ex) {
    throw SchemaError(std::string("invalid JSON in ") + path + ": " + ex.what(), 0);
  }
  if (!root.is_array()) {
    throw SchemaError("alpaca_json file must be a JSON array", 0);
  }
  Dataset dataset;
  dataset.format = DatasetFormat::alpaca_json;
  dataset.records.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    dataset.records.push_back(record_from_json(root[i], i));
  }
  return dataset;
}

Dataset load_jsonl(const std::string& path, std::ifstream& in) {
  Dataset dataset;
  dataset.format = DatasetFormat::jsonl;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (trimmed(line).empty()) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid JSON line in ") + path + ": " + ex.what(), index);
    }
    dataset.records.push_back(record_from_json(obj, index));
    ++index;
  }
  return dataset;
}

Dataset load_chat(const std::string& path, std::ifstream& in) {
  Dataset dataset;
  dataset.format = DatasetFormat::chat;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (trimmed(line).empty()) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid JSON line in ") + path + ": " + ex.what(), index);
    }
    if (!obj.is_object() || !obj.contains("messages") || !obj.at("messages").is_array()) {
      throw SchemaError("chat record must have a `messages` array", index);
    }
    const auto& messages = obj.at("messages");
    if (messages.empty() || messages.size() % 2 != 0) {
      throw SchemaError("chat record must have an even, non-zero message count", index);
    }
    InstructionRecord record;
    record.id = obj.contains("id") && obj.at("id").is_string() ? obj.at("id").get<std::string>()
                                                               : synthesize_record_id(index);
    std::vector<std::string> responses;
    for (std::size_t m = 0; m < messages.size(); ++m) {
      std::string role = messages[m].value("role", "");
      std::string expected = (m % 2 == 0) ? "user" : "assistant";
      if (role != expected) {
        throw SchemaError("chat roles must alternate user/assistant starting with user", index);
      }
      std::string content = messages[m].value("content", "");
      if (m % 2 == 0) {
        record.segments.push_back(content);
      } else {
        responses.push_back(content);
      }
    }
    record.instruction = compose_instruction(record.segments);
    std::string output;
    for (std::size_t r = 0; r < responses.size(); ++r) {
      if (r > 0) output += "\n\n";
      output += responses[r];
    }
    record.output = std::move(output);
    record.output_segments = std::move(responses);
    dataset.records.push_back(std::move(record));
    ++index;
  }
  return dataset;
}

}  // namespace

std::string_view action_source_name(ActionSource source) {
  return source == ActionSource::model_classified ? "model_classified" : "sampled";
}

std::optional<ActionSource> action_source_from_name(std::string_view name) {
  if (name == "model_classified") return ActionSource::model_classified;
  if (name == "sampled") return ActionSource::sampled;
  return std::nullopt;
}

DatasetFormat dataset_format_from_name(std::string_view name) {
  if (name == "alpaca_json" || name == "alpaca") return DatasetFormat::alpaca_json;
  if (name == "jsonl") return DatasetFormat::jsonl;
  if (name == "chat") return DatasetFormat::chat;
  throw FormatError("unknown dataset format: " + std::string(name));
}

std::string_view dataset_format_name(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::alpaca_json:
      return "alpaca_json";
    case DatasetFormat::jsonl:
      return "jsonl";
    case DatasetFormat::chat:
      return "chat";
  }
  return "jsonl";
}

std::string synthesize_record_id(std::size_t ordinal) {
  char buffer[16];
  std::snprintf(buffer, sizeof(buffer), "rec-%08zu", ordinal);
  return buffer;
}

std::string lower_first(std::string_view text) {
  std::string out(text);
  if (!out.empty()) {
    out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
  }
  return out;
}

std::string compose_instruction(const std::vector<std::string>& segments) {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i == 0) {
      out += segments[i];
    } else {
      out += ", then ";
      out += lower_first(segments[i]);
    }
  }
  return out;
}

Dataset load_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open dataset: " + path);
  }
  Dataset dataset;
  switch (format) {
    case DatasetFormat::alpaca_json:
      dataset = load_alpaca(path, in);
      break;
    case DatasetFormat::jsonl:
      dataset = load_jsonl(path, in);
      break;
    case DatasetFormat::chat:
      dataset = load_chat(path, in);
      break;
  }
  dataset.name = std::filesystem::path(path).stem().string();
  check_unique_ids(dataset);
  return dataset;
}

void save_dataset(const Dataset& dataset, const std::string& path, DatasetFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write dataset: " + path);
  }
  switch (format) {
    case DatasetFormat::alpaca_json: {
      json root = json::array();
      for (const auto& record : dataset.records) {
        root.push_back(record_to_alpaca_object(record));
      }
      out << root.dump(2) << '\n';
      break;
    }
    case DatasetFormat::jsonl: {
      for (const auto& record : dataset.records) {
        out << record_to_jsonl_object(record).dump() << '\n';
      }
      break;
    }
    case DatasetFormat::chat: {
      for (const auto& record : dataset.records) {
        ChatRecord chat;
        try {
          chat = record_to_chat(record);
        } catch (const SegmentMismatch& ex) {
          throw FormatError(std::string("chat format needs per-segment responses: ") + ex.what());
        }
        json obj;
        obj["id"] = chat.id;
        json messages = json::array();
        for (const auto& message : chat.messages) {
          messages.push_back({{"role", message.role}, {"content", message.content}});
        }
        obj["messages"] = messages;
        out << obj.dump() << '\n';
      }
      break;
    }
  }
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

Tokenizer::Tokenizer(TokenizerSpec spec) : spec_(std::move(spec)) {
  if (spec_.kind == TokenizerKind::external_bpe) {
    if (!spec_.vocab_path) {
      throw VocabError("external_bpe tokenizer requires a vocab_path");
    }
    std::ifstream in(*spec_.vocab_path, std::ios::binary);
    if (!in) {
      throw VocabError("cannot read vocabulary: " + *spec_.vocab_path);
    }
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') {
        line.pop_back();
      }
      if (!line.empty()) {
        max_piece_len_ = std::max(max_piece_len_, line.size());
        pieces_.insert(line);
      }
    }
    if (pieces_.empty()) {
      throw VocabError("vocabulary is empty: " + *spec_.vocab_path);
    }
  }
}

std::vector<std::string> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t begin = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > begin) {
      words.emplace_back(text.substr(begin, i - begin));
    }
  }
  if (spec_.kind == TokenizerKind::whitespace) {
    return words;
  }

  std::vector<std::string> out;
  for (const auto& word : words) {
    std::size_t pos = 0;
    while (pos < word.size()) {
      std::size_t take = std::min(max_piece_len_, word.size() - pos);
      while (take > 1 && !pieces_.count(std::string(word, pos, take))) {
        --take;
      }
      out.emplace_back(word.substr(pos, take));
      pos += take;
    }
  }
  return out;
}

std::size_t Tokenizer::count(std::string_view text) const { return tokenize(text).size(); }

std::size_t count_tokens(std::string_view text, const TokenizerSpec& spec) {
  return Tokenizer(spec).count(text);
}

std::size_t record_input_tokens(const InstructionRecord& record, const Tokenizer& tokenizer) {
  std::size_t total = tokenizer.count(record.instruction);
  if (record.input) {
    total += tokenizer.count(*record.input);
  }
  return total;
}

std::vector<StatsRow> dataset_stats(const Dataset& dataset, const TokenizerSpec& spec) {
  Tokenizer tokenizer(spec);
  std::map<int, std::vector<const InstructionRecord*>> groups;
  for (const auto& record : dataset.records) {
    groups[record.iteration].push_back(&record);
  }

  std::vector<StatsRow> rows;
  for (const auto& [iteration, records] : groups) {
    StatsRow row;
    row.iteration = iteration;
    double input_sum = 0;
    double output_sum = 0;
    for (const auto* record : records) {
      input_sum += static_cast<double>(record_input_tokens(*record, tokenizer));
      output_sum += static_cast<double>(tokenizer.count(record->output));
    }
    row.avg_input_tokens = input_sum / static_cast<double>(records.size());
    row.avg_output_tokens = output_sum / static_cast<double>(records.size());

    if (iteration >= 1) {
      std::size_t counts[4] = {0, 0, 0, 0};
      for (const auto* record : records) {
        if (!record->trace) {
          throw MissingTraceError(record->id);
        }
        counts[static_cast<int>(record->trace->action)]++;
      }
      double total = static_cast<double>(records.size());
      row.pct_decompose = 100.0 * static_cast<double>(counts[0]) / total;
      row.pct_prefix = 100.0 * static_cast<double>(counts[1]) / total;
      row.pct_suffix = 100.0 * static_cast<double>(counts[2]) / total;
      row.pct_hold = 100.0 * static_cast<double>(counts[3]) / total;
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string format_number(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.6g", value);
  return buffer;
}

}  // namespace

std::string stats_to_csv(const std::vector<StatsRow>& rows) {
  std::string csv =
      "iteration,avg_input_tokens,avg_output_tokens,pct_decompose,pct_prefix,pct_suffix,"
      "pct_hold\n";
  for (const auto& row : rows) {
    csv += std::to_string(row.iteration);
    csv += ',';
    csv += format_number(row.avg_input_tokens);
    csv += ',';
    csv += format_number(row.avg_output_tokens);
    for (const auto& pct : {row.pct_decompose, row.pct_prefix, row.pct_suffix, row.pct_hold}) {
      csv += ',';
      if (pct) {
        csv += format_number(*pct);
      }
    }
    csv += '\n';
  }
  return csv;
}

std::vector<std::string> response_segments_of(const InstructionRecord& record,
                                              std::string_view response_delimiter) {
  std::size_t n = record.segments.size();
  if (record.output_segments) {
    if (record.output_segments->size() != n) {
      throw SegmentMismatch(record.id);
    }
    return *record.output_segments;
  }
  if (n == 1) {
    return {record.output};
  }
  std::vector<std::string> parts = split_literal(record.output, response_delimiter);
  if (parts.size() != n) {
    throw SegmentMismatch(record.id);
  }
  return parts;
}

ChatRecord record_to_chat(const InstructionRecord& record, std::string_view response_delimiter) {
  std::vector<std::string> responses = response_segments_of(record, response_delimiter);
  ChatRecord chat;
  chat.id = record.id;
  chat.messages.reserve(record.segments.size() * 2);
  for (std::size_t i = 0; i < record.segments.size(); ++i) {
    chat.messages.push_back({"user", record.segments[i]});
    chat.messages.push_back({"assistant", responses[i]});
  }
  return chat;
}

}  // namespace seqforge
