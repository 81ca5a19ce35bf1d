#include "seqforge/manualsit.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/rng.hpp"

namespace seqforge {

using nlohmann::json;

namespace {

// Byte-exact task strings; eval-side checks depend on them verbatim.
constexpr const char* kTranslatePrefix = "First, translate the input into English, then ";
constexpr const char* kTranslateTask = "First, translate the input into English";
constexpr const char* kCaptionSequential =
    "First describe the image, then answer the input question based on the image";
constexpr const char* kCaptionBaseline = "Answer the input question based on the image";
constexpr const char* kCaptionTask = "First describe the image";
constexpr const char* kCaptionAnswerTask = "answer the input question based on the image";
constexpr const char* kRepeatPrefix = "First repeat the input, then ";
constexpr const char* kRepeatTask = "First repeat the input";
constexpr const char* kParaphrasePrefix = "First paraphrase the input, then ";
constexpr const char* kParaphraseTask = "First paraphrase the input";

json parse_line(const std::string& line, const std::string& path, std::size_t index) {
  try {
    return json::parse(line);
  } catch (const json::exception& ex) {
    throw SchemaError("invalid JSON line in " + path + ": " + ex.what(), index);
  }
}

void check_ids_exist(const Dataset& dataset, const std::set<std::string>& referenced,
                     const char* what) {
  std::set<std::string> known;
  for (const auto& record : dataset.records) {
    known.insert(record.id);
  }
  std::size_t index = 0;
  for (const auto& id : referenced) {
    if (!known.count(id)) {
      throw SchemaError(std::string(what) + " references unknown record id: " + id, index);
    }
    ++index;
  }
}

// Sequential records pair the intermediate answer with the original output,
// separated by a new line.
void apply_intermediate(InstructionRecord& record, const std::string& task_prefix,
                        const std::string& task_segment, const std::string& intermediate_output) {
  std::string original_instruction = record.instruction;
  std::string original_output = record.output;
  record.instruction = task_prefix + lower_first(original_instruction);
  record.segments = {task_segment, original_instruction};
  record.output = intermediate_output + "\n" + original_output;
  record.output_segments = std::vector<std::string>{intermediate_output, original_output};
}

}  // namespace

ParallelInputMap load_parallel_inputs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open translation map: " + path);
  }
  ParallelInputMap map;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = parse_line(line, path, index);
    std::string id = obj.value("id", "");
    if (id.empty() || !obj.contains("text")) {
      throw SchemaError("translation entries need `id` and `text`", index);
    }
    map[id] = ParallelInputEntry{obj.value("lang", ""), obj.at("text").get<std::string>()};
    ++index;
  }
  return map;
}

CaptionMap load_captions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open caption map: " + path);
  }
  CaptionMap map;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = parse_line(line, path, index);
    std::string id = obj.value("id", "");
    std::string caption = obj.value("caption", "");
    if (id.empty() || caption.empty()) {
      throw SchemaError("caption entries need `id` and a non-empty `caption`", index);
    }
    map[id] = std::move(caption);
    ++index;
  }
  return map;
}

Dataset translate_prefix_transform(const Dataset& dataset, const ParallelInputMap& translations,
                                   double fraction, std::int64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw InvalidRequest("fraction must be in [0, 1]");
  }
  std::set<std::string> referenced;
  for (const auto& [id, entry] : translations) {
    referenced.insert(id);
  }
  check_ids_exist(dataset, referenced, "translation map");

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (dataset.records[i].input && !dataset.records[i].input->empty()) {
      eligible.push_back(i);
    }
  }
  auto take = static_cast<std::size_t>(fraction * static_cast<double>(eligible.size()));
  KeyedRng rng = KeyedRng::for_key(seed, "translate-prefix", 0);
  rng.shuffle(eligible);
  eligible.resize(take);
  std::set<std::size_t> selected(eligible.begin(), eligible.end());

  Dataset out = dataset;
  for (std::size_t i : selected) {
    InstructionRecord& record = out.records[i];
    auto entry = translations.find(record.id);
    if (entry == translations.end()) {
      throw MissingTranslation(record.id);
    }
    std::string english_input = *record.input;
    apply_intermediate(record, kTranslatePrefix, kTranslateTask, english_input);
    record.input = entry->second.text;
  }
  return out;
}

Dataset caption_transform(const Dataset& dataset, const CaptionMap& captions, bool sequential) {
  Dataset out = dataset;
  if (!sequential) {
    for (auto& record : out.records) {
      record.instruction = kCaptionBaseline;
      record.segments = {record.instruction};
      record.output_segments.reset();
    }
    return out;
  }
  for (auto& record : out.records) {
    auto entry = captions.find(record.id);
    if (entry == captions.end()) {
      throw MissingCaption(record.id);
    }
    std::string original_output = record.output;
    record.instruction = kCaptionSequential;
    record.segments = {kCaptionTask, kCaptionAnswerTask};
    record.output = entry->second + "\n" + original_output;
    record.output_segments = std::vector<std::string>{entry->second, original_output};
  }
  return out;
}

DummyTaskResult dummy_task_transform(const Dataset& dataset, DummyTask task, Gateway* gateway,
                                     const TemplateSet* templates) {
  if (task == DummyTask::paraphrase && (gateway == nullptr || templates == nullptr)) {
    throw InvalidRequest("paraphrase mode requires a gateway and templates");
  }
  DummyTaskResult result;
  result.dataset = dataset;

  if (task == DummyTask::repeat) {
    for (auto& record : result.dataset.records) {
      if (record.input && !record.input->empty()) {
        apply_intermediate(record, kRepeatPrefix, kRepeatTask, *record.input);
      }
    }
    return result;
  }

  // Paraphrases are model-generated; requests ride the batch contract and
  // per-record failures leave the record untransformed.
  std::vector<std::size_t> targets;
  std::vector<CompletionRequest> requests;
  for (std::size_t i = 0; i < result.dataset.records.size(); ++i) {
    const InstructionRecord& record = result.dataset.records[i];
    if (!record.input || record.input->empty()) {
      continue;  // input-free records remain unchanged
    }
    std::string prompt = templates->render(TemplateId::paraphrase, {{"input", *record.input}});
    targets.push_back(i);
    requests.push_back(gateway->make_request({{"user", prompt}}));
  }
  std::vector<BatchItem> replies = gateway->complete_batch(requests, gateway->max_in_flight);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    InstructionRecord& record = result.dataset.records[targets[k]];
    if (!replies[k].ok()) {
      result.failed_ids.push_back(record.id);
      continue;
    }
    apply_intermediate(record, kParaphrasePrefix, kParaphraseTask, replies[k].completion->text);
  }
  return result;
}

}  // namespace seqforge
