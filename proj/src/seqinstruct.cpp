#include "seqforge/seqinstruct.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/rng.hpp"

namespace seqforge {

namespace {

constexpr std::string_view kTaskJoin = ", then ";
constexpr std::string_view kResponseDelimiter = "\n\n";

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

// The instruction minus terminal punctuation: suffix replies tend to splice
// the original in without its final period.
std::string instruction_core(std::string_view instruction) {
  std::string core = trim(instruction);
  while (!core.empty() && (core.back() == '.' || core.back() == '!' || core.back() == '?')) {
    core.pop_back();
  }
  return trim(core);
}

std::size_t find_case_insensitive(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) {
    return std::string_view::npos;
  }
  std::string hay = lowercase(haystack);
  std::string ned = lowercase(needle);
  return hay.find(ned);
}

bool ends_with_word(const std::string& text, std::string_view word) {
  if (text.size() < word.size()) {
    return false;
  }
  if (lowercase(text.substr(text.size() - word.size())) != lowercase(word)) {
    return false;
  }
  if (text.size() == word.size()) {
    return true;
  }
  char before = text[text.size() - word.size() - 1];
  return before == ' ' || before == ',' || before == ';';
}

bool starts_with_word(const std::string& text, std::string_view word) {
  if (text.size() < word.size()) {
    return false;
  }
  if (lowercase(text.substr(0, word.size())) != lowercase(word)) {
    return false;
  }
  return text.size() == word.size() ||
         std::isspace(static_cast<unsigned char>(text[word.size()])) || text[word.size()] == ',';
}

// "First, research X, then " -> "First, research X"
std::string strip_trailing_connectors(std::string text) {
  while (true) {
    text = trim(text);
    if (text.empty()) {
      return text;
    }
    if (text.back() == ',' || text.back() == ';' || text.back() == ':') {
      text.pop_back();
      continue;
    }
    bool stripped = false;
    for (std::string_view word : {"then", "and"}) {
      if (ends_with_word(text, word)) {
        text.erase(text.size() - word.size());
        stripped = true;
        break;
      }
    }
    if (!stripped) {
      return text;
    }
  }
}

// " and explain Y." -> "explain Y."
std::string strip_leading_connectors(std::string text) {
  while (true) {
    text = trim(text);
    if (text.empty()) {
      return text;
    }
    if (text.front() == ',' || text.front() == ';' || text.front() == ':' || text.front() == '.') {
      text.erase(text.begin());
      continue;
    }
    bool stripped = false;
    for (std::string_view word : {"and then", "then", "and", "next", "finally", "afterwards"}) {
      if (starts_with_word(text, word)) {
        text.erase(0, word.size());
        stripped = true;
        break;
      }
    }
    if (!stripped) {
      return text;
    }
  }
}

std::vector<std::string> split_tasks(std::string_view text) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    std::size_t hit = text.find(kTaskJoin, pos);
    if (hit == std::string_view::npos) {
      parts.push_back(trim(text.substr(pos)));
      break;
    }
    parts.push_back(trim(text.substr(pos, hit - pos)));
    pos = hit + kTaskJoin.size();
  }
  parts.erase(std::remove_if(parts.begin(), parts.end(),
                             [](const std::string& p) { return p.empty(); }),
              parts.end());
  return parts;
}

struct SegmentDerivation {
  std::vector<std::string> segments;
  bool fallback = false;
};

// Decompose re-derives the task list from the ", then " joins of the new
// instruction; prefix/suffix locate the previous instruction inside the new
// one and carve out the added task, keeping all prior segments verbatim.
SegmentDerivation derive_segments(Action action, const std::vector<std::string>& old_segments,
                                  const std::string& old_instruction,
                                  const std::string& new_instruction) {
  SegmentDerivation out;
  std::size_t expected = old_segments.size() + 1;

  if (action == Action::decompose) {
    std::vector<std::string> parts = split_tasks(new_instruction);
    if (parts.size() >= expected) {
      out.segments = std::move(parts);
    } else {
      out.segments = {new_instruction};
      out.fallback = true;
    }
    return out;
  }

  std::string core = instruction_core(old_instruction);
  std::size_t pos = find_case_insensitive(new_instruction, core);
  if (pos != std::string_view::npos) {
    if (action == Action::prefix && pos > 0) {
      std::string task = strip_trailing_connectors(new_instruction.substr(0, pos));
      if (!task.empty()) {
        out.segments.push_back(task);
        out.segments.insert(out.segments.end(), old_segments.begin(), old_segments.end());
        return out;
      }
    }
    if (action == Action::suffix) {
      std::string task = strip_leading_connectors(new_instruction.substr(pos + core.size()));
      if (!task.empty()) {
        out.segments = old_segments;
        out.segments.push_back(task);
        return out;
      }
    }
  }

  // The model rephrased the original; fall back to the ", then " structure.
  std::vector<std::string> parts = split_tasks(new_instruction);
  out.fallback = true;
  if (parts.size() >= 2) {
    if (action == Action::prefix) {
      out.segments.push_back(parts.front());
      out.segments.insert(out.segments.end(), old_segments.begin(), old_segments.end());
    } else {
      out.segments = old_segments;
      out.segments.push_back(parts.back());
    }
  } else {
    out.segments = {new_instruction};
  }
  return out;
}

TemplateId rewrite_template_for(Action action) {
  switch (action) {
    case Action::decompose:
      return TemplateId::rewrite_decompose;
    case Action::prefix:
      return TemplateId::rewrite_prefix;
    case Action::suffix:
      return TemplateId::rewrite_suffix;
    case Action::hold:
      break;
  }
  throw InvalidRequest("hold has no rewrite template");
}

const std::vector<Action>& actions_for_iteration(const PipelineConfig& config, int iteration) {
  static const std::vector<Action> kAll = {Action::decompose, Action::prefix, Action::suffix,
                                           Action::hold};
  if (config.allowed_actions.empty()) {
    return kAll;
  }
  std::size_t index =
      std::min<std::size_t>(static_cast<std::size_t>(iteration - 1), config.allowed_actions.size() - 1);
  const std::vector<Action>& pool = config.allowed_actions[index];
  if (pool.empty()) {
    throw PipelineError("allowed_actions entry for iteration " + std::to_string(iteration) +
                        " is empty");
  }
  return pool;
}

std::optional<std::vector<std::string>> try_split_response(const std::string& output,
                                                           std::size_t segment_count) {
  if (segment_count == 1) {
    return std::vector<std::string>{output};
  }
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    std::size_t hit = output.find(kResponseDelimiter, pos);
    if (hit == std::string::npos) {
      parts.push_back(output.substr(pos));
      break;
    }
    parts.push_back(output.substr(pos, hit - pos));
    pos = hit + kResponseDelimiter.size();
  }
  parts.erase(std::remove_if(parts.begin(), parts.end(),
                             [](const std::string& p) { return trim(p).empty(); }),
              parts.end());
  if (parts.size() == segment_count) {
    return parts;
  }
  return std::nullopt;
}

}  // namespace

DecideOutcome decide_action(const InstructionRecord& record, const PipelineConfig& config,
                            int iteration, Gateway& gateway, const TemplateSet& templates) {
  if (iteration < 1) {
    throw InvalidRequest("iteration must be >= 1");
  }
  DecideOutcome out;
  out.trace.record_id = record.id;
  out.trace.iteration = iteration;

  if (config.mode == PipelineMode::model_classified) {
    std::string prompt =
        templates.render(TemplateId::classify, {{"instruction", record.instruction}});
    Completion completion = gateway.complete(gateway.make_request({{"user", prompt}}));
    ActionParse parsed = parse_action(completion.text);
    out.action = parsed.action;
    out.trace.action = parsed.action;
    out.trace.action_source = ActionSource::model_classified;
    out.trace.raw_classify = completion.text;
    out.trace.fallback = parsed.fallback;
  } else {
    const std::vector<Action>& pool = actions_for_iteration(config, iteration);
    KeyedRng rng = KeyedRng::for_key(config.rng_seed, record.id, iteration, "action");
    out.action = pool[rng.uniform_below(pool.size())];
    out.trace.action = out.action;
    out.trace.action_source = ActionSource::sampled;
  }
  return out;
}

RewriteOutcome rewrite_instruction(const InstructionRecord& record, Action action,
                                   Gateway& gateway, const TemplateSet& templates) {
  if (action == Action::hold) {
    throw InvalidRequest("rewrite_instruction requires a non-hold action");
  }
  std::string prompt =
      templates.render(rewrite_template_for(action), {{"instruction", record.instruction}});
  Completion completion = gateway.complete(gateway.make_request({{"user", prompt}}));

  NewInstructionParse parsed;
  try {
    parsed = parse_new_instruction(completion.text);
  } catch (const MarkerMissing& ex) {
    throw RewriteFailed(record.id, ex.what());
  }
  if (parsed.text.empty()) {
    throw RewriteFailed(record.id, "extracted instruction is empty");
  }

  RewriteOutcome out;
  out.instruction = parsed.text;
  out.raw = completion.text;
  out.truncated = parsed.truncated;
  SegmentDerivation derived =
      derive_segments(action, record.segments, record.instruction, parsed.text);
  out.segments = std::move(derived.segments);
  out.fallback = derived.fallback;
  return out;
}

std::string regenerate_response(const std::string& instruction, Gateway& gateway,
                                const TemplateSet& templates) {
  if (instruction.empty()) {
    throw InvalidRequest("cannot generate a response for an empty instruction");
  }
  std::string system_line = templates.render(TemplateId::respond, {});
  Completion completion =
      gateway.complete(gateway.make_request({{"system", system_line}, {"user", instruction}}));
  return completion.text;
}

PipelineResult run_pipeline(const Dataset& dataset, const PipelineConfig& config,
                            Gateway& gateway, const TemplateSet& templates,
                            const TokenizerSpec& tokenizer_spec) {
  if (dataset.empty()) {
    throw PipelineError("run_pipeline requires a non-empty dataset");
  }
  if (config.iterations < 1) {
    throw PipelineError("iterations must be >= 1");
  }

  Tokenizer tokenizer(tokenizer_spec);
  PipelineResult result;
  result.dataset = dataset;

  auto snapshot_row = [&](int iteration) {
    StatsRow row;
    row.iteration = iteration;
    double input_sum = 0;
    double output_sum = 0;
    for (const auto& record : result.dataset.records) {
      input_sum += static_cast<double>(record_input_tokens(record, tokenizer));
      output_sum += static_cast<double>(tokenizer.count(record.output));
    }
    auto n = static_cast<double>(result.dataset.records.size());
    row.avg_input_tokens = input_sum / n;
    row.avg_output_tokens = output_sum / n;
    return row;
  };

  result.stats.push_back(snapshot_row(0));

  for (int iteration = 1; iteration <= config.iterations; ++iteration) {
    std::size_t failures = 0;
    std::size_t action_counts[4] = {0, 0, 0, 0};

    for (auto& record : result.dataset.records) {
      GenerationTrace trace;
      trace.record_id = record.id;
      trace.iteration = iteration;
      trace.action_source = config.mode == PipelineMode::model_classified
                                ? ActionSource::model_classified
                                : ActionSource::sampled;
      bool failed = false;
      try {
        DecideOutcome decision = decide_action(record, config, iteration, gateway, templates);
        trace = decision.trace;
        if (decision.action != Action::hold) {
          RewriteOutcome rewrite = rewrite_instruction(record, decision.action, gateway, templates);
          trace.raw_rewrite = rewrite.raw;
          trace.fallback = trace.fallback || rewrite.fallback;
          trace.truncated = trace.truncated || rewrite.truncated;

          std::string output = record.output;
          std::optional<std::vector<std::string>> output_segments;
          bool respond_now = config.regenerate_responses &&
                             (!config.respond_final_only || iteration == config.iterations);
          if (respond_now) {
            try {
              output = regenerate_response(rewrite.instruction, gateway, templates);
            } catch (const BackendError& ex) {
              throw RespondFailed(record.id, ex.what());
            }
            trace.raw_respond = output;
            output_segments = try_split_response(output, rewrite.segments.size());
          }

          record.instruction = rewrite.instruction;
          record.segments = rewrite.segments;
          record.output = std::move(output);
          record.output_segments = std::move(output_segments);
          record.iteration = iteration;
          record.trace = trace;
        }
        // Hold leaves the record untouched, down to iteration and trace.
      } catch (const Error& ex) {
        failed = true;
        trace.fallback = true;
        (void)ex;
      }
      action_counts[static_cast<int>(trace.action)]++;
      result.traces.push_back(std::move(trace));
      if (failed) {
        ++failures;
      }
    }

    result.failed_records += failures;
    auto limit = config.failure_abort_fraction * static_cast<double>(result.dataset.size());
    if (static_cast<double>(failures) > limit) {
      throw PipelineError("iteration " + std::to_string(iteration) + ": " +
                          std::to_string(failures) + " of " +
                          std::to_string(result.dataset.size()) + " records failed");
    }

    StatsRow row = snapshot_row(iteration);
    double total = static_cast<double>(result.dataset.size());
    row.pct_decompose = 100.0 * static_cast<double>(action_counts[0]) / total;
    row.pct_prefix = 100.0 * static_cast<double>(action_counts[1]) / total;
    row.pct_suffix = 100.0 * static_cast<double>(action_counts[2]) / total;
    row.pct_hold = 100.0 * static_cast<double>(action_counts[3]) / total;
    result.stats.push_back(row);
  }

  return result;
}

Dataset regenerate_dataset_responses(const Dataset& dataset, Gateway& gateway,
                                     const TemplateSet& templates) {
  Dataset out = dataset;
  for (auto& record : out.records) {
    record.output = regenerate_response(record.instruction, gateway, templates);
    record.output_segments = try_split_response(record.output, record.segments.size());
  }
  return out;
}

void save_traces(const std::vector<GenerationTrace>& traces, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write traces: " + path);
  }
  for (const auto& trace : traces) {
    nlohmann::json obj;
    obj["record_id"] = trace.record_id;
    obj["iteration"] = trace.iteration;
    obj["action"] = std::string(action_name(trace.action));
    obj["action_source"] = std::string(action_source_name(trace.action_source));
    if (trace.raw_classify) obj["raw_classify"] = *trace.raw_classify;
    if (trace.raw_rewrite) obj["raw_rewrite"] = *trace.raw_rewrite;
    if (trace.raw_respond) obj["raw_respond"] = *trace.raw_respond;
    obj["fallback"] = trace.fallback;
    obj["truncated"] = trace.truncated;
    out << obj.dump() << '\n';
  }
}

}  // namespace seqforge
