#include "seqforge/evalharness.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>

#include "seqforge/errors.hpp"

namespace seqforge {

using nlohmann::json;

namespace {

std::string strip_token(std::string_view token) {
  std::size_t begin = 0;
  std::size_t end = token.size();
  while (begin < end && !std::isalnum(static_cast<unsigned char>(token[begin]))) ++begin;
  while (end > begin && !std::isalnum(static_cast<unsigned char>(token[end - 1]))) --end;
  std::string out(token.substr(begin, end - begin));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> words_of(std::string_view text) {
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
  return words;
}

bool is_interrogative(const std::string& word) {
  static const std::set<std::string> kInterrogatives = {
      "what", "why",  "how",  "when",  "where", "who",    "whom", "whose", "which",
      "is",   "are",  "was",  "were",  "am",    "do",     "does", "did",   "can",
      "could", "will", "would", "shall", "should", "may", "might", "must", "have",
      "has",  "had"};
  return kInterrogatives.count(word) > 0;
}

bool is_stopword(const std::string& word) {
  static const std::set<std::string> kStopwords = {
      "the",  "a",     "an",    "of",    "to",    "in",   "on",    "at",    "for",
      "with", "and",   "or",    "but",   "into",  "from", "by",    "as",    "this",
      "that", "these", "those", "its",   "it",    "their", "his",  "her",   "your",
      "my",   "our",   "them",  "then",  "there", "here", "each",  "every", "all",
      "any",  "some",  "both",  "about", "above", "after", "below", "between",
      "under", "over", "out",   "up",    "down",  "please", "following", "given",
      "provided", "first", "second", "next", "new", "me", "us", "you"};
  return kStopwords.count(word) > 0;
}

// Small suffix table standing in for lemmatization.
std::string lemma(std::string word) {
  if (word.size() > 4 && word.ends_with("ing")) {
    word.erase(word.size() - 3);
    return word;
  }
  if (word.size() > 3 && word.ends_with("s") && !word.ends_with("ss")) {
    word.pop_back();
  }
  return word;
}

std::vector<std::string> split_response_parts(const std::string& response,
                                              std::string_view delimiter) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    std::size_t hit = response.find(delimiter, pos);
    if (hit == std::string::npos) {
      parts.push_back(response.substr(pos));
      break;
    }
    parts.push_back(response.substr(pos, hit - pos));
    pos = hit + delimiter.size();
  }
  parts.erase(std::remove_if(parts.begin(), parts.end(),
                             [](const std::string& part) {
                               return part.find_first_not_of(" \t\r\n") == std::string::npos;
                             }),
              parts.end());
  return parts;
}

}  // namespace

std::vector<EvalRecord> load_eval_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open eval records: " + path);
  }
  std::vector<EvalRecord> records;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid eval line: ") + ex.what(), index);
    }
    EvalRecord record;
    record.id = obj.value("id", synthesize_record_id(index));
    record.instruction = obj.value("instruction", "");
    if (obj.contains("segments") && obj.at("segments").is_array()) {
      for (const auto& seg : obj.at("segments")) {
        record.segments.push_back(seg.get<std::string>());
      }
    }
    if (record.segments.empty()) {
      record.segments = {record.instruction};
    }
    record.response = obj.value("response", "");
    if (obj.contains("reference_final") && obj.at("reference_final").is_string()) {
      record.reference_final = obj.at("reference_final").get<std::string>();
    }
    if (obj.contains("reference_intermediates") && obj.at("reference_intermediates").is_array()) {
      std::vector<std::string> refs;
      for (const auto& ref : obj.at("reference_intermediates")) {
        refs.push_back(ref.get<std::string>());
      }
      record.reference_intermediates = std::move(refs);
    }
    records.push_back(std::move(record));
    ++index;
  }
  return records;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) {
    return 0;
  }
  std::vector<std::size_t> previous(b.size() + 1, 0);
  std::vector<std::size_t> current(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) {
        current[j] = previous[j - 1] + 1;
      } else {
        current[j] = std::max(previous[j], current[j - 1]);
      }
    }
    std::swap(previous, current);
  }
  return previous[b.size()];
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference,
                   const Tokenizer& tokenizer) {
  std::vector<std::string> cand = tokenizer.tokenize(candidate);
  std::vector<std::string> ref = tokenizer.tokenize(reference);
  RougeScore score;
  if (cand.empty() || ref.empty()) {
    return score;
  }
  auto lcs = static_cast<double>(lcs_length(cand, ref));
  score.precision = lcs / static_cast<double>(cand.size());
  score.recall = lcs / static_cast<double>(ref.size());
  if (score.precision + score.recall > 0.0) {
    score.f1 = 2.0 * score.precision * score.recall / (score.precision + score.recall);
  }
  return score;
}

std::string normalize_for_match(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (!out.empty() && out.back() == '.') {
    out.pop_back();
  }
  return out;
}

bool exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_for_match(prediction) == normalize_for_match(gold);
}

bool record_followed_rouge(const EvalRecord& record, const FollowParams& params,
                           const Tokenizer& tokenizer) {
  if (!record.reference_intermediates ||
      record.reference_intermediates->size() + 1 != record.segments.size()) {
    throw MissingReferences(record.id);
  }
  const auto& references = *record.reference_intermediates;
  std::vector<std::string> parts =
      split_response_parts(record.response, params.response_delimiter);
  std::size_t expected = record.segments.size();

  if (parts.size() >= expected) {
    for (std::size_t k = 0; k < references.size(); ++k) {
      if (rouge_l(parts[k], references[k], tokenizer).f1 < params.rouge_threshold) {
        return false;
      }
    }
    return true;  // split dropped blank parts, so the final part is non-empty
  }

  // Too few parts to align: check leniently against the whole response.
  if (parts.empty()) {
    return false;
  }
  for (const auto& reference : references) {
    if (rouge_l(record.response, reference, tokenizer).f1 < params.rouge_threshold) {
      return false;
    }
  }
  return true;
}

double following_rate(const std::vector<EvalRecord>& records, FollowMethod method,
                      const FollowParams& params, Gateway* judge_gateway,
                      const TemplateSet* templates) {
  if (records.empty()) {
    throw EmptyEvalSet();
  }
  std::size_t followed = 0;
  if (method == FollowMethod::rouge_threshold) {
    Tokenizer tokenizer(params.tokenizer);
    for (const auto& record : records) {
      if (record_followed_rouge(record, params, tokenizer)) {
        ++followed;
      }
    }
  } else {
    if (judge_gateway == nullptr || templates == nullptr) {
      throw InvalidRequest("judge method requires a gateway and templates");
    }
    JudgeOutcome outcome = judge_responses(records, *judge_gateway, *templates);
    for (const auto& row : outcome.rows) {
      if (row.verdict && row.verdict->followed) {
        ++followed;
      }
    }
  }
  return 100.0 * static_cast<double>(followed) / static_cast<double>(records.size());
}

JudgeOutcome judge_responses(const std::vector<EvalRecord>& records, Gateway& judge_gateway,
                             const TemplateSet& templates) {
  if (records.empty()) {
    throw EmptyEvalSet();
  }
  std::vector<CompletionRequest> requests;
  requests.reserve(records.size());
  for (const auto& record : records) {
    std::string prompt = templates.render(
        TemplateId::judge, {{"instruction", record.instruction}, {"response", record.response}});
    CompletionRequest request = judge_gateway.make_request({{"user", prompt}});
    request.temperature = 0.0;  // judging is deterministic by contract
    requests.push_back(std::move(request));
  }
  std::vector<BatchItem> results =
      judge_gateway.complete_batch(requests, judge_gateway.max_in_flight);

  JudgeOutcome outcome;
  outcome.rows.reserve(records.size());
  double score_sum = 0.0;
  std::size_t followed = 0;
  std::size_t parsed = 0;
  std::size_t errored = 0;
  std::string first_error;

  for (std::size_t i = 0; i < records.size(); ++i) {
    JudgeRow row;
    row.id = records[i].id;
    if (!results[i].ok()) {
      ++errored;
      ++outcome.aggregate.malformed;  // no verdict; excluded from the means
      if (first_error.empty()) {
        first_error = results[i].error;
      }
      row.raw = results[i].error;
      outcome.rows.push_back(std::move(row));
      continue;
    }
    row.raw = results[i].completion->text;
    try {
      row.verdict = parse_judgement(row.raw);
      ++parsed;
      score_sum += row.verdict->score;
      if (row.verdict->followed) {
        ++followed;
      }
    } catch (const MalformedJudgement&) {
      ++outcome.aggregate.malformed;
    }
    outcome.rows.push_back(std::move(row));
  }
  if (errored == records.size()) {
    throw BackendError("every judge call failed: " + first_error);
  }

  outcome.aggregate.total = records.size();
  if (parsed > 0) {
    outcome.aggregate.mean_score = score_sum / static_cast<double>(parsed);
    outcome.aggregate.follow_pct =
        100.0 * static_cast<double>(followed) / static_cast<double>(parsed);
  }
  return outcome;
}

double win_rate(const std::vector<int>& scores_a, const std::vector<int>& scores_b) {
  if (scores_a.size() != scores_b.size()) {
    throw LengthMismatch(scores_a.size(), scores_b.size());
  }
  if (scores_a.empty()) {
    throw EmptyEvalSet();
  }
  double wins = 0.0;
  for (std::size_t i = 0; i < scores_a.size(); ++i) {
    if (scores_a[i] > scores_b[i]) {
      wins += 1.0;
    } else if (scores_a[i] == scores_b[i]) {
      wins += 0.5;
    }
  }
  return 100.0 * wins / static_cast<double>(scores_a.size());
}

VerbNoun extract_verb_noun(std::string_view instruction,
                           const std::optional<ParseAnnotation>& annotation) {
  if (annotation) {
    return {annotation->verb, annotation->noun};
  }
  VerbNoun out;
  std::vector<std::string> raw_words = words_of(instruction);
  std::vector<std::string> words;
  for (const auto& word : raw_words) {
    std::string stripped = strip_token(word);
    if (!stripped.empty()) {
      words.push_back(stripped);
    }
  }
  if (words.empty() || is_interrogative(words.front())) {
    return out;  // declined
  }
  out.verb = lemma(words.front());
  for (std::size_t i = 1; i < words.size(); ++i) {
    if (!is_stopword(words[i])) {
      out.noun = words[i];
      break;
    }
  }
  return out;
}

}  // namespace seqforge
