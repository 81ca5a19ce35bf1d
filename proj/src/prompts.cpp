#include "seqforge/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "seqforge/errors.hpp"
#include "seqforge/hash.hpp"

namespace seqforge {
namespace {

constexpr const char* kClassifyBody =
    "Given the original instruction, you should propose a new instruction based on it by doing "
    "one of the following things:\n"
    "A. Decompose it into two tasks.\n"
    "B. Add a prefix task.\n"
    "C. Add a suffix task.\n"
    "D. Keep as original version. (Choose this if the original instruction is already "
    "sufficient)\n"
    "You should decide which option is suitable for the input instruction.\n"
    "\n"
    "# Few shot examples\n"
    "${fewshot}\n"
    "\n"
    "The instruction is: ${instruction}\n"
    "\n"
    "Let's think step by step. ";

constexpr const char* kClassifyExemplar =
    "The instruction is: Describe the structure of an atom.\n"
    "\n"
    "Let's think step by step. For the given instruction, a suitable adaptation is to add a "
    "suffix task. This would deepen the user's understanding by applying the knowledge in a "
    "practical context. New instruction: \"Describe the structure of an atom and explain how "
    "this structure determines its chemical properties.\"\n"
    "This modification (Option C) not only covers the original request to describe the atom's "
    "structure but also extends the learning by connecting atomic structure to chemical "
    "properties, making the explanation more comprehensive and applicable.\n"
    "So the option is: C.";

// Shared frame of the three rewrite templates; ${objective} and ${task} are
// resolved at construction time, ${instruction} and ${fewshot} at render time.
constexpr const char* kRewriteFrame =
    "${objective}\n"
    "Adding \"familiarize\", \"read\" or \"understand\" the original given information is not "
    "counted as a valid prefix task.\n"
    "The response to the new instruction should be the same or similar to the original "
    "instruction, including the format. The added instruction should have its own explicit "
    "response, so something like \"reading\", \"familiarizing\", \"repeating\", \"analyzing\" "
    "or \"understanding\" the original instruction is not considered a good choice.\n"
    "Your rewriting cannot omit the non-text parts such as the table and code in \"#Given "
    "Prompt#:\", and should only modify the instruction part and keep all the key details such "
    "as options, hypothesis and questions.\n"
    "Provide your explanation before having the final instruction by thinking step by step.\n"
    "You must generate your new instruction with prefix \"#New Instruction#: \" and end your "
    "answer with \"###\".\n"
    "\n"
    "# Few shot examples\n"
    "${fewshot}\n"
    "\n"
    "#Original Instruction#: \"${instruction}\"\n"
    "\n"
    "${task} Let's think step by step.";

constexpr const char* kDecomposeObjective =
    "Your objective is to decompose the given instruction (#Original Instruction#) into two "
    "tasks to form a sequential related instruction (#New Instruction#).";
constexpr const char* kDecomposeTask =
    "Your task is to decompose the instruction into two sequential instructions that will "
    "eventually lead to the answer to the original instructions.";

constexpr const char* kPrefixObjective =
    "Your objective is to add a prefix task to the given instruction (#Original Instruction#) "
    "to form a sequential related instruction (#New Instruction#).";
constexpr const char* kPrefixTask =
    "Your task is to add a prefix task to the instruction to form a sequence of instructions "
    "that will eventually lead to the answer to the original instructions.";

constexpr const char* kSuffixObjective =
    "Your objective is to add a suffix task to the given instruction (#Original Instruction#) "
    "to form a sequential related instruction (#New Instruction#).";
constexpr const char* kSuffixTask =
    "Your task is to add a suffix task to the instruction to form a sequence of instructions "
    "that will eventually lead to the answer to the original instructions.";

constexpr const char* kDecomposeExemplar =
    "#Original Instruction#: \"Describe the structure of an atom.\"\n"
    "\n"
    "Your task is to decompose the instruction into two sequential instructions that will "
    "eventually lead to the answer to the original instructions. Let's think step by step. To "
    "effectively describe the structure of an atom, we can break down the explanation into two "
    "main tasks or steps. Here's a logical way to organize it. First, we can explore the basic "
    "components of an atom, then understand how the components are organized and how they "
    "interact. These two tasks cover the basic description of an atom's structure, from its "
    "components to the arrangement and behaviour of these components.\n"
    "#New Instruction#: \"Describe the basic components of an atom, then explain how the "
    "components are organized and how they interact.\"###";

constexpr const char* kPrefixExemplar =
    "#Original Instruction#: \"Describe the structure of an atom.\"\n"
    "\n"
    "Your task is to add a prefix task to the instruction to form a sequence of instructions "
    "that will eventually lead to the answer to the original instructions. Let's think step by "
    "step. Before describing the structure of an atom, it helps to establish what the atom is "
    "made of. A preceding task listing the subatomic particles gives the description a "
    "foundation to build on and has its own explicit answer, so it is a valid prefix task.\n"
    "#New Instruction#: \"List the subatomic particles that make up an atom, then describe the "
    "structure of an atom.\"###";

constexpr const char* kSuffixExemplar =
    "#Original Instruction#: \"Describe the structure of an atom.\"\n"
    "\n"
    "Your task is to add a suffix task to the instruction to form a sequence of instructions "
    "that will eventually lead to the answer to the original instructions. Let's think step by "
    "step. Describing the structure of an atom naturally invites a follow-up task that applies "
    "the description. Asking how this structure determines chemical properties extends the "
    "original request while keeping its format and intent, and it has its own explicit "
    "response.\n"
    "#New Instruction#: \"Describe the structure of an atom and explain how this structure "
    "determines its chemical properties.\"###";

constexpr const char* kRespondBody =
    "You are a helpful assistant. Complete every task in the instruction, in order.";

constexpr const char* kJudgeBody =
    "Please act as an impartial judge and evaluate a response to a user instruction displayed "
    "below. Your evaluation should consider two factors: 1) whether the response fulfilled all "
    "the questions or requests in the instruction, and 2) the response's overall quality such "
    "as helpfulness, relevance, accuracy, depth, creativity, and level of detail. Please first "
    "judge whether all questions have been answered by responding with a \"Yes\" or \"No\" and "
    "then rate the response on a scale of 1 to 5, using this format: \"[[answered, rating]\". "
    "For example: \"[[No, 2]]\".\n"
    "\n"
    "[User Instruction]\n"
    "${instruction}\n"
    "\n"
    "[Response]\n"
    "${response}";

constexpr const char* kParaphraseBody =
    "Paraphrase the following text. Keep the meaning and every detail intact, change the "
    "wording, and respond with the paraphrase only.\n"
    "\n"
    "${input}";

std::string substitute_once(std::string_view body,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(body.size());
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t open = body.find("${", pos);
    if (open == std::string_view::npos) {
      out.append(body.substr(pos));
      break;
    }
    out.append(body.substr(pos, open - pos));
    std::size_t close = body.find('}', open + 2);
    if (close == std::string_view::npos) {
      out.append(body.substr(open));
      break;
    }
    std::string name(body.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end()) {
      throw MissingBinding(name);
    }
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

std::string join_fewshot(const std::vector<std::string>& fewshot) {
  std::string joined;
  for (std::size_t i = 0; i < fewshot.size(); ++i) {
    if (i > 0) {
      joined.append("\n\n");
    }
    joined.append(fewshot[i]);
  }
  return joined;
}

PromptTemplate make_template(TemplateId id, std::string body, std::vector<std::string> fewshot) {
  PromptTemplate t;
  t.id = id;
  t.body = std::move(body);
  t.fewshot = std::move(fewshot);
  std::string material = t.body;
  for (const auto& shot : t.fewshot) {
    material.push_back('\x1e');
    material.append(shot);
  }
  t.version = sha256_hex(material).substr(0, 12);
  return t;
}

std::string rewrite_body(const char* objective, const char* task) {
  return substitute_once(kRewriteFrame,
                         {{"objective", objective},
                          {"task", task},
                          {"fewshot", "${fewshot}"},
                          {"instruction", "${instruction}"}});
}

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) {
    ++begin;
  }
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) {
    --end;
  }
  return std::string(text.substr(begin, end - begin));
}

}  // namespace

char action_letter(Action action) {
  switch (action) {
    case Action::decompose:
      return 'A';
    case Action::prefix:
      return 'B';
    case Action::suffix:
      return 'C';
    case Action::hold:
      return 'D';
  }
  return 'D';
}

std::optional<Action> action_from_letter(char letter) {
  switch (letter) {
    case 'A':
      return Action::decompose;
    case 'B':
      return Action::prefix;
    case 'C':
      return Action::suffix;
    case 'D':
      return Action::hold;
    default:
      return std::nullopt;
  }
}

std::string_view action_name(Action action) {
  switch (action) {
    case Action::decompose:
      return "decompose";
    case Action::prefix:
      return "prefix";
    case Action::suffix:
      return "suffix";
    case Action::hold:
      return "hold";
  }
  return "hold";
}

std::optional<Action> action_from_name(std::string_view name) {
  if (name == "decompose") return Action::decompose;
  if (name == "prefix") return Action::prefix;
  if (name == "suffix") return Action::suffix;
  if (name == "hold") return Action::hold;
  return std::nullopt;
}

std::string_view template_name(TemplateId id) {
  switch (id) {
    case TemplateId::classify:
      return "classify";
    case TemplateId::rewrite_decompose:
      return "rewrite_decompose";
    case TemplateId::rewrite_prefix:
      return "rewrite_prefix";
    case TemplateId::rewrite_suffix:
      return "rewrite_suffix";
    case TemplateId::respond:
      return "respond";
    case TemplateId::judge:
      return "judge";
    case TemplateId::paraphrase:
      return "paraphrase";
  }
  return "classify";
}

std::optional<TemplateId> template_from_name(std::string_view name) {
  if (name == "classify") return TemplateId::classify;
  if (name == "rewrite_decompose") return TemplateId::rewrite_decompose;
  if (name == "rewrite_prefix") return TemplateId::rewrite_prefix;
  if (name == "rewrite_suffix") return TemplateId::rewrite_suffix;
  if (name == "respond") return TemplateId::respond;
  if (name == "judge") return TemplateId::judge;
  if (name == "paraphrase") return TemplateId::paraphrase;
  return std::nullopt;
}

TemplateSet TemplateSet::builtin() {
  TemplateSet set;
  set.templates_.push_back(
      make_template(TemplateId::classify, kClassifyBody, {kClassifyExemplar}));
  set.templates_.push_back(make_template(TemplateId::rewrite_decompose,
                                         rewrite_body(kDecomposeObjective, kDecomposeTask),
                                         {kDecomposeExemplar}));
  set.templates_.push_back(make_template(
      TemplateId::rewrite_prefix, rewrite_body(kPrefixObjective, kPrefixTask), {kPrefixExemplar}));
  set.templates_.push_back(make_template(
      TemplateId::rewrite_suffix, rewrite_body(kSuffixObjective, kSuffixTask), {kSuffixExemplar}));
  set.templates_.push_back(make_template(TemplateId::respond, kRespondBody, {}));
  set.templates_.push_back(make_template(TemplateId::judge, kJudgeBody, {}));
  set.templates_.push_back(make_template(TemplateId::paraphrase, kParaphraseBody, {}));
  return set;
}

TemplateSet TemplateSet::with_overrides(const std::string& dir) {
  TemplateSet set = builtin();
  for (auto& t : set.templates_) {
    std::filesystem::path path =
        std::filesystem::path(dir) / (std::string(template_name(t.id)) + ".txt");
    if (!std::filesystem::exists(path)) {
      continue;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw IoError("cannot read template override: " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    t = make_template(t.id, buffer.str(), {});
  }
  return set;
}

const PromptTemplate& TemplateSet::get(TemplateId id) const {
  for (const auto& t : templates_) {
    if (t.id == id) {
      return t;
    }
  }
  throw UnknownTemplate(std::string(template_name(id)));
}

std::string TemplateSet::render(TemplateId id,
                                const std::map<std::string, std::string>& bindings) const {
  const PromptTemplate& t = get(id);
  std::map<std::string, std::string> values = bindings;
  values["fewshot"] = join_fewshot(t.fewshot);
  return substitute_once(t.body, values);
}

std::map<std::string, std::string> TemplateSet::versions() const {
  std::map<std::string, std::string> out;
  for (const auto& t : templates_) {
    out[std::string(template_name(t.id))] = t.version;
  }
  return out;
}

ActionParse parse_action(std::string_view raw) {
  static const std::string kNeedle = "the option is";
  std::string lowered = lowercase(raw);

  std::optional<Action> last;
  std::size_t pos = 0;
  while ((pos = lowered.find(kNeedle, pos)) != std::string::npos) {
    std::size_t i = pos + kNeedle.size();
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
    if (i < raw.size() && raw[i] == ':') {
      ++i;
      while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
      if (i < raw.size()) {
        bool boundary =
            i + 1 >= raw.size() || !std::isalnum(static_cast<unsigned char>(raw[i + 1]));
        if (boundary) {
          if (auto action = action_from_letter(raw[i])) {
            last = *action;
          }
        }
      }
    }
    pos += kNeedle.size();
  }

  if (last) {
    return {*last, false};
  }
  return {Action::hold, true};
}

NewInstructionParse parse_new_instruction(std::string_view raw) {
  static const std::string kMarker = "#New Instruction#:";
  std::size_t marker = raw.rfind(kMarker);
  if (marker == std::string_view::npos) {
    throw MarkerMissing();
  }
  std::size_t begin = marker + kMarker.size();
  std::size_t terminator = raw.find("###", begin);

  NewInstructionParse out;
  std::string_view span;
  if (terminator == std::string_view::npos) {
    span = raw.substr(begin);
    out.truncated = true;
  } else {
    span = raw.substr(begin, terminator - begin);
  }
  std::string text = trim(span);
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    text = text.substr(1, text.size() - 2);
  }
  out.text = std::move(text);
  return out;
}

JudgeVerdict parse_judgement(std::string_view raw) {
  static const std::regex kPattern(R"(\[\[\s*(yes|no)\s*,\s*([0-9]{1,3})\s*\]\]?)",
                                   std::regex::icase);
  std::optional<JudgeVerdict> last;
  auto begin = std::cregex_iterator(raw.data(), raw.data() + raw.size(), kPattern);
  for (auto it = begin; it != std::cregex_iterator(); ++it) {
    int score = std::stoi((*it)[2].str());
    if (score < 1 || score > 5) {
      continue;
    }
    JudgeVerdict verdict;
    verdict.followed = lowercase((*it)[1].str()) == "yes";
    verdict.score = score;
    last = verdict;
  }
  if (!last) {
    throw MalformedJudgement("no [[Yes|No, 1-5]] verdict in judge output");
  }
  return *last;
}

}  // namespace seqforge
