#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace seqforge {

// The four per-record pipeline actions. Letter mapping follows the classify
// prompt: A=decompose, B=prefix, C=suffix, D=hold.
enum class Action { decompose, prefix, suffix, hold };

char action_letter(Action action);
std::optional<Action> action_from_letter(char letter);
std::string_view action_name(Action action);
std::optional<Action> action_from_name(std::string_view name);

enum class TemplateId {
  classify,
  rewrite_decompose,
  rewrite_prefix,
  rewrite_suffix,
  respond,
  judge,
  paraphrase,
};

std::string_view template_name(TemplateId id);
std::optional<TemplateId> template_from_name(std::string_view name);

struct PromptTemplate {
  TemplateId id;
  std::string body;                  // ${name} placeholders; ${fewshot} expands internally
  std::vector<std::string> fewshot;  // exemplar blocks, included unmodified
  std::string version;               // short content digest of the resolved body
};

// The built-in template texts with optional per-file overrides from a
// directory (`<dir>/<template_name>.txt`, UTF-8, same placeholder syntax).
class TemplateSet {
 public:
  static TemplateSet builtin();
  static TemplateSet with_overrides(const std::string& dir);

  const PromptTemplate& get(TemplateId id) const;

  // Substitutes every ${name} placeholder from `bindings`; an unresolved
  // placeholder raises MissingBinding.
  std::string render(TemplateId id, const std::map<std::string, std::string>& bindings) const;

  std::map<std::string, std::string> versions() const;

 private:
  std::vector<PromptTemplate> templates_;
};

struct ActionParse {
  Action action = Action::hold;
  bool fallback = false;  // no parseable option; defaulted to hold
};

// Scans for the last `the option is: <L>` (surrounding text case-insensitive,
// letter case-sensitive, trailing punctuation tolerated). Unparseable input
// yields hold with the fallback flag set; never throws.
ActionParse parse_action(std::string_view raw);

struct NewInstructionParse {
  std::string text;
  bool truncated = false;  // no ### terminator; ran to end of text
};

// Extracts the span between the last `#New Instruction#:` marker and the
// following `###`, trimming whitespace and one layer of double quotes.
// Throws MarkerMissing when no marker is present.
NewInstructionParse parse_new_instruction(std::string_view raw);

struct JudgeVerdict {
  bool followed = false;
  int score = 0;  // 1..5

  bool operator==(const JudgeVerdict&) const = default;
};

// Matches the last `[[Yes|No, 1-5]]` (whitespace-tolerant inside the
// brackets; the single-closing-bracket form `[[x, n]` is also accepted).
// Throws MalformedJudgement when nothing matches.
JudgeVerdict parse_judgement(std::string_view raw);

}  // namespace seqforge
