#include <doctest.h>

#include <string>
#include <vector>

#include "seqforge/errors.hpp"
#include "seqforge/prompts.hpp"
#include "seqforge/rng.hpp"
#include "test_util.hpp"

using namespace seqforge;

TEST_CASE("action letter mapping") {
  CHECK(action_letter(Action::decompose) == 'A');
  CHECK(action_letter(Action::prefix) == 'B');
  CHECK(action_letter(Action::suffix) == 'C');
  CHECK(action_letter(Action::hold) == 'D');
  for (Action a : {Action::decompose, Action::prefix, Action::suffix, Action::hold}) {
    CHECK(action_from_letter(action_letter(a)) == a);
    CHECK(action_from_name(action_name(a)) == a);
  }
  CHECK_FALSE(action_from_letter('E').has_value());
  CHECK_FALSE(action_from_letter('a').has_value());
}

TEST_CASE("classify template renders instruction and step-by-step tail") {
  TemplateSet templates = TemplateSet::builtin();
  std::string text =
      templates.render(TemplateId::classify, {{"instruction", "Describe the structure of an atom."}});
  CHECK(text.find("The instruction is: Describe the structure of an atom.") != std::string::npos);
  CHECK(text.find("A. Decompose it into two tasks.") != std::string::npos);
  CHECK(text.find("D. Keep as original version.") != std::string::npos);
  // Ends with the exact cue, trailing space included.
  std::string tail = "Let's think step by step. ";
  REQUIRE(text.size() >= tail.size());
  CHECK(text.substr(text.size() - tail.size()) == tail);
}

TEST_CASE("judge template carries both blocks") {
  TemplateSet templates = TemplateSet::builtin();
  std::string text =
      templates.render(TemplateId::judge, {{"instruction", "Q"}, {"response", "A"}});
  CHECK(text.find("[User Instruction]") != std::string::npos);
  CHECK(text.find("[Response]") != std::string::npos);
  CHECK(text.find("\nQ\n") != std::string::npos);
  CHECK(text.find("[[No, 2]]") != std::string::npos);
}

TEST_CASE("render with missing binding fails") {
  TemplateSet templates = TemplateSet::builtin();
  CHECK_THROWS_AS(templates.render(TemplateId::classify, {}), MissingBinding);
  CHECK_THROWS_AS(templates.render(TemplateId::judge, {{"instruction", "Q"}}), MissingBinding);
}

TEST_CASE("template overrides replace the body") {
  test::TempDir dir;
  test::write_file(dir.file("classify.txt"), "pick for ${instruction}");
  TemplateSet templates = TemplateSet::with_overrides(dir.path());
  CHECK(templates.render(TemplateId::classify, {{"instruction", "X"}}) == "pick for X");
  // Untouched templates keep the built-in text.
  CHECK(templates.render(TemplateId::respond, {}) ==
        TemplateSet::builtin().render(TemplateId::respond, {}));
  CHECK(templates.versions().at("classify") != TemplateSet::builtin().versions().at("classify"));
}

TEST_CASE("parse_action golden cases") {
  CHECK(parse_action("...So the option is: C.").action == Action::suffix);
  CHECK_FALSE(parse_action("...So the option is: C.").fallback);
  CHECK(parse_action("So the option is: D").action == Action::hold);
  CHECK_FALSE(parse_action("So the option is: D").fallback);

  ActionParse fallback = parse_action("no option stated");
  CHECK(fallback.action == Action::hold);
  CHECK(fallback.fallback);
}

TEST_CASE("parse_action takes the last stated option") {
  CHECK(parse_action("the option is: A ... but actually the option is: B!").action ==
        Action::prefix);
  CHECK(parse_action("THE OPTION IS: a").fallback);  // lowercase letter is not an option
  CHECK(parse_action("the option is: Delta").fallback);
}

TEST_CASE("parse_action format inverse") {
  for (Action a : {Action::decompose, Action::prefix, Action::suffix, Action::hold}) {
    std::string raw = std::string("So the option is: ") + action_letter(a);
    ActionParse parsed = parse_action(raw);
    CHECK(parsed.action == a);
    CHECK_FALSE(parsed.fallback);
  }
}

TEST_CASE("parse_new_instruction extracts the quoted span") {
  std::string raw =
      "#New Instruction#: \"Describe the basic components of an atom, then explain how the "
      "components are organized and how they interact.\"###";
  NewInstructionParse parsed = parse_new_instruction(raw);
  CHECK(parsed.text ==
        "Describe the basic components of an atom, then explain how the components are organized "
        "and how they interact.");
  CHECK_FALSE(parsed.truncated);
}

TEST_CASE("parse_new_instruction without terminator sets truncated") {
  NewInstructionParse parsed = parse_new_instruction("#New Instruction#: \"Do the thing.\"");
  CHECK(parsed.text == "Do the thing.");
  CHECK(parsed.truncated);
}

TEST_CASE("parse_new_instruction needs the marker") {
  CHECK_THROWS_AS(parse_new_instruction("no marker anywhere"), MarkerMissing);
}

TEST_CASE("parse_new_instruction uses the last marker") {
  std::string raw =
      "#New Instruction#: \"first draft\"###\nOn reflection.\n#New Instruction#: \"final\"###";
  CHECK(parse_new_instruction(raw).text == "final");
}

TEST_CASE("parse_new_instruction is idempotent under re-wrapping") {
  KeyedRng rng = KeyedRng::for_key(11, "idempotent", 0);
  for (int i = 0; i < 200; ++i) {
    std::string inner = test::join_tokens(test::random_tokens(rng, 8));
    std::string once = parse_new_instruction("#New Instruction#: \"" + inner + "\"###").text;
    std::string twice = parse_new_instruction("#New Instruction#: \"" + once + "\"###").text;
    CHECK(twice == once);
  }
}

TEST_CASE("parse_judgement golden cases") {
  CHECK(parse_judgement("[[No, 2]]") == JudgeVerdict{false, 2});
  CHECK(parse_judgement("rationale text... [[Yes, 5]]") == JudgeVerdict{true, 5});
  CHECK_THROWS_AS(parse_judgement("[[Maybe, 9]]"), MalformedJudgement);
  CHECK_THROWS_AS(parse_judgement("[[Yes, 9]]"), MalformedJudgement);
  CHECK_THROWS_AS(parse_judgement("[[Yes, 0]]"), MalformedJudgement);
  CHECK_THROWS_AS(parse_judgement("no verdict at all"), MalformedJudgement);
}

TEST_CASE("parse_judgement tolerates the single-bracket typo and spacing") {
  CHECK(parse_judgement("[[No, 2]") == JudgeVerdict{false, 2});
  CHECK(parse_judgement("[[ Yes ,  4 ]]") == JudgeVerdict{true, 4});
  CHECK(parse_judgement("[[yes, 3]]") == JudgeVerdict{true, 3});
  CHECK(parse_judgement("[[No, 1]] ... [[Yes, 4]]") == JudgeVerdict{true, 4});
}

TEST_CASE("parse_judgement property: accepts exactly the grammar") {
  KeyedRng rng = KeyedRng::for_key(23, "judgement-grammar", 0);
  int accepted = 0;
  int rejected = 0;
  for (int i = 0; i < 500; ++i) {
    bool make_valid = rng.uniform_below(2) == 0;
    std::string word;
    int score;
    if (make_valid) {
      word = rng.uniform_below(2) == 0 ? "Yes" : "No";
      score = 1 + static_cast<int>(rng.uniform_below(5));
    } else {
      // Near-misses: bad word or out-of-range score (never both valid).
      if (rng.uniform_below(2) == 0) {
        static const char* kBadWords[] = {"Maybe", "Sure", "Nope", "Yess", "N0"};
        word = kBadWords[rng.uniform_below(5)];
        score = 1 + static_cast<int>(rng.uniform_below(5));
      } else {
        word = rng.uniform_below(2) == 0 ? "Yes" : "No";
        score = rng.uniform_below(2) == 0 ? 0 : 6 + static_cast<int>(rng.uniform_below(90));
      }
    }
    std::string raw = "text before [[" + word + ", " + std::to_string(score) + "]] after";
    if (make_valid) {
      JudgeVerdict verdict = parse_judgement(raw);
      CHECK(verdict.followed == (word == "Yes"));
      CHECK(verdict.score == score);
      ++accepted;
    } else {
      CHECK_THROWS_AS(parse_judgement(raw), MalformedJudgement);
      ++rejected;
    }
  }
  CHECK(accepted > 0);
  CHECK(rejected > 0);
}
