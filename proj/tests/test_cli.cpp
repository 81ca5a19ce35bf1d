#include <doctest.h>

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqforge/cli.hpp"
#include "seqforge/config.hpp"
#include "seqforge/corpus.hpp"
#include "seqforge/errors.hpp"
#include "test_util.hpp"

using namespace seqforge;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  int code = run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

Dataset toy_dataset(std::size_t n) {
  Dataset dataset;
  for (std::size_t i = 0; i < n; ++i) {
    InstructionRecord record;
    record.id = synthesize_record_id(i);
    record.instruction = "Do task " + std::to_string(i) + ".";
    record.segments = {record.instruction};
    record.output = "Result " + std::to_string(i) + ".";
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

// One scripted reply per line, as bare JSON strings.
void write_script(const std::string& path, const std::vector<std::string>& replies) {
  std::string content;
  for (const auto& reply : replies) {
    content += nlohmann::json(reply).dump() + "\n";
  }
  test::write_file(path, content);
}

std::vector<std::string> suffix_replies(const Dataset& dataset, int iterations) {
  std::vector<std::string> replies;
  std::map<std::string, std::string> current;
  for (const auto& record : dataset.records) current[record.id] = record.instruction;
  for (int t = 1; t <= iterations; ++t) {
    for (const auto& record : dataset.records) {
      std::string core = current[record.id];
      if (!core.empty() && core.back() == '.') core.pop_back();
      std::string next = core + " and then verify step " + std::to_string(t) + ".";
      replies.push_back("#New Instruction#: \"" + next + "\"###");
      replies.push_back("answer for " + record.id + " at " + std::to_string(t));
      current[record.id] = next;
    }
  }
  return replies;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run({}).code == 1);
  CHECK(run({"no-such-subcommand"}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"augment"}).code == 1);  // missing required options
}

TEST_CASE("runtime errors exit 2") {
  CliResult result = run({"stats", "--in", "/nonexistent/nope.jsonl"});
  CHECK(result.code == 2);
  CHECK(result.err.find("error:") != std::string::npos);
}

TEST_CASE("stats prints the table-layout csv on stdout") {
  test::TempDir dir;
  save_dataset(toy_dataset(3), dir.file("data.jsonl"), DatasetFormat::jsonl);
  CliResult result = run({"stats", "--in", dir.file("data.jsonl"), "--tokenizer", "whitespace"});
  CHECK(result.code == 0);
  CHECK(result.out.rfind("iteration,avg_input_tokens,avg_output_tokens,pct_decompose,"
                         "pct_prefix,pct_suffix,pct_hold\n", 0) == 0);
  CHECK(result.out.find("\n0,3,2,,,,\n") != std::string::npos);
}

TEST_CASE("stats verb-noun mode counts instruction heads") {
  test::TempDir dir;
  Dataset dataset = toy_dataset(0);
  InstructionRecord a;
  a.id = "a";
  a.instruction = "Describe the structure of an atom.";
  a.segments = {a.instruction};
  a.output = "o";
  InstructionRecord b = a;
  b.id = "b";
  InstructionRecord c = a;
  c.id = "c";
  c.instruction = "Why is the sky blue?";
  c.segments = {c.instruction};
  dataset.records = {a, b, c};
  save_dataset(dataset, dir.file("vn.jsonl"), DatasetFormat::jsonl);

  CliResult result = run({"stats", "--in", dir.file("vn.jsonl"), "--verb-nouns"});
  CHECK(result.code == 0);
  CHECK(result.out.find("verb,noun,count\n") == 0);
  CHECK(result.out.find("describe,structure,2") != std::string::npos);
}

TEST_CASE("augment run twice is byte-identical including manifests") {
  test::TempDir dir_a;
  test::TempDir dir_b;
  Dataset dataset = toy_dataset(20);

  auto run_in = [&](const test::TempDir& dir) {
    save_dataset(dataset, dir.file("in.jsonl"), DatasetFormat::jsonl);
    write_script(dir.file("script.jsonl"), suffix_replies(dataset, 2));
    CliResult result = run({"augment", "--in", dir.file("in.jsonl"), "--out",
                            dir.file("out.jsonl"), "--iterations", "2", "--mode", "sampled",
                            "--actions", "suffix", "--seed", "7", "--backend", "scripted",
                            "--script", dir.file("script.jsonl"), "--stats",
                            dir.file("stats.csv")});
    REQUIRE(result.code == 0);
  };
  run_in(dir_a);
  run_in(dir_b);

  CHECK(test::read_file(dir_a.file("out.jsonl")) == test::read_file(dir_b.file("out.jsonl")));
  CHECK(test::read_file(dir_a.file("out.jsonl.manifest.json")) ==
        test::read_file(dir_b.file("out.jsonl.manifest.json")));
  CHECK(test::read_file(dir_a.file("stats.csv")) == test::read_file(dir_b.file("stats.csv")));

  Dataset out = load_dataset(dir_a.file("out.jsonl"), DatasetFormat::jsonl);
  CHECK(out.size() == 20);

  // Manifest carries digests for inputs and outputs.
  nlohmann::json manifest =
      nlohmann::json::parse(test::read_file(dir_a.file("out.jsonl.manifest.json")));
  CHECK(manifest.at("command") == "augment");
  CHECK(manifest.at("inputs").contains("in.jsonl"));
  CHECK(manifest.at("outputs").contains("out.jsonl"));
  CHECK(manifest.at("seeds").at("seed") == "7");
}

TEST_CASE("augment with an all-hold script reproduces the input bytes") {
  test::TempDir dir;
  Dataset dataset = toy_dataset(5);
  save_dataset(dataset, dir.file("in.jsonl"), DatasetFormat::jsonl);
  write_script(dir.file("script.jsonl"), std::vector<std::string>(10, "So the option is: D"));

  CliResult result =
      run({"augment", "--in", dir.file("in.jsonl"), "--out", dir.file("out.jsonl"),
           "--iterations", "2", "--mode", "model", "--backend", "scripted", "--script",
           dir.file("script.jsonl")});
  REQUIRE(result.code == 0);
  CHECK(test::read_file(dir.file("out.jsonl")) == test::read_file(dir.file("in.jsonl")));
}

TEST_CASE("manual repeat via cli") {
  test::TempDir dir;
  Dataset dataset;
  InstructionRecord record;
  record.id = "r0";
  record.instruction = "Answer the question.";
  record.segments = {record.instruction};
  record.input = "Why is the sky blue?";
  record.output = "Rayleigh scattering.";
  dataset.records.push_back(record);
  save_dataset(dataset, dir.file("in.jsonl"), DatasetFormat::jsonl);

  CliResult result = run({"manual", "repeat", "--in", dir.file("in.jsonl"), "--out",
                          dir.file("out.jsonl")});
  REQUIRE(result.code == 0);
  Dataset out = load_dataset(dir.file("out.jsonl"), DatasetFormat::jsonl);
  CHECK(out.records[0].instruction == "First repeat the input, then answer the question.");
  CHECK(out.records[0].output == "Why is the sky blue?\nRayleigh scattering.");
}

TEST_CASE("ablate split and multi via cli") {
  test::TempDir dir;
  Dataset dataset;
  InstructionRecord record;
  record.id = "s0";
  record.segments = {"Do A", "do B"};
  record.instruction = compose_instruction(record.segments);
  record.output = "answer A\n\nanswer B";
  record.output_segments = std::vector<std::string>{"answer A", "answer B"};
  dataset.records.push_back(record);
  save_dataset(dataset, dir.file("in.jsonl"), DatasetFormat::jsonl);

  CliResult split = run({"ablate", "split", "--in", dir.file("in.jsonl"), "--out",
                         dir.file("split.jsonl")});
  REQUIRE(split.code == 0);
  Dataset split_out = load_dataset(dir.file("split.jsonl"), DatasetFormat::jsonl);
  CHECK(split_out.size() == 2);

  CliResult multi = run({"ablate", "multi", "--in", dir.file("in.jsonl"), "--out",
                         dir.file("multi.jsonl")});
  REQUIRE(multi.code == 0);
  std::string content = test::read_file(dir.file("multi.jsonl"));
  CHECK(content.find("\"role\":\"user\"") != std::string::npos);
  CHECK(content.find("\"role\":\"assistant\"") != std::string::npos);
}

TEST_CASE("ablate budget and match via cli") {
  test::TempDir dir;
  Dataset dataset = toy_dataset(6);
  save_dataset(dataset, dir.file("in.jsonl"), DatasetFormat::jsonl);

  CliResult budget = run({"ablate", "budget", "--in", dir.file("in.jsonl"), "--out",
                          dir.file("budget.jsonl"), "--budget", "6", "--seed", "3"});
  REQUIRE(budget.code == 0);
  Dataset out = load_dataset(dir.file("budget.jsonl"), DatasetFormat::jsonl);
  CHECK(out.size() == 3);  // outputs are 2 tokens each, so 3 reach the budget of 6

  CliResult match = run({"ablate", "match", "--it", dir.file("in.jsonl"), "--sit",
                         dir.file("in.jsonl"), "--out-it", dir.file("match-it.jsonl"),
                         "--out-sit", dir.file("match-sit.jsonl")});
  REQUIRE(match.code == 0);
  CHECK(load_dataset(dir.file("match-it.jsonl"), DatasetFormat::jsonl).size() == 6);
}

TEST_CASE("build-bench via cli writes benchmark and snapshots") {
  test::TempDir dir;
  Dataset seeds = toy_dataset(10);
  save_dataset(seeds, dir.file("seed.jsonl"), DatasetFormat::jsonl);

  // Suffix-only pools make scripted replies easy to precompute.
  std::vector<std::string> replies;
  std::map<std::string, std::string> current;
  for (const auto& record : seeds.records) current[record.id] = record.instruction;
  for (int t = 1; t <= 2; ++t) {
    for (const auto& record : seeds.records) {
      std::string core = current[record.id];
      if (!core.empty() && core.back() == '.') core.pop_back();
      std::string next = core + " and then extend " + std::to_string(t) + ".";
      replies.push_back("#New Instruction#: \"" + next + "\"###");
      current[record.id] = next;
    }
  }
  write_script(dir.file("script.jsonl"), replies);

  CliResult result =
      run({"build-bench", "--seed", dir.file("seed.jsonl"), "--out", dir.file("bench.jsonl"),
           "--iterations", "2", "--ratios", "0.5,0.5", "--first-actions", "suffix",
           "--later-actions", "suffix", "--rng-seed", "11", "--backend", "scripted", "--script",
           dir.file("script.jsonl"), "--snapshots", dir.path() + "/snaps"});
  REQUIRE(result.code == 0);

  std::string bench = test::read_file(dir.file("bench.jsonl"));
  CHECK(std::count(bench.begin(), bench.end(), '\n') == 10);
  CHECK(bench.find("\"iteration_depth\":1") != std::string::npos);
  CHECK(bench.find("\"iteration_depth\":2") != std::string::npos);
  CHECK(test::read_file(dir.path() + "/snaps/snapshot-it1.jsonl").size() > 0);
  CHECK(test::read_file(dir.path() + "/snaps/snapshot-it2.jsonl").size() > 0);
}

TEST_CASE("eval via cli with a scripted judge") {
  test::TempDir dir;
  std::string records =
      R"({"id":"e1","instruction":"Do A, then do B.","segments":["Do A","do B"],"response":"part one\n\npart two","reference_final":"part one part two","reference_intermediates":["part one"]})"
      "\n"
      R"({"id":"e2","instruction":"Do C.","segments":["Do C"],"response":"nope","reference_final":"yes","reference_intermediates":[]})"
      "\n";
  test::write_file(dir.file("records.jsonl"), records);
  write_script(dir.file("judge.jsonl"), {"[[Yes, 5]]", "[[No, 2]]"});

  CliResult result = run({"eval", "--records", dir.file("records.jsonl"), "--judge",
                          "gateway:judge", "--backend", "scripted", "--script",
                          dir.file("judge.jsonl"), "--report", dir.path() + "/report"});
  REQUIRE(result.code == 0);

  std::string aggregates = test::read_file(dir.path() + "/report/aggregates.csv");
  CHECK(aggregates.find("metric,value\n") == 0);
  CHECK(aggregates.find("records,2") != std::string::npos);
  CHECK(aggregates.find("mean_judge_score,3.5") != std::string::npos);
  CHECK(aggregates.find("judge_follow_pct,50") != std::string::npos);
  CHECK(aggregates.find("following_rate_pct,100") != std::string::npos);
  CHECK(aggregates.find("accuracy_pct,50") != std::string::npos);

  std::string rows = test::read_file(dir.path() + "/report/rows.jsonl");
  CHECK(rows.find("\"judge_score\":5") != std::string::npos);
  CHECK(rows.find("\"exact_match\":true") != std::string::npos);

  // Aggregates are recomputable from the rows exactly.
  std::istringstream row_stream(rows);
  std::string line;
  double score_sum = 0;
  int parsed = 0, followed_judge = 0, followed_rouge = 0, exact = 0, exact_total = 0, total = 0;
  while (std::getline(row_stream, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line);
    ++total;
    if (row.contains("judge_score")) {
      ++parsed;
      score_sum += row.at("judge_score").get<double>();
      followed_judge += row.at("judge_followed").get<bool>() ? 1 : 0;
    }
    if (row.contains("followed_rouge")) {
      followed_rouge += row.at("followed_rouge").get<bool>() ? 1 : 0;
    }
    if (row.contains("exact_match")) {
      ++exact_total;
      exact += row.at("exact_match").get<bool>() ? 1 : 0;
    }
  }
  CHECK(total == 2);
  CHECK(score_sum / parsed == doctest::Approx(3.5));
  CHECK(100.0 * followed_judge / parsed == doctest::Approx(50.0));
  CHECK(100.0 * followed_rouge / total == doctest::Approx(100.0));
  CHECK(100.0 * exact / exact_total == doctest::Approx(50.0));
}

TEST_CASE("eval copies external scores into the rows") {
  test::TempDir dir;
  test::write_file(
      dir.file("records.jsonl"),
      R"({"id":"e1","instruction":"Do A.","segments":["Do A"],"response":"done","reference_intermediates":[]})"
      "\n");
  test::write_file(dir.file("external.jsonl"), R"({"id":"e1","score":0.875})" "\n");
  CliResult result = run({"eval", "--records", dir.file("records.jsonl"), "--external-scores",
                          dir.file("external.jsonl"), "--report", dir.path() + "/report"});
  REQUIRE(result.code == 0);
  std::string rows = test::read_file(dir.path() + "/report/rows.jsonl");
  CHECK(rows.find("\"external_score\":0.875") != std::string::npos);
}

TEST_CASE("config file drives profiles, tokenizer, and template overrides") {
  test::TempDir dir;
  test::write_file(dir.file("classify.txt"), "override for ${instruction}");
  std::string config = R"({
    "seed": 42,
    "templates": {"dir": ")" + dir.path() + R"("},
    "profiles": {
      "judge": {"model": "strict-judge", "temperature": 0.0},
      "mine": {"model": "my-model", "max_in_flight": 2, "credential_env": "MY_KEY"}
    }
  })";
  test::write_file(dir.file("config.json"), config);

  Config parsed = Config::from_file(dir.file("config.json"));
  CHECK(parsed.default_seed == 42);
  CHECK(parsed.profile("judge").model == "strict-judge");
  CHECK(parsed.profile("judge").temperature == 0.0);
  CHECK(parsed.profile("mine").max_in_flight == 2);
  CHECK(parsed.profile("mine").credential_env == "MY_KEY");
  CHECK(parsed.profile("default").temperature == 0.7);
  CHECK_THROWS_AS(parsed.profile("missing"), FormatError);
  REQUIRE(parsed.templates_dir.has_value());

  // The override flows through a cli run: augment renders via the template
  // set, but stats is enough to prove the config file loads end to end.
  Dataset dataset = toy_dataset(1);
  save_dataset(dataset, dir.file("in.jsonl"), DatasetFormat::jsonl);
  CliResult result =
      run({"--config", dir.file("config.json"), "stats", "--in", dir.file("in.jsonl")});
  CHECK(result.code == 0);

  CHECK(interpolate_env("${PATH}x").size() > 1);
  CHECK(interpolate_env("no vars") == "no vars");
}
