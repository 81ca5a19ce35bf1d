#include <doctest.h>

#include <cctype>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "seqforge/benchbuild.hpp"
#include "seqforge/errors.hpp"
#include "test_util.hpp"

using namespace seqforge;

namespace {

Dataset seed_dataset(std::size_t n) {
  Dataset dataset;
  dataset.name = "toyseed";
  for (std::size_t i = 0; i < n; ++i) {
    InstructionRecord record;
    record.id = synthesize_record_id(i);
    record.instruction = "Explain topic " + std::to_string(i) + ".";
    record.segments = {record.instruction};
    record.output = "";
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

std::string strip_terminal(std::string text) {
  while (!text.empty() && (text.back() == '.' || text.back() == '!')) {
    text.pop_back();
  }
  return text;
}

std::string lower_head(std::string text) {
  if (!text.empty()) {
    text[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(text[0])));
  }
  return text;
}

// Precomputes the same action stream the builder will sample and scripts a
// well-formed rewrite reply for each call, tracking the evolving text.
std::vector<std::string> craft_replies(const Dataset& seeds, const BenchmarkSpec& spec) {
  std::vector<std::string> replies;
  std::map<std::string, std::string> current;
  for (const auto& record : seeds.records) {
    current[record.id] = record.instruction;
  }
  for (int t = 1; t <= spec.iterations; ++t) {
    for (const auto& record : seeds.records) {
      KeyedRng rng = KeyedRng::for_key(spec.seed, record.id, t, "eval-action");
      Action action = sample_eval_action(t, spec, rng);
      std::string& instruction = current[record.id];
      std::string next;
      switch (action) {
        case Action::decompose:
          next = "Outline topic " + record.id + " first, then " +
                 lower_head(strip_terminal(instruction)) + " in depth.";
          break;
        case Action::prefix:
          next = "Gather sources for step " + std::to_string(t) + ", then " +
                 lower_head(instruction);
          break;
        case Action::suffix:
          next = strip_terminal(instruction) + " and then add example " + std::to_string(t) + ".";
          break;
        case Action::hold:
          FAIL("benchmark sampling must never emit hold");
          break;
      }
      replies.push_back("#New Instruction#: \"" + next + "\"###");
      instruction = next;
    }
  }
  return replies;
}

Gateway scripted(std::shared_ptr<ScriptedBackend>& backend, std::vector<std::string> replies) {
  backend = std::make_shared<ScriptedBackend>(std::move(replies));
  RetryPolicy retry;
  retry.max_attempts = 2;
  retry.initial_delay = std::chrono::milliseconds(1);
  return Gateway(backend, retry);
}

}  // namespace

TEST_CASE("spec validation") {
  BenchmarkSpec spec;
  spec.validate();  // defaults are valid

  BenchmarkSpec bad_ratio = spec;
  bad_ratio.ratios = {0.5, 0.5};
  CHECK_THROWS_AS(bad_ratio.validate(), InvalidRequest);

  BenchmarkSpec bad_sum = spec;
  bad_sum.ratios = {0.1, 0.2, 0.3, 0.5};
  CHECK_THROWS_AS(bad_sum.validate(), InvalidRequest);

  BenchmarkSpec with_hold = spec;
  with_hold.later_iter_actions = {Action::prefix, Action::hold};
  CHECK_THROWS_AS(with_hold.validate(), InvalidRequest);
}

TEST_CASE("sample_eval_action respects the per-iteration pools") {
  BenchmarkSpec spec;
  KeyedRng rng = KeyedRng::for_key(5, "pool", 0);
  for (int i = 0; i < 500; ++i) {
    Action first = sample_eval_action(1, spec, rng);
    CHECK(first != Action::hold);
    Action later = sample_eval_action(2 + static_cast<int>(rng.uniform_below(3)), spec, rng);
    CHECK((later == Action::prefix || later == Action::suffix));
  }
  CHECK_THROWS_AS(sample_eval_action(0, spec, rng), InvalidRequest);
}

TEST_CASE("iteration-1 sampling is near-uniform over three actions") {
  BenchmarkSpec spec;
  std::map<Action, int> counts;
  const int draws = 3000;
  for (int i = 0; i < draws; ++i) {
    KeyedRng rng = KeyedRng::for_key(spec.seed, "draw-" + std::to_string(i), 1, "eval-action");
    counts[sample_eval_action(1, spec, rng)]++;
  }
  for (Action action : {Action::decompose, Action::prefix, Action::suffix}) {
    double pct = 100.0 * counts[action] / draws;
    CHECK(pct > 33.3 - 3.0);
    CHECK(pct < 33.3 + 3.0);
  }
}

TEST_CASE("largest remainder restores the exact total") {
  auto counts = largest_remainder_counts({0.1, 0.2, 0.3, 0.4}, 200);
  CHECK(counts == std::vector<std::size_t>{20, 40, 60, 80});

  counts = largest_remainder_counts({0.1, 0.2, 0.3, 0.4}, 7);
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  CHECK(total == 7);

  counts = largest_remainder_counts({1.0 / 3, 1.0 / 3, 1.0 / 3}, 10);
  total = 0;
  for (std::size_t c : counts) total += c;
  CHECK(total == 10);
  for (std::size_t c : counts) {
    CHECK(c >= 3);
    CHECK(c <= 4);
  }

  counts = largest_remainder_counts({1.0}, 12);
  CHECK(counts == std::vector<std::size_t>{12});
}

TEST_CASE("build_benchmark mixes depths with one instance per seed") {
  Dataset seeds = seed_dataset(20);
  BenchmarkSpec spec;
  spec.seed = 13;
  std::shared_ptr<ScriptedBackend> backend;
  Gateway gateway = scripted(backend, craft_replies(seeds, spec));
  TemplateSet templates = TemplateSet::builtin();

  BenchmarkBuild build = build_benchmark(seeds, spec, gateway, templates);

  REQUIRE(build.benchmark.size() == seeds.size());
  std::set<std::string> seed_ids;
  std::map<int, std::size_t> histogram;
  for (const auto& record : build.benchmark.records) {
    CHECK(seed_ids.insert(record.id).second);  // each seed contributes once
    histogram[record.iteration]++;
  }
  CHECK(histogram[1] == 2);
  CHECK(histogram[2] == 4);
  CHECK(histogram[3] == 6);
  CHECK(histogram[4] == 8);

  // Snapshot t instructions carry exactly t more task segments than the seed.
  REQUIRE(build.snapshots.size() == 4);
  for (std::size_t t = 0; t < build.snapshots.size(); ++t) {
    REQUIRE(build.snapshots[t].size() == seeds.size());
    for (const auto& record : build.snapshots[t].records) {
      CHECK(record.segments.size() == 1 + (t + 1));
    }
  }

  // The sampled stream never used hold, and never decompose past round one.
  for (const auto& trace : build.traces) {
    CHECK(trace.action != Action::hold);
    if (trace.iteration >= 2) {
      CHECK(trace.action != Action::decompose);
    }
    CHECK_FALSE(trace.fallback);
  }
}

TEST_CASE("build_benchmark ratios 1.0 reproduces snapshot one") {
  Dataset seeds = seed_dataset(6);
  BenchmarkSpec spec;
  spec.iterations = 1;
  spec.ratios = {1.0};
  spec.seed = 3;
  std::shared_ptr<ScriptedBackend> backend;
  Gateway gateway = scripted(backend, craft_replies(seeds, spec));
  TemplateSet templates = TemplateSet::builtin();

  BenchmarkBuild build = build_benchmark(seeds, spec, gateway, templates);
  REQUIRE(build.benchmark.size() == 6);
  std::map<std::string, std::string> snapshot_instruction;
  for (const auto& record : build.snapshots[0].records) {
    snapshot_instruction[record.id] = record.instruction;
  }
  for (const auto& record : build.benchmark.records) {
    CHECK(record.iteration == 1);
    CHECK(record.instruction == snapshot_instruction.at(record.id));
  }
}

TEST_CASE("build_benchmark is deterministic for a fixed seed and script") {
  Dataset seeds = seed_dataset(10);
  BenchmarkSpec spec;
  spec.seed = 99;
  TemplateSet templates = TemplateSet::builtin();
  test::TempDir dir;

  auto run_once = [&](const std::string& name) {
    std::shared_ptr<ScriptedBackend> backend;
    Gateway gateway = scripted(backend, craft_replies(seeds, spec));
    BenchmarkBuild build = build_benchmark(seeds, spec, gateway, templates);
    save_benchmark(build.benchmark, dir.file(name));
    return test::read_file(dir.file(name));
  };
  CHECK(run_once("a.jsonl") == run_once("b.jsonl"));
}

TEST_CASE("benchmark jsonl carries depth and seed id") {
  Dataset seeds = seed_dataset(4);
  BenchmarkSpec spec;
  spec.seed = 1;
  std::shared_ptr<ScriptedBackend> backend;
  Gateway gateway = scripted(backend, craft_replies(seeds, spec));
  TemplateSet templates = TemplateSet::builtin();
  BenchmarkBuild build = build_benchmark(seeds, spec, gateway, templates);

  test::TempDir dir;
  save_benchmark(build.benchmark, dir.file("bench.jsonl"));
  std::string content = test::read_file(dir.file("bench.jsonl"));
  CHECK(content.find("\"iteration_depth\":") != std::string::npos);
  CHECK(content.find("\"seed_id\":\"rec-00000000\"") != std::string::npos);

  Dataset reloaded = load_benchmark(dir.file("bench.jsonl"));
  REQUIRE(reloaded.size() == 4);
  CHECK(reloaded.records[0].iteration >= 1);
  CHECK(reloaded.records[0].segments.size() >= 2);
}

TEST_CASE("rewrite failures retain the last good snapshot state") {
  Dataset seeds = seed_dataset(2);
  BenchmarkSpec spec;
  spec.iterations = 1;
  spec.ratios = {1.0};
  spec.seed = 4;
  // First record gets a broken reply, second a valid one crafted for its
  // sampled action.
  std::vector<std::string> crafted = craft_replies(seeds, spec);
  crafted[0] = "broken reply, no marker";
  std::shared_ptr<ScriptedBackend> backend;
  Gateway gateway = scripted(backend, std::move(crafted));
  TemplateSet templates = TemplateSet::builtin();

  BenchmarkBuild build = build_benchmark(seeds, spec, gateway, templates);
  REQUIRE(build.snapshots.size() == 1);
  CHECK(build.snapshots[0].records[0].instruction == seeds.records[0].instruction);
  CHECK(build.snapshots[0].records[0].segments.size() == 1);
  CHECK(build.snapshots[0].records[1].segments.size() == 2);
  CHECK(build.traces[0].fallback);
}
