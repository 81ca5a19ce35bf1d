#include "seqforge/benchbuild.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "seqforge/errors.hpp"

namespace seqforge {

using nlohmann::json;

namespace {

// Records carry their seed id internally; depth-qualified ids are minted at
// emission time so RNG streams stay keyed on the stable seed id.
std::string depth_id(const std::string& seed_id, int depth) {
  return seed_id + "-it" + std::to_string(depth);
}

}  // namespace

void BenchmarkSpec::validate() const {
  if (iterations < 1) {
    throw InvalidRequest("benchmark iterations must be >= 1");
  }
  if (ratios.size() != static_cast<std::size_t>(iterations)) {
    throw InvalidRequest("ratios must have one entry per iteration");
  }
  double sum = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidRequest("ratios must sum to 1");
  }
  for (double ratio : ratios) {
    if (ratio < 0.0) {
      throw InvalidRequest("ratios must be non-negative");
    }
  }
  for (const auto* pool : {&first_iter_actions, &later_iter_actions}) {
    if (pool->empty()) {
      throw InvalidRequest("benchmark action pools must be non-empty");
    }
    if (std::find(pool->begin(), pool->end(), Action::hold) != pool->end()) {
      throw InvalidRequest("hold is not a benchmark action");
    }
  }
}

Action sample_eval_action(int iteration, const BenchmarkSpec& spec, KeyedRng& rng) {
  if (iteration < 1) {
    throw InvalidRequest("iteration must be >= 1");
  }
  const std::vector<Action>& pool =
      iteration == 1 ? spec.first_iter_actions : spec.later_iter_actions;
  return pool[rng.uniform_below(pool.size())];
}

std::vector<std::size_t> largest_remainder_counts(const std::vector<double>& ratios,
                                                  std::size_t total) {
  std::vector<std::size_t> counts(ratios.size(), 0);
  std::vector<double> remainders(ratios.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    double quota = ratios[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainders[i] = quota - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainders[a] != remainders[b]) return remainders[a] > remainders[b];
    return ratios[a] > ratios[b];
  });
  for (std::size_t i = 0; assigned < total; ++i) {
    counts[order[i % order.size()]]++;
    ++assigned;
  }
  return counts;
}

BenchmarkBuild build_benchmark(const Dataset& seed_set, const BenchmarkSpec& spec,
                               Gateway& gateway, const TemplateSet& templates) {
  spec.validate();
  if (seed_set.empty()) {
    throw InvalidRequest("benchmark seed set is empty");
  }

  BenchmarkBuild build;
  Dataset working = seed_set;

  for (int iteration = 1; iteration <= spec.iterations; ++iteration) {
    for (auto& record : working.records) {
      GenerationTrace trace;
      trace.record_id = record.id;
      trace.iteration = iteration;
      trace.action_source = ActionSource::sampled;

      KeyedRng rng = KeyedRng::for_key(spec.seed, record.id, iteration, "eval-action");
      Action action = sample_eval_action(iteration, spec, rng);
      trace.action = action;
      try {
        RewriteOutcome rewrite = rewrite_instruction(record, action, gateway, templates);
        trace.raw_rewrite = rewrite.raw;
        trace.fallback = rewrite.fallback;
        trace.truncated = rewrite.truncated;
        record.instruction = rewrite.instruction;
        record.segments = rewrite.segments;
        record.iteration = iteration;
        record.trace = trace;
      } catch (const Error&) {
        // Record retained at its last good state; flagged in the trace.
        trace.fallback = true;
      }
      build.traces.push_back(std::move(trace));
    }

    Dataset snapshot;
    snapshot.name = working.name + "-it" + std::to_string(iteration);
    snapshot.records.reserve(working.size());
    for (const auto& record : working.records) {
      snapshot.records.push_back(record);
    }
    build.snapshots.push_back(std::move(snapshot));
  }

  // Depth mixture: shuffle the seed ids once, then carve consecutive slices
  // sized by largest-remainder apportionment, so each seed id lands at
  // exactly one depth.
  std::vector<std::size_t> counts = largest_remainder_counts(spec.ratios, seed_set.size());
  std::vector<std::size_t> order(seed_set.size());
  std::iota(order.begin(), order.end(), 0);
  KeyedRng mix_rng = KeyedRng::for_key(spec.seed, "benchmark-mixture", 0);
  mix_rng.shuffle(order);

  build.benchmark.name = seed_set.name + "-bench";
  std::size_t cursor = 0;
  for (int depth = 1; depth <= spec.iterations; ++depth) {
    const Dataset& snapshot = build.snapshots[static_cast<std::size_t>(depth - 1)];
    for (std::size_t k = 0; k < counts[static_cast<std::size_t>(depth - 1)]; ++k) {
      std::size_t index = order[cursor++];
      InstructionRecord instance = snapshot.records[index];
      instance.iteration = depth;
      build.benchmark.records.push_back(std::move(instance));
    }
  }
  // Present the mixture in seed order for stable diffs.
  std::sort(build.benchmark.records.begin(), build.benchmark.records.end(),
            [](const InstructionRecord& a, const InstructionRecord& b) { return a.id < b.id; });
  return build;
}

void save_benchmark(const Dataset& benchmark, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write benchmark: " + path);
  }
  for (const auto& record : benchmark.records) {
    json obj;
    obj["id"] = depth_id(record.id, record.iteration);
    obj["instruction"] = record.instruction;
    obj["segments"] = record.segments;
    obj["iteration_depth"] = record.iteration;
    obj["seed_id"] = record.id;
    out << obj.dump() << '\n';
  }
}

Dataset load_benchmark(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open benchmark: " + path);
  }
  Dataset dataset;
  dataset.format = DatasetFormat::jsonl;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid benchmark line: ") + ex.what(), index);
    }
    InstructionRecord record;
    record.id = obj.value("id", "");
    if (record.id.empty()) {
      throw SchemaError("benchmark record needs an id", index);
    }
    record.instruction = obj.value("instruction", "");
    if (obj.contains("segments") && obj.at("segments").is_array()) {
      for (const auto& seg : obj.at("segments")) {
        record.segments.push_back(seg.get<std::string>());
      }
    }
    if (record.segments.empty()) {
      record.segments = {record.instruction};
    }
    record.iteration = obj.value("iteration_depth", 0);
    dataset.records.push_back(std::move(record));
    ++index;
  }
  return dataset;
}

}  // namespace seqforge
