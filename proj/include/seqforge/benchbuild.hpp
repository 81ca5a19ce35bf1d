#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqforge/corpus.hpp"
#include "seqforge/gateway.hpp"
#include "seqforge/prompts.hpp"
#include "seqforge/rng.hpp"
#include "seqforge/seqinstruct.hpp"

namespace seqforge {

struct BenchmarkSpec {
  int iterations = 4;
  // Mixing ratios per iteration depth; must sum to 1 and have one entry per
  // iteration.
  std::vector<double> ratios = {0.1, 0.2, 0.3, 0.4};
  std::vector<Action> first_iter_actions = {Action::decompose, Action::prefix, Action::suffix};
  std::vector<Action> later_iter_actions = {Action::prefix, Action::suffix};
  std::int64_t seed = 0;

  void validate() const;  // throws InvalidRequest
};

// Iteration 1 draws uniformly from first_iter_actions, later iterations from
// later_iter_actions. Hold never appears in either pool.
Action sample_eval_action(int iteration, const BenchmarkSpec& spec, KeyedRng& rng);

// Largest-remainder apportionment of `total` over `ratios`; ties go to the
// larger ratio, then the lower index.
std::vector<std::size_t> largest_remainder_counts(const std::vector<double>& ratios,
                                                  std::size_t total);

struct BenchmarkBuild {
  Dataset benchmark;               // |seed_set| instances mixed across depths
  std::vector<Dataset> snapshots;  // full intermediate set after each iteration
  std::vector<GenerationTrace> traces;
};

// Iterated rewrite-only augmentation of the seed set (sampled actions, no
// response regeneration), then a depth mixture where every seed id
// contributes exactly one instance drawn from exactly one snapshot.
BenchmarkBuild build_benchmark(const Dataset& seed_set, const BenchmarkSpec& spec,
                               Gateway& gateway, const TemplateSet& templates);

// Benchmark JSONL: {"id", "instruction", "segments", "iteration_depth",
// "seed_id"}; no reference answers are stored.
void save_benchmark(const Dataset& benchmark, const std::string& path);
Dataset load_benchmark(const std::string& path);

}  // namespace seqforge
