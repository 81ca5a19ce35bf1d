#include "seqforge/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqforge/ablate.hpp"
#include "seqforge/benchbuild.hpp"
#include "seqforge/config.hpp"
#include "seqforge/corpus.hpp"
#include "seqforge/errors.hpp"
#include "seqforge/evalharness.hpp"
#include "seqforge/gateway.hpp"
#include "seqforge/manifest.hpp"
#include "seqforge/manualsit.hpp"
#include "seqforge/seqinstruct.hpp"

namespace seqforge {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct BackendChoice {
  std::string kind = "http";
  std::string script;
};

std::unique_ptr<Gateway> make_gateway(const Config& config, const std::string& profile_name,
                                      const BackendChoice& choice,
                                      const std::string& cache_override) {
  const GatewayProfile& profile = config.profile(profile_name);

  std::shared_ptr<Backend> backend;
  if (choice.kind == "scripted") {
    if (choice.script.empty()) {
      throw FormatError("the scripted backend requires --script <replies.jsonl>");
    }
    backend = ScriptedBackend::from_jsonl(choice.script);
  } else if (choice.kind == "http") {
    HttpBackendConfig http;
    http.endpoint = profile.endpoint;
    if (http.endpoint.empty()) {
      if (const char* base = std::getenv("SEQFORGE_API_BASE")) {
        http.endpoint = base;
      }
    }
    if (const char* key = std::getenv(profile.credential_env.c_str())) {
      http.api_key = key;
    }
    backend = std::make_shared<HttpBackend>(http);
  } else {
    throw FormatError("unknown backend kind: " + choice.kind);
  }

  RetryPolicy retry;
  retry.max_attempts = profile.retry_limit;
  retry.initial_delay = std::chrono::milliseconds(profile.retry_initial_ms);

  std::shared_ptr<ResponseCache> cache;
  std::string cache_dir = !cache_override.empty()
                              ? cache_override
                              : profile.cache_dir.value_or("");
  if (!cache_dir.empty()) {
    cache = std::make_shared<ResponseCache>(cache_dir);
  }

  retry.max_attempts = std::max(1, retry.max_attempts);
  auto gateway = std::make_unique<Gateway>(backend, retry, cache);
  gateway->model = profile.model;
  gateway->temperature = profile.temperature;
  gateway->max_tokens = profile.max_tokens;
  gateway->max_in_flight = std::max(1, profile.max_in_flight);
  return gateway;
}

TemplateSet make_templates(const Config& config) {
  if (config.templates_dir) {
    return TemplateSet::with_overrides(*config.templates_dir);
  }
  return TemplateSet::builtin();
}

std::vector<Action> parse_action_pool(const std::string& text) {
  std::vector<Action> pool;
  std::stringstream stream(text);
  std::string name;
  while (std::getline(stream, name, ',')) {
    if (name.empty()) continue;
    auto action = action_from_name(name);
    if (!action) {
      throw FormatError("unknown action name: " + name);
    }
    pool.push_back(*action);
  }
  return pool;
}

std::vector<std::vector<Action>> parse_action_pools(const std::string& text) {
  std::vector<std::vector<Action>> pools;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ';')) {
    std::vector<Action> pool = parse_action_pool(part);
    if (!pool.empty()) {
      pools.push_back(std::move(pool));
    }
  }
  return pools;
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> ratios;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) {
    if (part.empty()) continue;
    ratios.push_back(std::stod(part));
  }
  return ratios;
}

Manifest base_manifest(const std::string& command, const Config& config,
                       const TemplateSet& templates) {
  Manifest manifest;
  manifest.command = command;
  manifest.config_digest = config.digest;
  manifest.template_versions = templates.versions();
  return manifest;
}

std::map<std::string, std::string> load_responses(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open responses: " + path);
  }
  std::map<std::string, std::string> responses;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid response line: ") + ex.what(), index);
    }
    std::string id = obj.value("id", "");
    if (id.empty()) {
      throw SchemaError("response entries need an `id`", index);
    }
    responses[id] = obj.contains("response") ? obj.value("response", "") : obj.value("text", "");
    ++index;
  }
  return responses;
}

struct ReferenceEntry {
  std::optional<std::string> final_answer;
  std::optional<std::vector<std::string>> intermediates;
};

std::map<std::string, ReferenceEntry> load_references(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open references: " + path);
  }
  std::map<std::string, ReferenceEntry> references;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid reference line: ") + ex.what(), index);
    }
    std::string id = obj.value("id", "");
    if (id.empty()) {
      throw SchemaError("reference entries need an `id`", index);
    }
    ReferenceEntry entry;
    if (obj.contains("reference_final") && obj.at("reference_final").is_string()) {
      entry.final_answer = obj.at("reference_final").get<std::string>();
    }
    if (obj.contains("reference_intermediates") && obj.at("reference_intermediates").is_array()) {
      std::vector<std::string> refs;
      for (const auto& ref : obj.at("reference_intermediates")) {
        refs.push_back(ref.get<std::string>());
      }
      entry.intermediates = std::move(refs);
    }
    references[id] = std::move(entry);
    ++index;
  }
  return references;
}

std::string profile_of_judge_flag(const std::string& flag) {
  // Accepts both `gateway:judge` and a bare profile name.
  if (flag.rfind("gateway:", 0) == 0) {
    return flag.substr(8);
  }
  return flag;
}

std::string format_metric(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.6g", value);
  return buffer;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"seqforge: build and evaluate sequential-instruction datasets"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Config file (JSON)");

  // --- augment ---
  auto* augment = app.add_subcommand("augment", "Iteratively grow sequential instructions");
  std::string aug_in, aug_out, aug_stats, aug_traces, aug_actions, aug_cache;
  std::string aug_in_format = "jsonl", aug_out_format = "jsonl";
  std::string aug_mode = "model", aug_gateway = "default";
  BackendChoice aug_backend;
  int aug_iterations = 2;
  std::int64_t aug_seed = 0;
  bool aug_seed_set = false, aug_no_regen = false, aug_respond_final_only = false;
  bool aug_regen_only = false;
  double aug_max_fail = 0.5;
  augment->add_option("--in", aug_in, "Input dataset")->required();
  augment->add_option("--format", aug_in_format, "Input format")
      ->check(CLI::IsMember({"jsonl", "alpaca_json", "chat"}));
  augment->add_option("--out", aug_out, "Output dataset")->required();
  augment->add_option("--out-format", aug_out_format, "Output format")
      ->check(CLI::IsMember({"jsonl", "alpaca_json", "chat"}));
  augment->add_option("--iterations", aug_iterations, "Augmentation rounds");
  augment->add_option("--mode", aug_mode, "Action decision mode")
      ->check(CLI::IsMember({"model", "sampled"}));
  augment->add_option("--actions", aug_actions,
                      "Sampled-mode pools per iteration, e.g. 'decompose,prefix;prefix,suffix'");
  augment->add_option("--seed", aug_seed, "RNG seed")->each([&](const std::string&) {
    aug_seed_set = true;
  });
  augment->add_option("--stats", aug_stats, "Write per-iteration stats CSV here");
  augment->add_option("--traces", aug_traces, "Trace JSONL path (default <out>.traces.jsonl)");
  augment->add_option("--backend", aug_backend.kind, "Model backend")
      ->check(CLI::IsMember({"http", "scripted"}));
  augment->add_option("--script", aug_backend.script, "Scripted backend replies (JSONL)");
  augment->add_option("--gateway", aug_gateway, "Gateway profile name");
  augment->add_option("--cache-dir", aug_cache, "Response cache directory");
  augment->add_flag("--no-regen", aug_no_regen, "Keep original outputs after rewriting");
  augment->add_flag("--respond-final-only", aug_respond_final_only,
                    "Regenerate responses only after the final iteration");
  augment->add_flag("--regen-only", aug_regen_only,
                    "Only regenerate responses; no instruction rewriting");
  augment->add_option("--max-fail-fraction", aug_max_fail,
                      "Abort when more than this fraction fails in one iteration");

  // --- manual ---
  auto* manual = app.add_subcommand("manual", "Task-driven sequential transforms");
  manual->require_subcommand(1);
  std::string man_in, man_out, man_map, man_captions;
  std::string man_in_format = "jsonl", man_out_format = "jsonl", man_gateway = "default";
  std::string man_cache;
  BackendChoice man_backend;
  double man_fraction = 1.0 / 3.0;
  std::int64_t man_seed = 0;
  bool man_seed_set = false, man_sequential = false;
  auto add_manual_io = [&](CLI::App* cmd) {
    cmd->add_option("--in", man_in, "Input dataset")->required();
    cmd->add_option("--format", man_in_format, "Input format")
        ->check(CLI::IsMember({"jsonl", "alpaca_json"}));
    cmd->add_option("--out", man_out, "Output dataset")->required();
    cmd->add_option("--out-format", man_out_format, "Output format")
        ->check(CLI::IsMember({"jsonl", "alpaca_json", "chat"}));
  };
  auto* man_translate = manual->add_subcommand("translate", "Translate-then-answer prefix task");
  add_manual_io(man_translate);
  man_translate->add_option("--map", man_map, "Translations JSONL {id, lang, text}")->required();
  man_translate->add_option("--fraction", man_fraction, "Fraction of eligible records");
  man_translate->add_option("--seed", man_seed, "Selection seed")->each([&](const std::string&) {
    man_seed_set = true;
  });
  auto* man_caption = manual->add_subcommand("caption", "Describe-then-answer image task");
  add_manual_io(man_caption);
  man_caption->add_option("--captions", man_captions, "Captions JSONL {id, caption}");
  man_caption->add_flag("--sequential", man_sequential,
                        "Sequential form (default is the single-step baseline)");
  auto* man_repeat = manual->add_subcommand("repeat", "Repeat-the-input dummy task");
  add_manual_io(man_repeat);
  auto* man_paraphrase = manual->add_subcommand("paraphrase", "Paraphrase-the-input dummy task");
  add_manual_io(man_paraphrase);
  man_paraphrase->add_option("--backend", man_backend.kind, "Model backend")
      ->check(CLI::IsMember({"http", "scripted"}));
  man_paraphrase->add_option("--script", man_backend.script, "Scripted backend replies (JSONL)");
  man_paraphrase->add_option("--gateway", man_gateway, "Gateway profile name");
  man_paraphrase->add_option("--cache-dir", man_cache, "Response cache directory");

  // --- ablate ---
  auto* ablate_cmd = app.add_subcommand("ablate", "Length- and task-controlled datasets");
  ablate_cmd->require_subcommand(1);
  std::string abl_in, abl_out, abl_it, abl_sit, abl_out_it, abl_out_sit, abl_delimiter = "\n\n";
  std::string abl_in_format = "jsonl", abl_out_format = "jsonl";
  std::size_t abl_budget = 0, abl_tolerance = 0;
  std::int64_t abl_seed = 0;
  auto* abl_budget_cmd = ablate_cmd->add_subcommand("budget", "Sample to an output-token budget");
  abl_budget_cmd->add_option("--in", abl_in)->required();
  abl_budget_cmd->add_option("--format", abl_in_format)
      ->check(CLI::IsMember({"jsonl", "alpaca_json"}));
  abl_budget_cmd->add_option("--out", abl_out)->required();
  abl_budget_cmd->add_option("--budget", abl_budget, "Total output-token budget")->required();
  abl_budget_cmd->add_option("--seed", abl_seed, "Shuffle seed");
  auto* abl_match_cmd =
      ablate_cmd->add_subcommand("match", "Pair records of equal tokenized length");
  abl_match_cmd->add_option("--it", abl_it, "IT dataset")->required();
  abl_match_cmd->add_option("--sit", abl_sit, "SIT dataset")->required();
  abl_match_cmd->add_option("--out-it", abl_out_it)->required();
  abl_match_cmd->add_option("--out-sit", abl_out_sit)->required();
  abl_match_cmd->add_option("--tolerance", abl_tolerance, "Length tolerance in tokens");
  abl_match_cmd->add_option("--seed", abl_seed, "Tie-break seed");
  auto* abl_split_cmd = ablate_cmd->add_subcommand("split", "Explode into single-task records");
  abl_split_cmd->add_option("--in", abl_in)->required();
  abl_split_cmd->add_option("--format", abl_in_format)
      ->check(CLI::IsMember({"jsonl", "alpaca_json"}));
  abl_split_cmd->add_option("--out", abl_out)->required();
  abl_split_cmd->add_option("--delimiter", abl_delimiter, "Response segment delimiter");
  auto* abl_multi_cmd = ablate_cmd->add_subcommand("multi", "Interleave tasks as dialogue turns");
  abl_multi_cmd->add_option("--in", abl_in)->required();
  abl_multi_cmd->add_option("--format", abl_in_format)
      ->check(CLI::IsMember({"jsonl", "alpaca_json"}));
  abl_multi_cmd->add_option("--out", abl_out)->required();
  abl_multi_cmd->add_option("--delimiter", abl_delimiter, "Response segment delimiter");

  // --- build-bench ---
  auto* bench = app.add_subcommand("build-bench", "Construct a chained-instruction benchmark by iterated rewriting");
  std::string bench_seed_path, bench_out, bench_snapshots, bench_ratios = "0.1,0.2,0.3,0.4";
  std::string bench_first = "decompose,prefix,suffix", bench_later = "prefix,suffix";
  std::string bench_format = "jsonl", bench_gateway = "bench", bench_cache;
  BackendChoice bench_backend;
  int bench_iterations = 4;
  std::int64_t bench_rng_seed = 0;
  bool bench_rng_seed_set = false;
  bench->add_option("--seed", bench_seed_path, "Seed evaluation set (dataset file)")->required();
  bench->add_option("--format", bench_format, "Seed set format")
      ->check(CLI::IsMember({"jsonl", "alpaca_json"}));
  bench->add_option("--out", bench_out, "Benchmark JSONL")->required();
  bench->add_option("--iterations", bench_iterations, "Augmentation rounds");
  bench->add_option("--ratios", bench_ratios, "Depth mixing ratios, comma separated");
  bench->add_option("--first-actions", bench_first, "Iteration-1 action pool");
  bench->add_option("--later-actions", bench_later, "Action pool for iterations >= 2");
  bench->add_option("--snapshots", bench_snapshots, "Directory for per-iteration snapshots");
  bench->add_option("--rng-seed", bench_rng_seed, "Sampling seed")->each([&](const std::string&) {
    bench_rng_seed_set = true;
  });
  bench->add_option("--backend", bench_backend.kind, "Model backend")
      ->check(CLI::IsMember({"http", "scripted"}));
  bench->add_option("--script", bench_backend.script, "Scripted backend replies (JSONL)");
  bench->add_option("--gateway", bench_gateway, "Gateway profile name");
  bench->add_option("--cache-dir", bench_cache, "Response cache directory");

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "Score responses to sequential instructions");
  std::string eval_bench, eval_records, eval_responses, eval_references, eval_judge;
  std::string eval_report, eval_compare, eval_cache;
  BackendChoice eval_backend;
  double eval_threshold = 0.3;
  eval_cmd->add_option("--bench", eval_bench, "Benchmark JSONL");
  eval_cmd->add_option("--records", eval_records, "Pre-joined EvalRecord JSONL");
  eval_cmd->add_option("--responses", eval_responses, "Model responses JSONL {id, response}");
  eval_cmd->add_option("--references", eval_references,
                       "References JSONL {id, reference_final, reference_intermediates}");
  eval_cmd->add_option("--judge", eval_judge, "Judge gateway, e.g. gateway:judge");
  eval_cmd->add_option("--rouge-threshold", eval_threshold, "Following-rate F1 threshold");
  std::string eval_external_scores;
  eval_cmd->add_option("--external-scores", eval_external_scores,
                       "Externally computed scores JSONL {id, score} copied into the rows");
  eval_cmd->add_option("--report", eval_report, "Report directory")->required();
  eval_cmd->add_option("--compare", eval_compare,
                       "Baseline judge rows JSONL for win-rate comparison");
  eval_cmd->add_option("--backend", eval_backend.kind, "Judge backend")
      ->check(CLI::IsMember({"http", "scripted"}));
  eval_cmd->add_option("--script", eval_backend.script, "Scripted judge replies (JSONL)");
  eval_cmd->add_option("--cache-dir", eval_cache, "Response cache directory");

  // --- stats ---
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics (token averages, options)");
  std::string stats_in, stats_out, stats_format = "jsonl", stats_tokenizer = "whitespace";
  std::string stats_vocab;
  bool stats_verb_nouns = false;
  stats_cmd->add_option("--in", stats_in, "Input dataset")->required();
  stats_cmd->add_option("--format", stats_format, "Input format")
      ->check(CLI::IsMember({"jsonl", "alpaca_json"}));
  stats_cmd->add_option("--tokenizer", stats_tokenizer, "Token counting mode")
      ->check(CLI::IsMember({"whitespace", "external_bpe"}));
  stats_cmd->add_option("--vocab", stats_vocab, "Vocabulary file for external_bpe");
  stats_cmd->add_option("--out", stats_out, "CSV path (default stdout)");
  stats_cmd->add_flag("--verb-nouns", stats_verb_nouns,
                      "Emit root-verb/noun counts instead of the stats table");

  // Deepest subcommand mentioned on the command line, for help rendering.
  auto active_help = [&]() -> std::string {
    CLI::App* current = &app;
    while (true) {
      std::vector<CLI::App*> parsed = current->get_subcommands();
      if (parsed.empty()) {
        return current->help();
      }
      current = parsed.front();
    }
  };

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << active_help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << active_help();
    return 1;
  }

  try {
    Config config = config_path.empty() ? Config::defaults() : Config::from_file(config_path);
    TemplateSet templates = make_templates(config);

    if (augment->parsed()) {
      Dataset dataset = load_dataset(aug_in, dataset_format_from_name(aug_in_format));
      auto gateway = make_gateway(config, aug_gateway, aug_backend, aug_cache);
      std::int64_t seed = aug_seed_set ? aug_seed : config.default_seed;

      Manifest manifest = base_manifest("augment", config, templates);
      manifest.add_input(aug_in);
      if (!aug_backend.script.empty()) manifest.add_input(aug_backend.script);
      manifest.seeds["seed"] = std::to_string(seed);
      manifest.params["iterations"] = std::to_string(aug_iterations);
      manifest.params["mode"] = aug_mode;
      manifest.params["backend"] = aug_backend.kind;
      manifest.params["gateway"] = aug_gateway;
      manifest.params["regen_only"] = aug_regen_only ? "true" : "false";

      if (aug_regen_only) {
        Dataset result = regenerate_dataset_responses(dataset, *gateway, templates);
        save_dataset(result, aug_out, dataset_format_from_name(aug_out_format));
        manifest.add_output(aug_out);
        manifest.write_beside(aug_out);
        out << "regenerated responses for " << result.size() << " records\n";
        return 0;
      }

      PipelineConfig pipeline;
      pipeline.iterations = aug_iterations;
      pipeline.mode =
          aug_mode == "model" ? PipelineMode::model_classified : PipelineMode::sampled;
      if (!aug_actions.empty()) {
        pipeline.allowed_actions = parse_action_pools(aug_actions);
      }
      pipeline.rng_seed = seed;
      pipeline.regenerate_responses = !aug_no_regen;
      pipeline.respond_final_only = aug_respond_final_only;
      pipeline.failure_abort_fraction = aug_max_fail;

      PipelineResult result = run_pipeline(dataset, pipeline, *gateway, templates,
                                           config.tokenizer);
      save_dataset(result.dataset, aug_out, dataset_format_from_name(aug_out_format));
      manifest.add_output(aug_out);

      std::string traces_path = aug_traces.empty() ? aug_out + ".traces.jsonl" : aug_traces;
      save_traces(result.traces, traces_path);
      manifest.add_output(traces_path);

      if (!aug_stats.empty()) {
        std::ofstream stats_file(aug_stats, std::ios::binary | std::ios::trunc);
        if (!stats_file) {
          throw IoError("cannot write stats: " + aug_stats);
        }
        stats_file << stats_to_csv(result.stats);
        stats_file.close();
        manifest.add_output(aug_stats);
      }
      manifest.write_beside(aug_out);
      out << "augmented " << result.dataset.size() << " records over " << aug_iterations
          << " iterations (" << result.failed_records << " record-iterations flagged)\n";
      return 0;
    }

    if (manual->parsed()) {
      Dataset dataset = load_dataset(man_in, dataset_format_from_name(man_in_format));
      Manifest manifest = base_manifest("manual", config, templates);
      manifest.add_input(man_in);
      Dataset result;

      if (man_translate->parsed()) {
        std::int64_t seed = man_seed_set ? man_seed : config.default_seed;
        ParallelInputMap translations = load_parallel_inputs(man_map);
        result = translate_prefix_transform(dataset, translations, man_fraction, seed);
        manifest.add_input(man_map);
        manifest.seeds["seed"] = std::to_string(seed);
        manifest.params["task"] = "translate";
        manifest.params["fraction"] = format_metric(man_fraction);
      } else if (man_caption->parsed()) {
        CaptionMap captions;
        if (!man_captions.empty()) {
          captions = load_captions(man_captions);
          manifest.add_input(man_captions);
        }
        if (man_sequential && man_captions.empty()) {
          throw FormatError("--sequential requires --captions");
        }
        result = caption_transform(dataset, captions, man_sequential);
        manifest.params["task"] = "caption";
        manifest.params["sequential"] = man_sequential ? "true" : "false";
      } else if (man_repeat->parsed()) {
        result = dummy_task_transform(dataset, DummyTask::repeat, nullptr, nullptr).dataset;
        manifest.params["task"] = "repeat";
      } else {
        auto gateway = make_gateway(config, man_gateway, man_backend, man_cache);
        DummyTaskResult transformed =
            dummy_task_transform(dataset, DummyTask::paraphrase, gateway.get(), &templates);
        result = std::move(transformed.dataset);
        manifest.params["task"] = "paraphrase";
        if (!man_backend.script.empty()) manifest.add_input(man_backend.script);
        if (!transformed.failed_ids.empty()) {
          err << transformed.failed_ids.size() << " records left untransformed after "
              << "paraphrase failures\n";
        }
      }

      save_dataset(result, man_out, dataset_format_from_name(man_out_format));
      manifest.add_output(man_out);
      manifest.write_beside(man_out);
      out << "transformed dataset written to " << man_out << "\n";
      return 0;
    }

    if (ablate_cmd->parsed()) {
      Manifest manifest = base_manifest("ablate", config, templates);
      Tokenizer tokenizer(config.tokenizer);

      if (abl_budget_cmd->parsed()) {
        Dataset dataset = load_dataset(abl_in, dataset_format_from_name(abl_in_format));
        Dataset result = sample_to_token_budget(dataset, abl_budget, tokenizer, abl_seed);
        save_dataset(result, abl_out, dataset_format_from_name(abl_out_format));
        manifest.add_input(abl_in);
        manifest.add_output(abl_out);
        manifest.seeds["seed"] = std::to_string(abl_seed);
        manifest.params["op"] = "budget";
        manifest.params["budget"] = std::to_string(abl_budget);
        manifest.write_beside(abl_out);
        out << "kept " << result.size() << " of " << dataset.size() << " records\n";
      } else if (abl_match_cmd->parsed()) {
        Dataset it_dataset = load_dataset(abl_it, DatasetFormat::jsonl);
        Dataset sit_dataset = load_dataset(abl_sit, DatasetFormat::jsonl);
        auto [out_it, out_sit] =
            match_instance_lengths(it_dataset, sit_dataset, tokenizer, abl_seed, abl_tolerance);
        save_dataset(out_it, abl_out_it, DatasetFormat::jsonl);
        save_dataset(out_sit, abl_out_sit, DatasetFormat::jsonl);
        manifest.add_input(abl_it);
        manifest.add_input(abl_sit);
        manifest.add_output(abl_out_it);
        manifest.add_output(abl_out_sit);
        manifest.seeds["seed"] = std::to_string(abl_seed);
        manifest.params["op"] = "match";
        manifest.params["tolerance"] = std::to_string(abl_tolerance);
        manifest.write_beside(abl_out_it);
        manifest.write_beside(abl_out_sit);
        out << "paired " << out_it.size() << " records per side\n";
      } else if (abl_split_cmd->parsed()) {
        Dataset dataset = load_dataset(abl_in, dataset_format_from_name(abl_in_format));
        Dataset result = split_sequential(dataset, abl_delimiter);
        save_dataset(result, abl_out, dataset_format_from_name(abl_out_format));
        manifest.add_input(abl_in);
        manifest.add_output(abl_out);
        manifest.params["op"] = "split";
        manifest.write_beside(abl_out);
        out << "split " << dataset.size() << " records into " << result.size()
            << " single-task records\n";
      } else {
        Dataset dataset = load_dataset(abl_in, dataset_format_from_name(abl_in_format));
        std::vector<ChatRecord> conversations = to_multiturn(dataset, abl_delimiter);
        save_chat_records(conversations, abl_out);
        manifest.add_input(abl_in);
        manifest.add_output(abl_out);
        manifest.params["op"] = "multi";
        manifest.write_beside(abl_out);
        out << "wrote " << conversations.size() << " conversations\n";
      }
      return 0;
    }

    if (bench->parsed()) {
      Dataset seed_set = load_dataset(bench_seed_path, dataset_format_from_name(bench_format));
      auto gateway = make_gateway(config, bench_gateway, bench_backend, bench_cache);

      BenchmarkSpec spec;
      spec.iterations = bench_iterations;
      spec.ratios = parse_ratios(bench_ratios);
      spec.first_iter_actions = parse_action_pool(bench_first);
      spec.later_iter_actions = parse_action_pool(bench_later);
      spec.seed = bench_rng_seed_set ? bench_rng_seed : config.default_seed;

      BenchmarkBuild build = build_benchmark(seed_set, spec, *gateway, templates);
      save_benchmark(build.benchmark, bench_out);

      Manifest manifest = base_manifest("build-bench", config, templates);
      manifest.add_input(bench_seed_path);
      if (!bench_backend.script.empty()) manifest.add_input(bench_backend.script);
      manifest.add_output(bench_out);
      manifest.seeds["rng_seed"] = std::to_string(spec.seed);
      manifest.params["iterations"] = std::to_string(spec.iterations);
      manifest.params["ratios"] = bench_ratios;
      manifest.params["gateway"] = bench_gateway;

      if (!bench_snapshots.empty()) {
        fs::create_directories(bench_snapshots);
        for (std::size_t i = 0; i < build.snapshots.size(); ++i) {
          std::string path =
              (fs::path(bench_snapshots) / ("snapshot-it" + std::to_string(i + 1) + ".jsonl"))
                  .string();
          save_benchmark(build.snapshots[i], path);
          manifest.add_output(path);
        }
      }
      manifest.write_beside(bench_out);
      out << "benchmark of " << build.benchmark.size() << " instructions written to "
          << bench_out << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      if (eval_records.empty() == eval_bench.empty()) {
        throw FormatError("provide exactly one of --records or --bench");
      }

      std::vector<EvalRecord> records;
      Manifest manifest = base_manifest("eval", config, templates);
      if (!eval_records.empty()) {
        records = load_eval_records(eval_records);
        manifest.add_input(eval_records);
      } else {
        if (eval_responses.empty()) {
          throw FormatError("--bench requires --responses");
        }
        Dataset benchmark = load_benchmark(eval_bench);
        std::map<std::string, std::string> responses = load_responses(eval_responses);
        manifest.add_input(eval_bench);
        manifest.add_input(eval_responses);
        for (const auto& record : benchmark.records) {
          EvalRecord eval_record;
          eval_record.id = record.id;
          eval_record.instruction = record.instruction;
          eval_record.segments = record.segments;
          auto found = responses.find(record.id);
          if (found == responses.end()) {
            throw FormatError("no response for benchmark id: " + record.id);
          }
          eval_record.response = found->second;
          records.push_back(std::move(eval_record));
        }
      }
      if (!eval_references.empty()) {
        std::map<std::string, ReferenceEntry> references = load_references(eval_references);
        manifest.add_input(eval_references);
        for (auto& record : records) {
          auto found = references.find(record.id);
          if (found == references.end()) continue;
          if (found->second.final_answer) record.reference_final = found->second.final_answer;
          if (found->second.intermediates) {
            record.reference_intermediates = found->second.intermediates;
          }
        }
      }
      if (records.empty()) {
        throw EmptyEvalSet();
      }

      FollowParams params;
      params.rouge_threshold = eval_threshold;
      params.tokenizer = config.tokenizer;
      Tokenizer tokenizer(config.tokenizer);

      bool have_intermediates = std::all_of(records.begin(), records.end(), [](const EvalRecord& r) {
        return r.reference_intermediates.has_value();
      });

      std::optional<JudgeOutcome> judged;
      if (!eval_judge.empty()) {
        auto judge_gateway =
            make_gateway(config, profile_of_judge_flag(eval_judge), eval_backend, eval_cache);
        if (!eval_backend.script.empty()) manifest.add_input(eval_backend.script);
        judged = judge_responses(records, *judge_gateway, templates);
      }

      std::map<std::string, double> external_scores;
      if (!eval_external_scores.empty()) {
        manifest.add_input(eval_external_scores);
        std::ifstream ext(eval_external_scores, std::ios::binary);
        if (!ext) {
          throw IoError("cannot open external scores: " + eval_external_scores);
        }
        std::string line;
        while (std::getline(ext, line)) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          json obj = json::parse(line);
          if (obj.contains("score")) {
            external_scores[obj.value("id", "")] = obj.at("score").get<double>();
          }
        }
      }

      fs::create_directories(eval_report);
      std::string rows_path = (fs::path(eval_report) / "rows.jsonl").string();
      std::ofstream rows(rows_path, std::ios::binary | std::ios::trunc);
      if (!rows) {
        throw IoError("cannot write report rows: " + rows_path);
      }

      std::size_t followed_count = 0;
      std::size_t exact_total = 0;
      std::size_t exact_hits = 0;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const EvalRecord& record = records[i];
        json row;
        row["id"] = record.id;
        if (have_intermediates) {
          bool followed = record_followed_rouge(record, params, tokenizer);
          followed_count += followed ? 1 : 0;
          row["followed_rouge"] = followed;
          json f1s = json::array();
          for (std::size_t k = 0; k < record.reference_intermediates->size(); ++k) {
            f1s.push_back(
                rouge_l(record.response, (*record.reference_intermediates)[k], tokenizer).f1);
          }
          row["intermediate_f1_vs_response"] = f1s;
        }
        if (record.reference_final) {
          bool hit = exact_match(record.response, *record.reference_final);
          ++exact_total;
          exact_hits += hit ? 1 : 0;
          row["exact_match"] = hit;
        }
        if (judged) {
          const JudgeRow& jrow = judged->rows[i];
          if (jrow.verdict) {
            row["judge_score"] = jrow.verdict->score;
            row["judge_followed"] = jrow.verdict->followed;
          } else {
            row["judge_malformed"] = true;
          }
        }
        if (auto external = external_scores.find(record.id); external != external_scores.end()) {
          row["external_score"] = external->second;
        }
        rows << row.dump() << '\n';
      }
      rows.close();

      std::string aggregates_path = (fs::path(eval_report) / "aggregates.csv").string();
      std::ofstream aggregates(aggregates_path, std::ios::binary | std::ios::trunc);
      if (!aggregates) {
        throw IoError("cannot write aggregates: " + aggregates_path);
      }
      aggregates << "metric,value\n";
      aggregates << "records," << records.size() << "\n";
      if (have_intermediates) {
        double rate = 100.0 * static_cast<double>(followed_count) /
                      static_cast<double>(records.size());
        aggregates << "following_rate_pct," << format_metric(rate) << "\n";
      }
      if (exact_total > 0) {
        double accuracy =
            100.0 * static_cast<double>(exact_hits) / static_cast<double>(exact_total);
        aggregates << "accuracy_pct," << format_metric(accuracy) << "\n";
      }
      if (judged) {
        aggregates << "mean_judge_score," << format_metric(judged->aggregate.mean_score) << "\n";
        aggregates << "judge_follow_pct," << format_metric(judged->aggregate.follow_pct) << "\n";
        aggregates << "malformed_judgements," << judged->aggregate.malformed << "\n";
      }
      if (!eval_compare.empty()) {
        if (!judged) {
          throw FormatError("--compare requires --judge scores on this run");
        }
        manifest.add_input(eval_compare);
        std::map<std::string, int> baseline;
        std::ifstream cmp(eval_compare, std::ios::binary);
        if (!cmp) {
          throw IoError("cannot open comparison rows: " + eval_compare);
        }
        std::string line;
        while (std::getline(cmp, line)) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          json obj = json::parse(line);
          if (obj.contains("judge_score")) {
            baseline[obj.value("id", "")] = obj.at("judge_score").get<int>();
          }
        }
        std::vector<int> ours;
        std::vector<int> theirs;
        for (std::size_t i = 0; i < records.size(); ++i) {
          const JudgeRow& jrow = judged->rows[i];
          auto found = baseline.find(records[i].id);
          if (jrow.verdict && found != baseline.end()) {
            ours.push_back(jrow.verdict->score);
            theirs.push_back(found->second);
          }
        }
        aggregates << "win_rate_pct," << format_metric(win_rate(ours, theirs)) << "\n";
      }
      aggregates.close();

      manifest.params["rouge_threshold"] = format_metric(eval_threshold);
      manifest.add_output(rows_path);
      manifest.add_output(aggregates_path);
      manifest.write_beside(rows_path);
      out << "report written to " << eval_report << "\n";
      return 0;
    }

    if (stats_cmd->parsed()) {
      Dataset dataset = load_dataset(stats_in, dataset_format_from_name(stats_format));
      std::string csv;
      if (stats_verb_nouns) {
        std::map<std::pair<std::string, std::string>, std::size_t> counts;
        for (const auto& record : dataset.records) {
          VerbNoun vn = extract_verb_noun(record.instruction);
          if (vn.declined()) continue;
          counts[{vn.verb, vn.noun.value_or("")}]++;
        }
        std::vector<std::pair<std::pair<std::string, std::string>, std::size_t>> sorted(
            counts.begin(), counts.end());
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        csv = "verb,noun,count\n";
        for (const auto& [key, count] : sorted) {
          csv += key.first + "," + key.second + "," + std::to_string(count) + "\n";
        }
      } else {
        TokenizerSpec spec = config.tokenizer;
        spec.kind = stats_tokenizer == "whitespace" ? TokenizerKind::whitespace
                                                    : TokenizerKind::external_bpe;
        if (!stats_vocab.empty()) {
          spec.vocab_path = stats_vocab;
        }
        csv = stats_to_csv(dataset_stats(dataset, spec));
      }
      if (stats_out.empty()) {
        out << csv;
      } else {
        std::ofstream file(stats_out, std::ios::binary | std::ios::trunc);
        if (!file) {
          throw IoError("cannot write stats: " + stats_out);
        }
        file << csv;
        file.close();
        Manifest manifest = base_manifest("stats", config, templates);
        manifest.add_input(stats_in);
        manifest.add_output(stats_out);
        manifest.write_beside(stats_out);
      }
      return 0;
    }

    err << "no subcommand selected\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  }
}

}  // namespace seqforge
