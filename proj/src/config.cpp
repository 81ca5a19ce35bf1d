#include "seqforge/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/hash.hpp"

namespace seqforge {

using nlohmann::json;

std::string interpolate_env(const std::string& value) {
  std::string out;
  std::size_t pos = 0;
  while (pos < value.size()) {
    std::size_t open = value.find("${", pos);
    if (open == std::string::npos) {
      out.append(value.substr(pos));
      break;
    }
    std::size_t close = value.find('}', open + 2);
    if (close == std::string::npos) {
      out.append(value.substr(pos));
      break;
    }
    out.append(value.substr(pos, open - pos));
    std::string name = value.substr(open + 2, close - open - 2);
    if (const char* env = std::getenv(name.c_str())) {
      out.append(env);
    }
    pos = close + 1;
  }
  return out;
}

namespace {

std::string get_interpolated(const json& obj, const char* key, const std::string& fallback) {
  if (obj.contains(key) && obj.at(key).is_string()) {
    return interpolate_env(obj.at(key).get<std::string>());
  }
  return fallback;
}

GatewayProfile profile_from_json(const json& obj, const GatewayProfile& base) {
  GatewayProfile profile = base;
  profile.endpoint = get_interpolated(obj, "endpoint", base.endpoint);
  profile.model = get_interpolated(obj, "model", base.model);
  profile.credential_env = get_interpolated(obj, "credential_env", base.credential_env);
  profile.temperature = obj.value("temperature", base.temperature);
  profile.max_tokens = obj.value("max_tokens", base.max_tokens);
  if (obj.contains("cache_dir") && obj.at("cache_dir").is_string()) {
    profile.cache_dir = interpolate_env(obj.at("cache_dir").get<std::string>());
  }
  profile.max_in_flight = obj.value("max_in_flight", base.max_in_flight);
  profile.retry_limit = obj.value("retry_limit", base.retry_limit);
  profile.retry_initial_ms = obj.value("retry_initial_ms", base.retry_initial_ms);
  return profile;
}

}  // namespace

Config Config::defaults() {
  Config config;
  GatewayProfile generation;  // temperature 0.7 for rewriting and responses
  config.profiles["default"] = generation;

  GatewayProfile bench = generation;  // separate profile keeps the benchmark model apart
  config.profiles["bench"] = bench;

  GatewayProfile judge = generation;
  judge.temperature = 0.0;
  config.profiles["judge"] = judge;

  config.digest = sha256_hex("builtin-defaults");
  return config;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open config: " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::string raw = buffer.str();

  json root;
  try {
    root = json::parse(raw);
  } catch (const json::exception& ex) {
    throw FormatError("invalid config JSON: " + std::string(ex.what()));
  }

  Config config = defaults();
  config.digest = sha256_hex(raw);

  if (root.contains("tokenizer") && root.at("tokenizer").is_object()) {
    const json& tok = root.at("tokenizer");
    std::string kind = tok.value("kind", "whitespace");
    if (kind == "whitespace") {
      config.tokenizer.kind = TokenizerKind::whitespace;
    } else if (kind == "external_bpe") {
      config.tokenizer.kind = TokenizerKind::external_bpe;
    } else {
      throw FormatError("unknown tokenizer kind: " + kind);
    }
    if (tok.contains("vocab_path") && tok.at("vocab_path").is_string()) {
      config.tokenizer.vocab_path = interpolate_env(tok.at("vocab_path").get<std::string>());
    }
  }

  if (root.contains("templates") && root.at("templates").is_object()) {
    const json& templates = root.at("templates");
    if (templates.contains("dir") && templates.at("dir").is_string()) {
      config.templates_dir = interpolate_env(templates.at("dir").get<std::string>());
    }
  }

  config.default_seed = root.value("seed", config.default_seed);

  if (root.contains("profiles") && root.at("profiles").is_object()) {
    GatewayProfile base;
    for (const auto& [name, value] : root.at("profiles").items()) {
      auto existing = config.profiles.find(name);
      config.profiles[name] = profile_from_json(
          value, existing != config.profiles.end() ? existing->second : base);
    }
  }
  return config;
}

const GatewayProfile& Config::profile(const std::string& name) const {
  auto it = profiles.find(name);
  if (it == profiles.end()) {
    throw FormatError("no gateway profile named `" + name + "` in config");
  }
  return it->second;
}

}  // namespace seqforge
