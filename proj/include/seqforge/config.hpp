#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "seqforge/corpus.hpp"

namespace seqforge {

struct GatewayProfile {
  std::string endpoint;  // falls back to SEQFORGE_API_BASE
  std::string model = "default";
  std::string credential_env = "SEQFORGE_API_KEY";
  double temperature = 0.7;
  int max_tokens = 1024;
  std::optional<std::string> cache_dir;
  int max_in_flight = 4;
  int retry_limit = 4;
  int retry_initial_ms = 500;
};

// Declarative run configuration: gateway profiles, tokenizer, template
// overrides and default seed. Flags override config values; defaults last.
struct Config {
  std::map<std::string, GatewayProfile> profiles;
  TokenizerSpec tokenizer;
  std::optional<std::string> templates_dir;
  std::int64_t default_seed = 0;
  std::string digest;  // content hash of the loaded file (or of the defaults)

  static Config defaults();
  // JSON file; "${VAR}" in string values interpolates environment variables.
  static Config from_file(const std::string& path);

  const GatewayProfile& profile(const std::string& name) const;  // throws FormatError
};

std::string interpolate_env(const std::string& value);

}  // namespace seqforge
