#include "seqforge/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/hash.hpp"

namespace seqforge {

using nlohmann::json;

void Manifest::add_input(const std::string& path) {
  inputs[std::filesystem::path(path).filename().string()] = sha256_file_hex(path);
}

void Manifest::add_output(const std::string& path) {
  outputs[std::filesystem::path(path).filename().string()] = sha256_file_hex(path);
}

std::string Manifest::to_json() const {
  json obj;
  obj["tool"] = "seqforge";
  obj["command"] = command;
  obj["config_digest"] = config_digest;
  obj["params"] = params;
  obj["seeds"] = seeds;
  obj["templates"] = template_versions;
  obj["inputs"] = inputs;
  obj["outputs"] = outputs;
  return obj.dump(2) + "\n";
}

void Manifest::write_beside(const std::string& output_path) const {
  std::string path = output_path + ".manifest.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write manifest: " + path);
  }
  out << to_json();
}

}  // namespace seqforge
