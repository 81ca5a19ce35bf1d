#pragma once

#include <map>
#include <string>

namespace seqforge {

// Reproducibility sidecar written next to every output file
// (<output>.manifest.json): a run is reconstructable from its manifest plus
// the inputs. No timestamps, so identical runs produce identical manifests.
struct Manifest {
  std::string command;
  std::string config_digest;
  std::map<std::string, std::string> params;
  std::map<std::string, std::string> seeds;
  std::map<std::string, std::string> template_versions;
  std::map<std::string, std::string> inputs;   // path -> content digest
  std::map<std::string, std::string> outputs;  // path -> content digest

  void add_input(const std::string& path);
  void add_output(const std::string& path);

  std::string to_json() const;
  // Writes <output_path>.manifest.json.
  void write_beside(const std::string& output_path) const;
};

}  // namespace seqforge
