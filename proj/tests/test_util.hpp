#pragma once

#include <atomic>
#include <string>
#include <vector>

#include <unistd.h>

#include "seqforge/rng.hpp"

namespace seqforge::test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const;

 private:
  std::string path_;
};

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

std::string random_token(KeyedRng& rng, int alphabet = 4);
std::vector<std::string> random_tokens(KeyedRng& rng, std::size_t max_len, int alphabet = 4);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace seqforge::test
