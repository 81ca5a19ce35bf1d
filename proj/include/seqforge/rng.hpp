#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "seqforge/hash.hpp"

namespace seqforge {

// SplitMix64 stream whose state is derived by hashing a key tuple, so draws
// are identical across platforms and independent of record processing order.
class KeyedRng {
 public:
  explicit KeyedRng(std::uint64_t raw_state) : state_(raw_state) {}

  static KeyedRng for_key(std::int64_t seed, std::string_view record_id, int iteration,
                          std::string_view salt = {}) {
    Sha256 hasher;
    std::string key = std::to_string(seed);
    key.push_back('\x1f');
    key.append(record_id);
    key.push_back('\x1f');
    key.append(std::to_string(iteration));
    key.push_back('\x1f');
    key.append(salt);
    hasher.update(key);
    auto digest = hasher.finish();
    std::uint64_t state = 0;
    for (int i = 0; i < 8; ++i) {
      state = (state << 8) | digest[i];
    }
    return KeyedRng(state);
  }

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Unbiased draw in [0, bound) via rejection sampling.
  std::uint64_t uniform_below(std::uint64_t bound) {
    if (bound == 0) {
      return 0;
    }
    std::uint64_t limit = ~0ULL - (~0ULL % bound);
    std::uint64_t value;
    do {
      value = next();
    } while (value >= limit);
    return value % bound;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace seqforge
