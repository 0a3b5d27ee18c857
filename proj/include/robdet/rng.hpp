#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace robdet {

using Rng = std::mt19937_64;

/// Independent stream keyed by (seed, k0, k1, ...). Same key, same stream.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (keys.size() + 1));
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace robdet
