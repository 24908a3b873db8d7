#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "tfnas/netbuild.hpp"

namespace tfnas::oracle {

// Random ids in [2, vocab). Next-token targets, or one to three masked
// positions per sequence with the rest ignored.
inline Minibatch random_batch(std::size_t n, std::size_t t, std::size_t vocab, std::uint64_t seed,
                              bool masked = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> id(2, static_cast<std::int64_t>(vocab) - 1);
  Minibatch b;
  b.batch_size = n;
  b.seq_len = t;
  b.tokens.resize(n * t);
  b.targets.resize(n * t);
  for (auto& x : b.tokens) x = id(rng);
  for (std::size_t i = 0; i < n * t; ++i) b.targets[i] = masked ? kIgnoreTarget : id(rng);
  if (masked) {
    std::uniform_int_distribution<std::size_t> pos(0, t - 1);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t count = 1 + rng() % 3;
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t p = s * t + pos(rng);
        if (b.targets[p] != kIgnoreTarget) continue;
        b.targets[p] = b.tokens[p];
        b.tokens[p] = kMaskToken;
      }
    }
  }
  return b;
}

}  // namespace tfnas::oracle
