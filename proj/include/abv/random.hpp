#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace abv {

using Rng = std::mt19937_64;

/// One seed, many independent named substreams. A module asking for its own
/// stream never shifts the draws seen by another module.
class RandomStreams {
 public:
  explicit RandomStreams(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  Rng stream(std::string_view name) const;
  Rng stream(std::string_view name, std::uint64_t index) const;

 private:
  std::uint64_t seed_;
};

std::uint64_t fnv1a(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace abv
