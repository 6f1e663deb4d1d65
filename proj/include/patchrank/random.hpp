#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace patchrank {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Stream seed for one image in one epoch: hash(global_seed, image_id, epoch).
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view image_id,
                                 std::uint64_t epoch) {
  return splitmix64(splitmix64(global_seed ^ fnv1a(image_id)) + epoch);
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t stream) {
  return splitmix64(splitmix64(global_seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

}  // namespace patchrank
