#pragma once

#include <cstdint>
#include <random>

namespace streamfed {

using Rng = std::mt19937_64;

/// Purpose tags for derived random streams. Every random draw in the
/// simulator comes from a stream keyed by (root seed, purpose, a, b), so the
/// order in which clients are simulated never changes the result.
enum class StreamPurpose : std::uint64_t {
  Arrivals = 1,       // counting-process realization, keyed (client, round)
  SampleData = 2,     // feature/label generation, keyed (client, round)
  MinibatchIndex = 3, // index sampling, keyed (client, round)
  Participation = 4,  // client selection, keyed (round, 0)
  Evaluation = 5,     // Monte-Carlo evaluation draws, keyed (client, set id)
  GroundTruth = 6,    // synthetic model parameters, keyed (client, 0)
  Warmup = 7,         // constant-estimation SGD, keyed (client, 0)
  Probe = 8,          // random probe points, keyed (a, b)
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, StreamPurpose purpose,
                                    std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t h = mix64(root);
  h = mix64(h ^ static_cast<std::uint64_t>(purpose));
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t root, StreamPurpose purpose, std::uint64_t a,
                    std::uint64_t b) {
  return Rng(derive_seed(root, purpose, a, b));
}

}  // namespace streamfed
