#pragma once

#include <cstdint>

namespace svcg {

// SplitMix64 finalizer. Child seeds are derived as mix(root ^ mix(stream + 1)),
// so replication k of a run seeded with r always sees the same generator.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream + 1));
}

}  // namespace svcg
