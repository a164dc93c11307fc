#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace sgdtail {

/// SplitMix64 finalizer. Used both as the stream generator and as the key mixer.
inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a purpose tag, so child seeds can be named instead of numbered.
inline constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Child seed for (master, purpose, index). Distinct triples give unrelated streams.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                           std::uint64_t index = 0) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ hash_tag(tag));
  return splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Counter-style generator: the whole stream is a pure function of its key, so any
/// (seed, purpose, index) stream can be rebuilt without replaying its predecessors.
/// Satisfies UniformRandomBitGenerator.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit StreamRng(std::uint64_t key) noexcept : state_(key) {}
  StreamRng(std::uint64_t master, std::string_view tag, std::uint64_t index = 0,
            std::uint64_t sub = 0) noexcept
      : state_(derive_seed(derive_seed(master, tag, index), "sub", sub)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in the open interval (0, 1).
  constexpr double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

}  // namespace sgdtail
