#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace lpaf {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Order-sensitive mix of seed components. Used to derive per-item seeds
/// (trajectory, episode, arm) so results never depend on scheduling.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

inline std::uint64_t angle_key(double theta_deg) {
  std::uint64_t bits = 0;
  double t = theta_deg == 0.0 ? 0.0 : theta_deg; // fold -0 onto +0
  std::memcpy(&bits, &t, sizeof bits);
  return bits;
}

using Rng = std::mt19937_64;

/// Uniform in [lo, hi). Spelled out instead of std::uniform_real_distribution
/// because the latter's output is implementation-defined.
inline double uniform(Rng& rng, double lo, double hi) {
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

/// Fisher-Yates with uniform_index; std::shuffle is implementation-defined too.
template <class It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

/// FNV-1a, used for content digests.
class Digest {
public:
  void update(const void* data, std::size_t n) {
    auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <class T>
  void update_pod(const T& v) { update(&v, sizeof v); }

  std::uint64_t value() const { return h_; }

  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h_ >> (4 * i)) & 0xF];
    return out;
  }

private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

} // namespace lpaf
