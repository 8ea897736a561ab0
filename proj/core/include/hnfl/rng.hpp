#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace hnfl {

/// Deterministic counter-based generator (splitmix64 core). Behaves
/// identically on every platform, which the replay and resume machinery
/// depends on; std:: distributions are implementation-defined and are
/// deliberately not used anywhere.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Modulo bias is far below anything observable at our draw counts.
    return next_u64() % n;
  }

  /// Standard normal via Box-Muller. One draw per call, no cached spare,
  /// so the stream position is a pure function of the call count.
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates with our own integer draws.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Current counter. Rng(state()) resumes the stream exactly, which the
  /// checkpoint format relies on.
  std::uint64_t state() const { return state_; }

private:
  std::uint64_t state_;
};

/// Derives a named sub-seed from a master seed. The master seed fans out to
/// independent streams (partition, init, sampling, batching, ...) so each
/// stage can be replayed in isolation.
std::uint64_t mix_seed(std::uint64_t base, std::string_view tag);
std::uint64_t mix_seed(std::uint64_t base, std::string_view tag, std::uint64_t a);
std::uint64_t mix_seed(std::uint64_t base, std::string_view tag, std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t base, std::string_view tag, std::uint64_t a, std::uint64_t b,
                       std::uint64_t c);

}  // namespace hnfl
