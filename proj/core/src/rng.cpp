#include "hnfl/rng.hpp"

namespace hnfl {

namespace {

// splitmix64 finalizer; also used to fold extra ids into a seed.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::string_view tag) {
  return mix64(base ^ fnv1a(tag));
}

std::uint64_t mix_seed(std::uint64_t base, std::string_view tag, std::uint64_t a) {
  return mix64(mix_seed(base, tag) ^ mix64(a));
}

std::uint64_t mix_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                       std::uint64_t b) {
  return mix64(mix_seed(base, tag, a) ^ mix64(~b));
}

std::uint64_t mix_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                       std::uint64_t b, std::uint64_t c) {
  return mix64(mix_seed(base, tag, a, b) ^ mix64(c + 0x9e3779b97f4a7c15ULL));
}

}  // namespace hnfl
