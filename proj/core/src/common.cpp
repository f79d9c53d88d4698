#include "mavtrack/common.hpp"

namespace mavtrack {

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  std::uint64_t h = splitmix(base);
  h = splitmix(h ^ splitmix(a + 0x243f6a8885a308d3ULL));
  h = splitmix(h ^ splitmix(b + 0x13198a2e03707344ULL));
  h = splitmix(h ^ splitmix(c + 0xa4093822299f31d0ULL));
  return h;
}

}  // namespace mavtrack
