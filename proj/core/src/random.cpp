#include "nlmix/random.hpp"

#include <cmath>

namespace nlmix {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(mix64(h)), static_cast<std::uint32_t>(mix64(h) >> 32)};
  return Rng(seq);
}

double open_uniform(Rng& rng) {
  // 53 random bits mapped to the centre of each bin: never 0 or 1.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_exponential(Rng& rng) { return -std::log(open_uniform(rng)); }

double standard_normal(Rng& rng) {
  // Marsaglia polar method without caching, so a draw never depends on the
  // state of a distribution object.
  for (;;) {
    const double u = 2.0 * open_uniform(rng) - 1.0;
    const double v = 2.0 * open_uniform(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

}  // namespace nlmix
