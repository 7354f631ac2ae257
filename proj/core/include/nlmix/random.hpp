#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace nlmix {

/// The random stream type used throughout. Streams are always passed
/// explicitly; nothing in the library owns a global generator.
using Rng = std::mt19937_64;

/// Derives an independent stream from a root seed and a path of indices,
/// e.g. make_stream(seed, {replicate, cluster, iteration}). The same
/// (seed, path) always yields the same stream.
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {});

/// SplitMix64 finalizer; exposed for tests.
std::uint64_t mix64(std::uint64_t x);

double standard_normal(Rng& rng);
double standard_exponential(Rng& rng);
/// Uniform on the open interval (0, 1).
double open_uniform(Rng& rng);

}  // namespace nlmix
