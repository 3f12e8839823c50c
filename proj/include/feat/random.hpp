#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace feat {

/// All randomness in the simulator flows through this engine. Distributions come
/// from <random>, so streams are reproducible for a given standard library.
using Rng = std::mt19937_64;

/// Derives an independent sub-seed from a parent seed and a path of integer tags
/// (a splitmix64 fold over parent, tags...).
std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> tags);

/// Random permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace feat
