#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace metastruct {

using Rng = std::mt19937_64;

/// Child seed for a named random stream. Streams are keyed by purpose so that
/// adding a new stage never perturbs existing ones.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose);
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace metastruct
