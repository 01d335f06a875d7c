#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace protoedit {

// One engine type everywhere so checkpoints can serialize its state.
using Rng = std::mt19937_64;

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

// Derives an independent stream for work item `index` from a base seed so
// parallel loops stay deterministic regardless of thread count.
Rng derive_rng(std::uint64_t seed, std::uint64_t index);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace protoedit
