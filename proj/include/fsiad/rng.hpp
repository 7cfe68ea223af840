#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace fsiad {

// Mixes several integers into one 64-bit seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

// Deterministic random source. The engine is a fixed-width Mersenne Twister and
// every derived distribution is computed here rather than through <random>
// distributions, whose algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    // Standard normal via Box-Muller; no cached spare, so the state is just the engine.
    double normal();

    std::string state() const;
    void restore(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

Rng seeded_rng(std::uint64_t seed);

}  // namespace fsiad
