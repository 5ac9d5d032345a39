#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace seqchess {

/// Derives an independent seed for a named substream (e.g. "game", index 17).
/// Results depend only on the inputs, so parallel work stays reproducible.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream, std::uint64_t index = 0);

/// mt19937_64 with portable helpers; std distributions are implementation
/// defined, these are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller.
    double normal();

private:
    std::mt19937_64 engine_;
};

}  // namespace seqchess
