#pragma once

#include <cstdint>
#include <vector>

namespace mmali {

/// Seedable PRNG used everywhere in the project: xoshiro256++ with
/// splitmix64 state expansion. Substreams are derived from (seed, stream)
/// so workers and iterations get independent, reproducible streams.
/// Gaussian variates come from a cached Box-Muller transform so runs are
/// bit-identical on one platform regardless of the C++ standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);

    /// Standard normal variate.
    double normal();

    /// Integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n);

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mmali
