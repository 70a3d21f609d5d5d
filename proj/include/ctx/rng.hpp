#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ctx {

/// Deterministic 64-bit generator (splitmix64 core). The standard library
/// distributions are not bit-stable across implementations, so all draws go
/// through the helpers below; identical seeds give identical streams on every
/// platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Derives an independent child stream from a root seed, a stream name and
    /// an index. All project randomness flows from one root seed through here.
    static Rng substream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0);

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Standard normal via Box-Muller.
    double normal();

    /// Chooses k distinct indices from [0, n) uniformly (partial Fisher-Yates),
    /// returned in ascending order.
    std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ctx
