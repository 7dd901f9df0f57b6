#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace veridian {

// Platform-stable random stream. std::mt19937_64 is fully specified by the
// standard; the distributions in <random> are not, so the conversions to
// uniform/normal variates are done here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    // Standard normal via Box-Muller (one variate per call, no caching).
    double normal();

    // Normal(0, stddev) resampled until |z| <= 2 stddev.
    double truncated_normal(double stddev);

    template <typename T> void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Derives an independent seed for a named sub-stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace veridian
