#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace pudet {

// splitmix64; used to derive independent substream seeds (e.g. one per scene).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic generator with portable output. std::mt19937_64 produces a
// standard-specified stream; the value transforms below are hand-rolled because
// std::*_distribution output is implementation-defined and would break
// cross-platform reproducibility of datasets and training runs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds; bias is O(2^-53), irrelevant at the range sizes used here
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform() * (static_cast<double>(hi) - lo + 1.0));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, cosine branch only (no cached spare, keeps the state trivial)
    double normal(double mean, double stddev) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // first k elements become a uniform sample without replacement
    template <typename T>
    void partial_shuffle(std::vector<T>& v, std::size_t k) {
        const std::size_t n = v.size();
        for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
            const std::size_t j =
                i + static_cast<std::size_t>(uniform_int(0, static_cast<int>(n - i) - 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace pudet
