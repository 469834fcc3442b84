#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace moprune {

/// SplitMix64 finalizer. Used to derive independent child seeds from a parent
/// seed and a tag so that every stream in a run is addressable by name.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept
{
    return mix64(mix64(parent) ^ mix64(tag + 0x632BE59BD9B4E019ULL));
}

// Stream tags.
namespace seed_tag {
inline constexpr std::uint64_t run = 0x52554E;        // master -> run
inline constexpr std::uint64_t ood_pool = 0x4F4F44;   // run -> pool sampling
inline constexpr std::uint64_t evolution = 0x45564F;  // run -> operators
inline constexpr std::uint64_t training = 0x545241;   // run -> per-eval training
}  // namespace seed_tag

/// Anything that yields uniform doubles in [0, 1).
template <typename G>
concept UniformSource = requires(G g) {
    { g.uniform() } -> std::convertible_to<double>;
};

/// mt19937_64 with distribution helpers whose output does not depend on the
/// standard library implementation (std::uniform_*_distribution and
/// std::shuffle are implementation-defined).
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform()
    {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t bound)
    {
        if (bound <= 1) return 0;
        // 2^64 mod bound; values below it would bias the low residues.
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t x = engine_();
            if (x >= threshold) return x % bound;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call, second discarded).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::span<T> values)
    {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace moprune
