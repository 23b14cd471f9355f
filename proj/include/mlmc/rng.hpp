#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace mlmc {

/// Stateless 64-bit mixer (splitmix64 finalizer). Used to expand seeds and to
/// hash (base_seed, level, sample_index, purpose) tuples into stream seeds.
inline std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Combine a sequence of 64-bit words into one seed, order-sensitive.
inline std::uint64_t hash_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t h = mix64(base);
    for (std::uint64_t v : path)
        h = mix64(h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)));
    return h;
}

/// Deterministic pseudo-random stream (xoshiro256++) with portable uniform and
/// normal draws. One stream must not be shared across concurrent samplers;
/// derive independent streams per (level, sample, purpose) instead.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed)
    {
        // expand the seed through splitmix64 so nearby seeds give unrelated states
        std::uint64_t s = seed;
        for (auto& w : state_) {
            s = mix64(s);
            w = s;
        }
        if (state_[0] == 0 && state_[1] == 0 && state_[2] == 0 && state_[3] == 0)
            state_[0] = 0x9e3779b97f4a7c15ull;
    }

    /// Stream derived from a base seed and an identification path, e.g.
    /// {purpose, level, sample_index}.
    static RngStream derive(std::uint64_t base_seed, std::initializer_list<std::uint64_t> path)
    {
        return RngStream(hash_seed(base_seed, path));
    }

    std::uint64_t next_u64()
    {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    double normal()
    {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // u1 in (0,1] so log is finite
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * pi * u2;
        cached_ = r * std::sin(th);
        has_cached_ = true;
        return r * std::cos(th);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

private:
    static constexpr double pi = 3.14159265358979323846;

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
    double cached_ = 0.0;
    bool has_cached_ = false;
};

/// Identifies independent families of rng streams so coupled samplers,
/// warm-up batches and studies never collide on the same sequence.
enum class StreamPurpose : std::uint64_t {
    EstimatorSample = 1,
    McSample = 2,
    ConvergenceSample = 3,
    CgvCompareSample = 4,
    BenchSample = 5,
    Generic = 6,
};

inline RngStream sample_stream(std::uint64_t base_seed, StreamPurpose purpose, int level,
                               std::int64_t sample_index)
{
    return RngStream::derive(base_seed, {static_cast<std::uint64_t>(purpose),
                                         static_cast<std::uint64_t>(level),
                                         static_cast<std::uint64_t>(sample_index)});
}

} // namespace mlmc
