#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace fedstgd {

/// Counter-based generator: value i of stream s is a pure function of
/// (seed, s, i), so draws are reproducible on every platform and can be
/// taken out of order.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ULL)))
    {
    }

    std::uint64_t bits(std::uint64_t counter) const { return mix(key_ + counter * 0x9e3779b97f4a7c15ULL); }

    /// Uniform in (0, 1).
    double uniform(std::uint64_t counter) const
    {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller over counters 2i and 2i+1.
    double normal(std::uint64_t index) const
    {
        const double u1 = uniform(2 * index);
        const double u2 = uniform(2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Sequential convenience cursor.
    double next_normal() { return normal(cursor_++); }
    double next_uniform() { return uniform(1'000'000'007ULL + cursor_++); }
    std::uint64_t next_bits() { return bits(2'000'000'011ULL + cursor_++); }

    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t key_;
    std::uint64_t cursor_ = 0;
};

} // namespace fedstgd
