#pragma once

#include <cstdint>
#include <limits>

namespace eti::detail {

inline constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// SplitMix64: a counter passed through a bijective mixer. Cheap to
/// construct, so every (individual, period) cell gets its own stream.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit constexpr CounterRng(std::uint64_t key) : counter_(key) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()()
    {
        counter_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = counter_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t counter_;
};

/// Independent stream keyed by (seed, a, b, c).
inline constexpr CounterRng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                   std::uint64_t c = 0)
{
    std::uint64_t k = mix64(seed);
    k = mix64(k ^ mix64(a + 0x1000));
    k = mix64(k ^ mix64(b + 0x2000));
    k = mix64(k ^ mix64(c + 0x3000));
    return CounterRng(k);
}

} // namespace eti::detail
