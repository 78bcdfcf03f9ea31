#pragma once

#include <cstdint>
#include <initializer_list>

namespace pconv {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for a sub-stream identified by (master, keys...). Order sensitive.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) noexcept
{
    std::uint64_t s = mix64(master);
    for (std::uint64_t k : keys) {
        s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return s;
}

} // namespace pconv
