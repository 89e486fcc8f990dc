// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "dbs/error.hpp"

namespace dbs {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based random stream. Identical keys give identical streams on
/// every platform; streams are values and are never shared between workers.
class RngStream {
public:
    constexpr explicit RngStream(std::uint64_t key) noexcept : key_(key) {}

    /// Stream for one candidate expansion, independent of evaluation order.
    static constexpr RngStream derive(std::uint64_t seed, std::uint64_t step, std::uint64_t beam,
                                      std::uint64_t candidate) noexcept {
        std::uint64_t k = splitmix64(seed);
        k = splitmix64(k ^ step);
        k = splitmix64(k ^ (beam * 0xD1B54A32D192ED03ULL));
        k = splitmix64(k ^ (candidate * 0xAEF17502108EF2D9ULL));
        return RngStream(k);
    }

    constexpr std::uint64_t next_u64() noexcept { return splitmix64(key_ + 0x632BE59BD9B4E019ULL * ++counter_); }

    /// Uniform in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw InvalidInput("RngStream::below(0)");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x < limit) return x % n;
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace dbs
