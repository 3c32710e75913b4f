// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>

namespace mgc {

/// PCG64 (XSL-RR 128/64) generator.
///
/// Seeding follows the reference `pcg_setseq_128_srandom_r`: the state starts
/// at zero, the increment is `(stream << 1) | 1`, the generator is stepped,
/// the seed is added and the generator is stepped again. Both `seed` and
/// `stream` are widened from 64 to 128 bits by zero extension.
///
/// Every stochastic routine in the library takes one of these explicitly, so
/// a (seed, stream) pair fully determines its output on every platform.
class Pcg64 {
   public:
    using result_type = std::uint64_t;

    static constexpr std::uint64_t kDefaultStream = 0xda3e39cb94b95bdbULL;

    explicit Pcg64(std::uint64_t seed = 0, std::uint64_t stream = kDefaultStream) {
        reseed(seed, stream);
    }

    void reseed(std::uint64_t seed, std::uint64_t stream = kDefaultStream) {
        state_ = 0;
        inc_ = (static_cast<uint128>(stream) << 1) | 1u;
        step();
        state_ += seed;
        step();
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        step();
        const auto hi = static_cast<std::uint64_t>(state_ >> 64);
        const auto lo = static_cast<std::uint64_t>(state_);
        const auto xored = hi ^ lo;
        const auto rot = static_cast<unsigned>(state_ >> 122);
        return (xored >> rot) | (xored << ((-rot) & 63u));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, bound) (Lemire's multiply-and-reject). bound > 0.
    std::uint64_t below(std::uint64_t bound) {
        uint128 m = static_cast<uint128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<uint128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Fisher-Yates shuffle driven by `below`, identical across standard libraries.
    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

   private:
    __extension__ typedef unsigned __int128 uint128;

    static constexpr uint128 kMultiplier =
        (static_cast<uint128>(0x2360ed051fc65da4ULL) << 64) | 0x4385df649fccf645ULL;

    void step() { state_ = state_ * kMultiplier + inc_; }

    uint128 state_ = 0;
    uint128 inc_ = 1;
};

}  // namespace mgc
