#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace zmfc {

// Counter-based random numbers (Philox4x32-10, Salmon et al. SC'11).
//
// Every draw is addressed by (seed; stream, id, step, block) instead of by a
// mutable generator state. Stepping particle i at time step k consumes exactly
// the counters tagged (i, k), so results do not depend on thread count and a
// run can be restarted from any step without replaying the prefix.
class CounterRng {
public:
    // Substream tags. Keeping them disjoint means e.g. initial-condition draws
    // never collide with path noise under the same seed.
    enum Stream : std::uint32_t {
        kPathNoise = 0,   // Brownian increments of the separated system
        kInitDraw = 1,    // random initial conditions
        kChainPath = 2,   // Markov chain holding times / jump targets
        kOriginalNoise = 3, // Brownian increments B of the original problem
        kOptimizer = 4,   // cross-entropy population sampling
    };

    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
        constexpr std::uint32_t kWeylA = 0x9E3779B9u;
        constexpr std::uint32_t kWeylB = 0xBB67AE85u;
        constexpr std::uint32_t kMulA = 0xD2511F53u;
        constexpr std::uint32_t kMulB = 0xCD9E8D57u;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMulA) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMulB) * ctr[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeylA;
            key[1] += kWeylB;
        }
        return ctr;
    }

    // Two independent standard normals for counter (stream, id, step, block).
    std::array<double, 2> normal_pair(Stream stream, std::uint32_t id, std::uint64_t step,
                                      std::uint32_t block) const {
        const auto words = words_at(stream, id, step, block);
        const double u1 = to_unit(words[0], words[1]);
        const double u2 = to_unit(words[2], words[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

    // Uniform in (0,1) addressed by a flat draw index within the substream.
    double uniform(Stream stream, std::uint32_t id, std::uint64_t draw) const {
        const auto words = words_at(stream, id, draw, 0);
        return to_unit(words[0], words[1]);
    }

    // Fills out with standard normals consuming blocks 0..ceil(n/2)-1.
    void fill_normals(Stream stream, std::uint32_t id, std::uint64_t step,
                      std::span<double> out) const {
        for (std::size_t j = 0; j < out.size(); j += 2) {
            const auto z = normal_pair(stream, id, step, static_cast<std::uint32_t>(j / 2));
            out[j] = z[0];
            if (j + 1 < out.size()) out[j + 1] = z[1];
        }
    }

private:
    std::array<std::uint32_t, 4> words_at(Stream stream, std::uint32_t id, std::uint64_t step,
                                          std::uint32_t block) const {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), id,
            (static_cast<std::uint32_t>(stream) << 28) | (block & 0x0FFFFFFFu)};
        const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                                  static_cast<std::uint32_t>(seed_ >> 32)};
        return philox(ctr, key);
    }

    // 53-bit mantissa from two 32-bit words, offset by half an ulp so the
    // result is strictly inside (0,1); log() above must never see 0.
    static double to_unit(std::uint32_t a, std::uint32_t b) {
        const std::uint64_t x = (static_cast<std::uint64_t>(a) << 32) | b;
        return (static_cast<double>(x >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    std::uint64_t seed_;
};

// Sequential cursor over a CounterRng substream, for consumers that need a
// variable number of draws (e.g. jump chain simulation).
class SubstreamCursor {
public:
    SubstreamCursor(const CounterRng& rng, CounterRng::Stream stream, std::uint32_t id)
        : rng_(&rng), stream_(stream), id_(id) {}

    double uniform() { return rng_->uniform(stream_, id_, next_++); }

private:
    const CounterRng* rng_;
    CounterRng::Stream stream_;
    std::uint32_t id_;
    std::uint64_t next_ = 0;
};

} // namespace zmfc
