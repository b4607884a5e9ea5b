#pragma once

#include <cstdint>

namespace ccpo {

// Counter-based SplitMix64 generator.
//
// Output i of a stream with key k is splitmix64_mix(k + i * 0x9E3779B97F4A7C15),
// i = 1, 2, ...  This is bit-identical to the classic sequential SplitMix64
// seeded with k, so any implementation of SplitMix64 reproduces the draws.
//
// Streams are split by hashing (key, stream id) into a new key; child streams
// are independent of the parent's position, which lets rollout collection for
// distinct prompts run in any order (or concurrently) with identical results.
//
// Uniform doubles take the top 53 bits: u = (x >> 11) * 2^-53, u in [0, 1).
class Rng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) noexcept : key_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        ++draws_;
        return mix(key_ + counter_ * kGolden);
    }

    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Independent child stream; does not advance this stream.
    [[nodiscard]] Rng split(std::uint64_t stream) const noexcept {
        return Rng(mix(key_ ^ mix(stream + kGolden)));
    }

    // UniformRandomBitGenerator, for <random> distributions.
    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }
    result_type operator()() noexcept { return next_u64(); }

    // Total number of 64-bit words drawn from this object (instrumentation).
    std::uint64_t draws() const noexcept { return draws_; }
    std::uint64_t key() const noexcept { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::uint64_t draws_ = 0;
};

}  // namespace ccpo
