#pragma once

// Counter-based random numbers.
//
// The generator is Philox4x32-10 (Salmon et al., "Parallel random numbers:
// as easy as 1, 2, 3", SC'11). A stream is addressed by a 64-bit key (the
// user seed) and a 64-bit stream id; the remaining 64 bits of the 128-bit
// counter index blocks within the stream. Every draw is a pure function of
// (seed, stream, position), so results do not depend on call order across
// streams or on threading.
//
// Uniform doubles use the top 53 bits of each 64-bit word. Normals use the
// Box-Muller transform. Integer and uniform outputs are bit-exact on every
// platform; normals are bit-exact given the same libm log/sin/cos.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fpep::rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

constexpr Block philox4x32_10(Block ctr, Key key) noexcept {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
        ctr = Block{static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                    static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
}

/// Stream tags keep different generators independent under a shared seed.
enum class StreamTag : std::uint32_t {
    User = 0,
    Haar = 1,
    Hadamard = 2,
    GaussianIid = 3,
    Rademacher = 4,
    DiagLaw = 5,
    Synthetic = 6,
    Sampler = 7,
};

class CounterRng {
public:
    CounterRng(std::uint64_t seed, StreamTag tag, std::uint32_t substream = 0) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_lo_(substream), stream_hi_(static_cast<std::uint32_t>(tag)) {}

    std::uint64_t next_u64() noexcept {
        if (buffered_ == 0) refill();
        const std::uint64_t out = buffer_[2 - buffered_];
        --buffered_;
        return out;
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double a, double b) noexcept { return a + (b - a) * uniform(); }

    /// Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) noexcept {
        if (bound <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double rademacher() noexcept { return (next_u64() >> 63) ? 1.0 : -1.0; }

    std::uint64_t position() const noexcept { return counter_; }

private:
    void refill() noexcept {
        const Block ctr{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), stream_lo_,
                        stream_hi_};
        const Block out = philox4x32_10(ctr, key_);
        buffer_[0] = (std::uint64_t{out[1]} << 32) | out[0];
        buffer_[1] = (std::uint64_t{out[3]} << 32) | out[2];
        buffered_ = 2;
        ++counter_;
    }

    Key key_;
    std::uint32_t stream_lo_;
    std::uint32_t stream_hi_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fpep::rng
