#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace msda {

// Deterministic RNG wrapper. Distributions are hand-rolled on top of
// mt19937 so that sequences are stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    // Uniform in [0, 1) with 24 bits of mantissa.
    float unit() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * unit(); }

    double unit_double() {
        const std::uint64_t hi = gen_(), lo = gen_();
        return static_cast<double>((hi << 21) ^ lo) / 9007199254740992.0; // 2^53
    }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    float normal(float mean = 0.0f, float stddev = 1.0f) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        float u, v, s;
        do {
            u = 2.0f * unit() - 1.0f;
            v = 2.0f * unit() - 1.0f;
            s = u * u + v * v;
        } while (s >= 1.0f || s == 0.0f);
        const float k = std::sqrt(-2.0f * std::log(s) / s);
        spare_ = v * k;
        has_spare_ = true;
        return mean + stddev * u * k;
    }

    std::uint32_t next_u32() { return gen_(); }

private:
    std::mt19937 gen_;
    float spare_ = 0.0f;
    bool has_spare_ = false;
};

} // namespace msda
