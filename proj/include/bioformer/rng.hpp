// Deterministic random source. mt19937_64 output is pinned by the C++
// standard, and all derived draws below use only basic IEEE arithmetic, so
// a fixed seed yields identical streams across platforms and compilers
// (std::*_distribution is implementation-defined and must not be used here).
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bioformer {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
    std::uint64_t uniform_int(std::uint64_t n) { return gen_() % n; }

    // Irwin-Hall sum of 12 uniforms: mean 0, variance 1, support [-6, 6].
    // Chosen over Box-Muller to keep the stream free of libm calls.
    float gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return static_cast<float>(s - 6.0);
    }

    // Fisher-Yates with an explicit draw order (std::shuffle is
    // implementation-defined).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace bioformer
