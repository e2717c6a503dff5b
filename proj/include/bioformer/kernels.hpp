// Data-parallel inner loops behind the tensor ops: fp32 GEMM and the int8
// GEMM with fixed-point requantization. Scalar kernels define the reference
// semantics; the AVX2 variants are selected at runtime and must match them
// bit-exactly (enforced by tests/test_kernels.cpp).
//
// Bit-exactness across variants holds because every fp32 output element is
// produced by the same sequence of correctly-rounded fused multiply-adds
// (std::fma in the scalar kernel, vfmadd in the AVX2 kernel, k ascending),
// and the integer path is exact arithmetic. Checkpoints therefore do not
// depend on which variant ran.
#pragma once

#include <cstdint>

namespace bioformer::kernels {

// Maps an int32 accumulator to int8: round_half_away(acc * mult * 2^-shift)
// saturated to [-127, 127]. mult/shift encode a positive real factor with
// ~2^-31 relative error; no floating point in the application path.
struct Requant {
    std::int32_t mult = 0;
    int shift = 0;
};

// Encodes real_mult as mult * 2^-shift with mult in [2^30, 2^31). The
// representable domain is [2^-32, 2^31); anything outside throws, since a
// factor that small or large means a broken scale upstream.
Requant make_requant(double real_mult);

inline std::int8_t saturate_i8(std::int64_t v) {
    if (v > 127) return 127;
    if (v < -127) return -127;
    return static_cast<std::int8_t>(v);
}

inline std::int32_t rounding_rshift(std::int64_t v, int shift) {
    if (shift <= 0) return static_cast<std::int32_t>(v);
    const std::int64_t half = std::int64_t(1) << (shift - 1);
    if (v >= 0) return static_cast<std::int32_t>((v + half) >> shift);
    return static_cast<std::int32_t>(-((-v + half) >> shift));
}

inline std::int8_t requant_one(std::int32_t acc, Requant rq) {
    return saturate_i8(rounding_rshift(std::int64_t(acc) * rq.mult, rq.shift));
}

// c[m,n] = bias[n] + sum_k a[m,k] * b[k,n]; bias may be null (zero init).
// a: M x K, b: K x N, c: M x N, all row-major.
using GemmF32Fn = void (*)(const float* a, const float* b, const float* bias,
                           float* c, int m, int k, int n);

// Same contract with int32 accumulation, then requantization to int8.
using GemmS8Fn = void (*)(const std::int8_t* a, const std::int8_t* b,
                          const std::int32_t* bias, std::int8_t* c,
                          int m, int k, int n, Requant rq);

struct Dispatch {
    GemmF32Fn gemm_f32;
    GemmS8Fn gemm_s8;
    const char* name;
};

enum class Isa { Scalar, Avx2 };

bool cpu_has_avx2();

// Active table. The default follows BIOFORMER_SIMD (scalar|avx2|auto,
// default auto) read once at first use; set_isa overrides it.
const Dispatch& active();
void set_isa(Isa isa);
Isa active_isa();
const Dispatch& table_for(Isa isa);

// Wrappers that also maintain the call/MAC counters below.
void gemm_f32(const float* a, const float* b, const float* bias, float* c,
              int m, int k, int n);
void gemm_s8(const std::int8_t* a, const std::int8_t* b,
             const std::int32_t* bias, std::int8_t* c, int m, int k, int n,
             Requant rq);

// Instrumentation: multiply-accumulate count (m*k*n per GEMM call) and
// per-kernel call counts. The MAC counter doubles as the dynamic oracle for
// the closed-form cost model; the call counters back the integer-graph audit.
struct Stats {
    std::uint64_t macs = 0;
    std::uint64_t gemm_f32_calls = 0;
    std::uint64_t gemm_s8_calls = 0;
};
Stats stats();
void reset_stats();

}  // namespace bioformer::kernels
