#include "bioformer/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>

#include "bioformer/error.hpp"

namespace bioformer::kernels {

void gemm_f32_scalar(const float* a, const float* b, const float* bias,
                     float* c, int m, int k, int n);
void gemm_s8_scalar(const std::int8_t* a, const std::int8_t* b,
                    const std::int32_t* bias, std::int8_t* c, int m, int k,
                    int n, Requant rq);
#if defined(BIOFORMER_HAVE_AVX2)
void gemm_f32_avx2(const float* a, const float* b, const float* bias,
                   float* c, int m, int k, int n);
void gemm_s8_avx2(const std::int8_t* a, const std::int8_t* b,
                  const std::int32_t* bias, std::int8_t* c, int m, int k,
                  int n, Requant rq);
#endif

Requant make_requant(double real_mult) {
    if (!(real_mult > 0.0) || !std::isfinite(real_mult))
        throw NumericError("requant multiplier must be finite and positive, got " +
                           std::to_string(real_mult));
    // Normalize the significand into [2^30, 2^31) so the fixed-point
    // multiplier keeps 31 bits of precision regardless of magnitude.
    int exp = 0;
    const double frac = std::frexp(real_mult, &exp);  // frac in [0.5, 1)
    auto q = static_cast<std::int64_t>(std::llround(frac * (1ll << 31)));
    if (q == (1ll << 31)) {  // frac rounded up to exactly 1.0
        q >>= 1;
        ++exp;
    }
    const int shift = 31 - exp;
    if (shift < 0)
        throw NumericError("requant multiplier too large: " + std::to_string(real_mult));
    // Beyond shift 62 the normalized encoding underflows (and the int64
    // rounding shift would be undefined). Such a factor maps every
    // representable accumulator to zero, which always indicates a broken
    // scale somewhere upstream.
    if (shift > 62)
        throw NumericError("requant multiplier too small: " + std::to_string(real_mult));
    return Requant{static_cast<std::int32_t>(q), shift};
}

bool cpu_has_avx2() {
#if defined(BIOFORMER_HAVE_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const Dispatch kScalarTable{&gemm_f32_scalar, &gemm_s8_scalar, "scalar"};
#if defined(BIOFORMER_HAVE_AVX2)
const Dispatch kAvx2Table{&gemm_f32_avx2, &gemm_s8_avx2, "avx2"};
#endif

Isa pick_default_isa() {
    if (const char* env = std::getenv("BIOFORMER_SIMD")) {
        const std::string v(env);
        if (v == "scalar") return Isa::Scalar;
        if (v == "avx2") {
            if (!cpu_has_avx2())
                throw ConfigError("BIOFORMER_SIMD=avx2 but this CPU lacks AVX2+FMA");
            return Isa::Avx2;
        }
        if (v != "auto" && !v.empty())
            throw ConfigError("BIOFORMER_SIMD must be scalar, avx2, or auto, got '" + v + "'");
    }
    return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

Isa g_isa = pick_default_isa();
Stats g_stats{};

}  // namespace

const Dispatch& table_for(Isa isa) {
#if defined(BIOFORMER_HAVE_AVX2)
    if (isa == Isa::Avx2) return kAvx2Table;
#else
    if (isa == Isa::Avx2)
        throw ConfigError("AVX2 kernels were not compiled into this binary");
#endif
    return kScalarTable;
}

const Dispatch& active() { return table_for(g_isa); }

void set_isa(Isa isa) {
    if (isa == Isa::Avx2 && !cpu_has_avx2())
        throw ConfigError("cannot select AVX2 kernels: CPU lacks AVX2+FMA");
    g_isa = isa;
}

Isa active_isa() { return g_isa; }

void gemm_f32(const float* a, const float* b, const float* bias, float* c,
              int m, int k, int n) {
    g_stats.macs += std::uint64_t(m) * std::uint64_t(k) * std::uint64_t(n);
    g_stats.gemm_f32_calls += 1;
    active().gemm_f32(a, b, bias, c, m, k, n);
}

void gemm_s8(const std::int8_t* a, const std::int8_t* b,
             const std::int32_t* bias, std::int8_t* c, int m, int k, int n,
             Requant rq) {
    g_stats.macs += std::uint64_t(m) * std::uint64_t(k) * std::uint64_t(n);
    g_stats.gemm_s8_calls += 1;
    active().gemm_s8(a, b, bias, c, m, k, n, rq);
}

Stats stats() { return g_stats; }

void reset_stats() { g_stats = Stats{}; }

}  // namespace bioformer::kernels
