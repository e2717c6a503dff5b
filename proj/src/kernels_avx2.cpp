// AVX2/FMA variants. Eight output columns per vector; the k loop stays
// outermost-inner so each output element sees the identical fma chain as
// the scalar reference (vfmadd and std::fma are both single-rounded).
#include <cmath>
#include <cstring>
#include <vector>

#include "bioformer/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace bioformer::kernels {

void gemm_f32_avx2(const float* a, const float* b, const float* bias,
                   float* c, int m, int k, int n) {
    const int n8 = n & ~7;
    for (int i = 0; i < m; ++i) {
        const float* arow = a + std::size_t(i) * k;
        float* crow = c + std::size_t(i) * n;
        for (int j = 0; j < n8; j += 8) {
            __m256 acc = bias ? _mm256_loadu_ps(bias + j) : _mm256_setzero_ps();
            const float* bcol = b + j;
            for (int kk = 0; kk < k; ++kk) {
                const __m256 av = _mm256_set1_ps(arow[kk]);
                acc = _mm256_fmadd_ps(av, _mm256_loadu_ps(bcol + std::size_t(kk) * n), acc);
            }
            _mm256_storeu_ps(crow + j, acc);
        }
        for (int j = n8; j < n; ++j) {
            float acc = bias ? bias[j] : 0.0f;
            for (int kk = 0; kk < k; ++kk)
                acc = std::fma(arow[kk], b[std::size_t(kk) * n + j], acc);
            crow[j] = acc;
        }
    }
}

void gemm_s8_avx2(const std::int8_t* a, const std::int8_t* b,
                  const std::int32_t* bias, std::int8_t* c, int m, int k,
                  int n, Requant rq) {
    std::vector<std::int32_t> acc(static_cast<std::size_t>(n));
    const int n8 = n & ~7;
    for (int i = 0; i < m; ++i) {
        if (bias) {
            std::memcpy(acc.data(), bias, std::size_t(n) * sizeof(std::int32_t));
        } else {
            std::memset(acc.data(), 0, std::size_t(n) * sizeof(std::int32_t));
        }
        const std::int8_t* arow = a + std::size_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const __m256i av = _mm256_set1_epi32(arow[kk]);
            const std::int8_t* brow = b + std::size_t(kk) * n;
            for (int j = 0; j < n8; j += 8) {
                // 8 int8 -> 8 int32 lanes; widening multiply-accumulate is
                // exact, so any summation grouping would do.
                const __m128i b8 = _mm_loadl_epi64(reinterpret_cast<const __m128i*>(brow + j));
                const __m256i bv = _mm256_cvtepi8_epi32(b8);
                const __m256i prod = _mm256_mullo_epi32(av, bv);
                __m256i* accv = reinterpret_cast<__m256i*>(acc.data() + j);
                _mm256_storeu_si256(accv, _mm256_add_epi32(_mm256_loadu_si256(accv), prod));
            }
            const std::int32_t aik = arow[kk];
            for (int j = n8; j < n; ++j) acc[j] += aik * brow[j];
        }
        std::int8_t* crow = c + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = requant_one(acc[j], rq);
    }
}

}  // namespace bioformer::kernels

#endif  // __AVX2__ && __FMA__
