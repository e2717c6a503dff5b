// Reference kernels. These define the exact semantics the SIMD variants
// must reproduce; keep every accumulation a single correctly-rounded fma
// per element, k ascending.
#include <cmath>
#include <cstring>
#include <vector>

#include "bioformer/kernels.hpp"

namespace bioformer::kernels {

void gemm_f32_scalar(const float* a, const float* b, const float* bias,
                     float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + std::size_t(i) * n;
        if (bias) {
            std::memcpy(crow, bias, std::size_t(n) * sizeof(float));
        } else {
            std::memset(crow, 0, std::size_t(n) * sizeof(float));
        }
        const float* arow = a + std::size_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const float aik = arow[kk];
            const float* brow = b + std::size_t(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] = std::fma(aik, brow[j], crow[j]);
        }
    }
}

void gemm_s8_scalar(const std::int8_t* a, const std::int8_t* b,
                    const std::int32_t* bias, std::int8_t* c, int m, int k,
                    int n, Requant rq) {
    std::vector<std::int32_t> acc(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        if (bias) {
            std::memcpy(acc.data(), bias, std::size_t(n) * sizeof(std::int32_t));
        } else {
            std::memset(acc.data(), 0, std::size_t(n) * sizeof(std::int32_t));
        }
        const std::int8_t* arow = a + std::size_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const std::int32_t aik = arow[kk];
            const std::int8_t* brow = b + std::size_t(kk) * n;
            for (int j = 0; j < n; ++j) acc[j] += aik * brow[j];
        }
        std::int8_t* crow = c + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = requant_one(acc[j], rq);
    }
}

}  // namespace bioformer::kernels
