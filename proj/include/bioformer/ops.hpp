// Tensor-level operations: fp32 linear algebra plus the int8 counterparts
// used by the lowered inference graph. All functions are pure; tensors are
// never mutated in place, so concurrent calls over shared inputs are safe.
#pragma once

#include <cstdint>
#include <vector>

#include "bioformer/tensor.hpp"

namespace bioformer::ops {

// --- fp32 ---------------------------------------------------------------

// [MxK] x [KxN] -> [MxN]. The bias overload adds bias[n] to every row.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b, const Tensor& bias);

// Row-wise softmax with max subtraction. Non-finite inputs are rejected.
Tensor softmax_rows(const Tensor& x);

// Per-row normalization to zero mean / unit variance, then y*gamma + beta.
// gamma/beta are length-C vectors; eps guards zero variance.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 float eps);

Tensor relu(const Tensor& x);  // fp32 or int8 (int8 keeps its scale)
Tensor add(const Tensor& a, const Tensor& b);  // elementwise fp32
Tensor transpose(const Tensor& x);             // 2-D, any dtype

// --- int8 ---------------------------------------------------------------

// q = clamp(round_half_away(x / qp.scale), -127, 127).
Tensor quantize(const Tensor& x, const QuantParams& qp);
Tensor dequantize(const Tensor& q);  // int8/int32 -> fp32 via stored scale

// int8 GEMM with int32 accumulation; bias (nullable) is int32 in units of
// a.scale*b.scale; the accumulator is requantized to out_qp.scale via a
// fixed-point multiplier (no fp in the per-element path).
Tensor int_matmul(const Tensor& a, const Tensor& b, const Tensor* bias,
                  const QuantParams& out_qp);

// Integer-only softmax in the I-BERT style: per row, shift by the max,
// decompose x = -z*ln2 + r in Q24 fixed point, approximate exp(r) with a
// quadratic, and normalize. Output scale is fixed at 1/127 and every row
// sums to exactly 127 (largest-remainder rounding of the integer shares).
Tensor int_softmax(const Tensor& x, const QuantParams& in_qp);

// Integer layernorm. The per-channel affine step is precomputed from the
// quantized gamma (int8 with its scale) and beta (int32 at fixed scale
// 2^-24) into fixed-point multipliers, so the per-element path is integer.
struct IntLnParams {
    std::vector<std::int32_t> g;  // ~ gamma/out_scale in Q15
    std::vector<std::int64_t> b;  // ~ beta/out_scale in Q31
    float out_scale = 1.0f;
};
IntLnParams make_int_ln(const Tensor& gamma_q8, const Tensor& beta_q32,
                        float out_scale);
Tensor int_layernorm(const Tensor& x, const IntLnParams& ln);

// Residual add across two int8 scales: each operand is rescaled to
// out_qp.scale in int32 (fixed-point multipliers), summed, saturated.
Tensor rescale_add_sat8(const Tensor& a, const Tensor& b,
                        const QuantParams& out_qp);

// argmax with ties broken by lowest index; NaN logits are rejected.
int argmax(const Tensor& logits);

// Floor of sqrt for the integer layernorm; exact for any uint64.
std::uint64_t isqrt_u64(std::uint64_t v);

}  // namespace bioformer::ops
