#include "bioformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "bioformer/error.hpp"
#include "bioformer/kernels.hpp"

namespace bioformer::ops {

namespace {

void require_f32(const Tensor& t, const char* what) {
    if (t.dtype != DType::F32)
        throw ShapeError(std::string(what) + " must be fp32, got " +
                         dtype_name(t.dtype));
}

void require_i8(const Tensor& t, const char* what) {
    if (t.dtype != DType::I8)
        throw ShapeError(std::string(what) + " must be int8, got " +
                         dtype_name(t.dtype));
}

void require_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2)
        throw ShapeError(std::string(what) + " must be 2-D, got " +
                         std::to_string(t.ndim()) + "-D");
}

void require_finite(const Tensor& t, const char* what) {
    for (float v : t.f)
        if (!std::isfinite(v))
            throw NumericError(std::string(what) + " contains a non-finite value");
}

// Rounds num/den to nearest, half away from zero. den > 0.
std::int64_t div_round_nearest(std::int64_t num, std::int64_t den) {
    if (num >= 0) return (num + den / 2) / den;
    return -((-num + den / 2) / den);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    return matmul(a, b, Tensor{});
}

Tensor matmul(const Tensor& a, const Tensor& b, const Tensor& bias) {
    require_f32(a, "matmul a");
    require_f32(b, "matmul b");
    require_2d(a, "matmul a");
    require_2d(b, "matmul b");
    if (a.cols() != b.rows())
        throw ShapeError("matmul inner dims differ: " + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()));
    const float* bias_p = nullptr;
    if (bias.numel() != 0) {
        require_f32(bias, "matmul bias");
        if (bias.numel() != b.cols())
            throw ShapeError("matmul bias length " + std::to_string(bias.numel()) +
                             " != " + std::to_string(b.cols()));
        bias_p = bias.f.data();
    }
    Tensor c = Tensor::f32({a.rows(), b.cols()});
    kernels::gemm_f32(a.f.data(), b.f.data(), bias_p, c.f.data(), a.rows(),
                      a.cols(), b.cols());
    return c;
}

Tensor softmax_rows(const Tensor& x) {
    require_f32(x, "softmax input");
    require_2d(x, "softmax input");
    require_finite(x, "softmax input");
    Tensor y = Tensor::f32({x.rows(), x.cols()});
    const int cols = x.cols();
    for (int r = 0; r < x.rows(); ++r) {
        const float* xr = x.f.data() + std::size_t(r) * cols;
        float* yr = y.f.data() + std::size_t(r) * cols;
        float mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        float sum = 0.0f;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        for (int c = 0; c < cols; ++c) yr[c] /= sum;
    }
    return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 float eps) {
    require_f32(x, "layernorm input");
    require_2d(x, "layernorm input");
    const int cols = x.cols();
    if (cols < 2) throw ShapeError("layernorm needs at least 2 columns");
    if (gamma.numel() != cols ||
        beta.numel() != cols)
        throw ShapeError("layernorm gamma/beta length must equal columns");
    Tensor y = Tensor::f32({x.rows(), cols});
    for (int r = 0; r < x.rows(); ++r) {
        const float* xr = x.f.data() + std::size_t(r) * cols;
        float* yr = y.f.data() + std::size_t(r) * cols;
        float mean = 0.0f;
        for (int c = 0; c < cols; ++c) mean += xr[c];
        mean /= float(cols);
        float var = 0.0f;
        for (int c = 0; c < cols; ++c) {
            const float d = xr[c] - mean;
            var += d * d;
        }
        var /= float(cols);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (int c = 0; c < cols; ++c)
            yr[c] = (xr[c] - mean) * inv * gamma.f[c] + beta.f[c];
    }
    return y;
}

Tensor relu(const Tensor& x) {
    if (x.dtype == DType::F32) {
        Tensor y = x;
        for (float& v : y.f) v = std::max(v, 0.0f);
        return y;
    }
    if (x.dtype == DType::I8) {
        Tensor y = x;
        for (std::int8_t& v : y.q8) v = std::max<std::int8_t>(v, 0);
        return y;
    }
    throw ShapeError("relu supports fp32 and int8 only");
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_f32(a, "add a");
    require_f32(b, "add b");
    if (a.shape != b.shape) throw ShapeError("add operands differ in shape");
    Tensor y = a;
    for (std::size_t i = 0; i < y.f.size(); ++i) y.f[i] += b.f[i];
    return y;
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose input");
    const int r = x.rows(), c = x.cols();
    switch (x.dtype) {
        case DType::F32: {
            Tensor y = Tensor::f32({c, r});
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    y.f[std::size_t(j) * r + i] = x.f[std::size_t(i) * c + j];
            return y;
        }
        case DType::I8: {
            Tensor y = Tensor::i8({c, r}, x.scale);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    y.q8[std::size_t(j) * r + i] = x.q8[std::size_t(i) * c + j];
            return y;
        }
        default:
            throw ShapeError("transpose supports fp32 and int8 only");
    }
}

Tensor quantize(const Tensor& x, const QuantParams& qp) {
    require_f32(x, "quantize input");
    if (!(qp.scale > 0.0f) || !std::isfinite(qp.scale))
        throw NumericError("quantize scale must be finite and positive");
    require_finite(x, "quantize input");
    Tensor q = Tensor::i8(x.shape, qp.scale);
    for (std::size_t i = 0; i < x.f.size(); ++i) {
        const long r = std::lround(x.f[i] / qp.scale);  // half away from zero
        q.q8[i] = static_cast<std::int8_t>(std::clamp<long>(r, -127, 127));
    }
    return q;
}

Tensor dequantize(const Tensor& q) {
    Tensor y = Tensor::f32(q.shape);
    switch (q.dtype) {
        case DType::I8:
            for (std::size_t i = 0; i < q.q8.size(); ++i)
                y.f[i] = float(q.q8[i]) * q.scale;
            return y;
        case DType::I32:
            for (std::size_t i = 0; i < q.q32.size(); ++i)
                y.f[i] = float(double(q.q32[i]) * q.scale);
            return y;
        default:
            throw ShapeError("dequantize expects an integer tensor");
    }
}

Tensor int_matmul(const Tensor& a, const Tensor& b, const Tensor* bias,
                  const QuantParams& out_qp) {
    require_i8(a, "int_matmul a");
    require_i8(b, "int_matmul b");
    require_2d(a, "int_matmul a");
    require_2d(b, "int_matmul b");
    if (a.cols() != b.rows())
        throw ShapeError("int_matmul inner dims differ: " +
                         std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    const std::int32_t* bias_p = nullptr;
    if (bias) {
        if (bias->dtype != DType::I32)
            throw ShapeError("int_matmul bias must be int32");
        if (bias->numel() != b.cols())
            throw ShapeError("int_matmul bias length mismatch");
        bias_p = bias->q32.data();
    }
    const kernels::Requant rq = kernels::make_requant(
        double(a.scale) * double(b.scale) / double(out_qp.scale));
    Tensor c = Tensor::i8({a.rows(), b.cols()}, out_qp.scale);
    kernels::gemm_s8(a.q8.data(), b.q8.data(), bias_p, c.q8.data(), a.rows(),
                     a.cols(), b.cols(), rq);
    return c;
}

std::uint64_t isqrt_u64(std::uint64_t v) {
    if (v == 0) return 0;
    auto r = static_cast<std::uint64_t>(std::sqrt(static_cast<double>(v)));
    // double sqrt can be off by an ulp near 2^52+; settle to exact floor.
    // The cap keeps r*r (and the r+1 probe) inside uint64.
    const std::uint64_t cap = 0xFFFFFFFFull;
    if (r > cap) r = cap;
    while (r > 0 && r * r > v) --r;
    while (r < cap && (r + 1) * (r + 1) <= v) ++r;
    return r;
}

Tensor int_softmax(const Tensor& x, const QuantParams& in_qp) {
    require_i8(x, "int_softmax input");
    require_2d(x, "int_softmax input");
    if (!(in_qp.scale > 0.0f) || !std::isfinite(in_qp.scale))
        throw NumericError("int_softmax input scale must be finite and positive");

    // Fixed-point constants in Q24. The input scale is folded in up front:
    // X = (q - max) * S24 carries the dequantized logit gap at 2^-24
    // resolution, so decomposition error is negligible even for coarse
    // input grids. exp(r) for r in (-ln2, 0] uses the quadratic
    // 0.3585*(r + 1.353)^2 + 0.344.
    const std::int64_t S24 = std::llround(double(in_qp.scale) * (1ll << 24));
    const std::int64_t L = 11629080;   // round(ln2 * 2^24)
    const std::int64_t PA = 6014867;   // round(0.3585 * 2^24)
    const std::int64_t PB = 22699573;  // round(1.353 * 2^24)
    const std::int64_t PC = 5771263;   // round(0.344 * 2^24)

    const int cols = x.cols();
    Tensor y = Tensor::i8({x.rows(), cols}, 1.0f / 127.0f);
    std::vector<std::int64_t> e(static_cast<std::size_t>(cols));
    std::vector<std::int64_t> rem(static_cast<std::size_t>(cols));
    std::vector<int> order(static_cast<std::size_t>(cols));
    for (int r = 0; r < x.rows(); ++r) {
        const std::int8_t* xr = x.q8.data() + std::size_t(r) * cols;
        std::int8_t* yr = y.q8.data() + std::size_t(r) * cols;
        std::int8_t mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        std::int64_t sum = 0;
        for (int c = 0; c < cols; ++c) {
            const std::int64_t X = std::int64_t(xr[c] - mx) * S24;  // <= 0
            const std::int64_t z = (-X) / L;
            const std::int64_t R = X + z * L;  // in (-L, 0]
            const std::int64_t t = R + PB;
            const std::int64_t p = ((PA * ((t * t) >> 24)) >> 24) + PC;
            e[c] = z >= 40 ? 0 : (p >> z);
            sum += e[c];
        }
        // Integer shares of 127 with largest-remainder top-up so each row
        // sums to exactly 127 (sum > 0 always: the max entry has z=0).
        std::int64_t assigned = 0;
        for (int c = 0; c < cols; ++c) {
            const std::int64_t num = 127 * e[c];
            const std::int64_t share = num / sum;
            rem[c] = num - share * sum;
            yr[c] = static_cast<std::int8_t>(share);
            assigned += share;
        }
        for (int c = 0; c < cols; ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a_, int b_) { return rem[a_] > rem[b_]; });
        for (std::int64_t i = 0; i < 127 - assigned; ++i) ++yr[order[i % cols]];
    }
    return y;
}

IntLnParams make_int_ln(const Tensor& gamma_q8, const Tensor& beta_q32,
                        float out_scale) {
    require_i8(gamma_q8, "int layernorm gamma");
    if (beta_q32.dtype != DType::I32)
        throw ShapeError("int layernorm beta must be int32");
    if (gamma_q8.numel() != beta_q32.numel())
        throw ShapeError("int layernorm gamma/beta length mismatch");
    if (!(out_scale > 0.0f) || !std::isfinite(out_scale))
        throw NumericError("int layernorm output scale must be positive");
    IntLnParams ln;
    ln.out_scale = out_scale;
    const std::size_t n = gamma_q8.numel();
    ln.g.resize(n);
    ln.b.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        // g ~ gamma/out_scale in Q15 (pairs with the Q16 normalized value
        // for a Q31 product); b ~ beta/out_scale in Q31.
        const double gamma = double(gamma_q8.q8[i]) * double(gamma_q8.scale);
        const double beta = double(beta_q32.q32[i]) * double(beta_q32.scale);
        const long long g = std::llround(gamma / out_scale * double(1 << 15));
        if (g > INT32_MAX || g < INT32_MIN)
            throw NumericError("int layernorm gamma/out_scale ratio too large");
        ln.g[i] = static_cast<std::int32_t>(g);
        ln.b[i] = std::llround(beta / out_scale * double(1ll << 31));
    }
    return ln;
}

Tensor int_layernorm(const Tensor& x, const IntLnParams& ln) {
    require_i8(x, "int_layernorm input");
    require_2d(x, "int_layernorm input");
    const int C = x.cols();
    if (ln.g.size() != static_cast<std::size_t>(C))
        throw ShapeError("int_layernorm params sized for " +
                         std::to_string(ln.g.size()) + " columns, input has " +
                         std::to_string(C));
    // The Q8 sqrt argument is C^4 * 2^30 in the worst case; cap C so it
    // stays inside uint64.
    if (C > 512) throw ShapeError("int_layernorm supports at most 512 columns");
    Tensor y = Tensor::i8({x.rows(), C}, ln.out_scale);
    std::vector<std::int64_t> cprime(static_cast<std::size_t>(C));
    for (int r = 0; r < x.rows(); ++r) {
        const std::int8_t* xr = x.q8.data() + std::size_t(r) * C;
        std::int8_t* yr = y.q8.data() + std::size_t(r) * C;
        std::int64_t sum = 0;
        for (int c = 0; c < C; ++c) sum += xr[c];
        // c' = C*x - sum(x) = C*(x - mean), exactly, in integers. The
        // normalized value is then n = c'*C / sqrt(C * sum(c'^2)); the
        // sqrt is carried in Q8 so its floor error stays ~2^-8 relative.
        std::int64_t v = 0;
        for (int c = 0; c < C; ++c) {
            cprime[c] = std::int64_t(C) * xr[c] - sum;
            v += cprime[c] * cprime[c];
        }
        if (v == 0) {  // constant row: normalized value is 0 -> affine only
            for (int c = 0; c < C; ++c)
                yr[c] = kernels::saturate_i8(
                    kernels::rounding_rshift(ln.b[c], 31));
            continue;
        }
        const auto s_q8 = static_cast<std::int64_t>(
            isqrt_u64(static_cast<std::uint64_t>(v) * std::uint64_t(C) << 16));
        for (int c = 0; c < C; ++c) {
            const std::int64_t n_q16 =
                div_round_nearest(cprime[c] * C * (1ll << 24), s_q8);
            const std::int64_t acc = n_q16 * ln.g[c] + ln.b[c];
            yr[c] = kernels::saturate_i8(kernels::rounding_rshift(acc, 31));
        }
    }
    return y;
}

Tensor rescale_add_sat8(const Tensor& a, const Tensor& b,
                        const QuantParams& out_qp) {
    require_i8(a, "rescale_add a");
    require_i8(b, "rescale_add b");
    if (a.shape != b.shape)
        throw ShapeError("rescale_add operands differ in shape");
    const kernels::Requant ra =
        kernels::make_requant(double(a.scale) / double(out_qp.scale));
    const kernels::Requant rb =
        kernels::make_requant(double(b.scale) / double(out_qp.scale));
    Tensor y = Tensor::i8(a.shape, out_qp.scale);
    for (std::size_t i = 0; i < y.q8.size(); ++i) {
        // Rescale each operand without saturating, then saturate the sum.
        const std::int32_t va =
            kernels::rounding_rshift(std::int64_t(a.q8[i]) * ra.mult, ra.shift);
        const std::int32_t vb =
            kernels::rounding_rshift(std::int64_t(b.q8[i]) * rb.mult, rb.shift);
        y.q8[i] = kernels::saturate_i8(std::int64_t(va) + vb);
    }
    return y;
}

int argmax(const Tensor& logits) {
    require_f32(logits, "argmax input");
    if (logits.numel() == 0) throw ShapeError("argmax of empty tensor");
    for (float v : logits.f)
        if (std::isnan(v)) throw NumericError("argmax input contains NaN");
    int best = 0;
    for (std::size_t i = 1; i < logits.f.size(); ++i)
        if (logits.f[i] > logits.f[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace bioformer::ops
