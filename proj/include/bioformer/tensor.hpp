// Dense row-major tensors in fp32, int8 or int32. Integer tensors carry a
// symmetric per-tensor scale (zero point fixed at 0, int8 range [-127, 127]).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bioformer/error.hpp"

namespace bioformer {

enum class DType : std::uint8_t { F32 = 0, I8 = 1, I32 = 2 };

inline const char* dtype_name(DType t) {
    switch (t) {
        case DType::F32: return "f32";
        case DType::I8: return "i8";
        case DType::I32: return "i32";
    }
    return "?";
}

struct QuantParams {
    float scale = 1.0f;
    int bits = 8;
    bool symmetric = true;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor f32(std::vector<int> shape) {
        Tensor t(std::move(shape), DType::F32);
        t.f.assign(static_cast<std::size_t>(t.numel()), 0.0f);
        return t;
    }
    static Tensor i8(std::vector<int> shape, float scale) {
        check_scale(scale);
        Tensor t(std::move(shape), DType::I8);
        t.scale = scale;
        t.q8.assign(static_cast<std::size_t>(t.numel()), 0);
        return t;
    }
    static Tensor i32(std::vector<int> shape, float scale) {
        check_scale(scale);
        Tensor t(std::move(shape), DType::I32);
        t.scale = scale;
        t.q32.assign(static_cast<std::size_t>(t.numel()), 0);
        return t;
    }

    DType dtype = DType::F32;
    std::vector<int> shape;
    float scale = 1.0f;   // meaningful for integer dtypes only
    int zero_point = 0;   // fixed 0 (symmetric scheme)

    std::vector<float> f;
    std::vector<std::int8_t> q8;
    std::vector<std::int32_t> q32;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }
    int ndim() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.size() >= 1 ? shape[0] : 0; }
    int cols() const { return shape.size() >= 2 ? shape[1] : 0; }

    // 2-D accessors (tests and glue code; kernels use raw pointers).
    float& at(int r, int c) { return f[static_cast<std::size_t>(r) * shape[1] + c]; }
    float at(int r, int c) const { return f[static_cast<std::size_t>(r) * shape[1] + c]; }
    std::int8_t& q_at(int r, int c) { return q8[static_cast<std::size_t>(r) * shape[1] + c]; }
    std::int8_t q_at(int r, int c) const { return q8[static_cast<std::size_t>(r) * shape[1] + c]; }

    std::size_t payload_bytes() const {
        switch (dtype) {
            case DType::F32: return f.size() * 4;
            case DType::I8: return q8.size();
            case DType::I32: return q32.size() * 4;
        }
        return 0;
    }

private:
    Tensor(std::vector<int> s, DType t) : dtype(t), shape(std::move(s)) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("non-positive extent " + std::to_string(d));
    }
    static void check_scale(float s) {
        if (!(s > 0.0f)) throw NumericError("quantization scale must be positive");
    }
};

inline void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape != shape) {
        std::string got = "[", want = "[";
        for (int d : t.shape) got += std::to_string(d) + ",";
        for (int d : shape) want += std::to_string(d) + ",";
        throw ShapeError(std::string(what) + ": got " + got + "] want " + want + "]");
    }
}

}  // namespace bioformer
