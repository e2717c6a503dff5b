// Post-training quantization pipeline: max-abs calibration over fp32
// forward traces, optional quantization-aware fine-tuning (fake-quant with
// a straight-through estimator), and lowering to an int8-only inference
// graph (integer GEMMs, polynomial softmax, integer layernorm).
//
// Activation sites are per-tensor symmetric (scale = max-abs / 127). The
// canonical site order — input, sequence, per block {ln, q, k, v, scores,
// attn, p1, p2, res}, head — is load-bearing: checkpoint requant records
// are stored by position. Attention probabilities are not a site; the
// integer softmax fixes their scale at 1/127. The 1/sqrt(P) score scaling
// is folded into the score matmul's requant multiplier, so the lowered
// graph never materializes it.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bioformer/checkpoint.hpp"
#include "bioformer/kernels.hpp"
#include "bioformer/model.hpp"
#include "bioformer/ops.hpp"
#include "bioformer/tensor.hpp"
#include "bioformer/training.hpp"

namespace bioformer {

struct SiteStats {
    float min = 0.0f;
    float max = 0.0f;
    float max_abs = 0.0f;
    bool seen = false;

    void update(float v);
};

// Per-tensor ranges for every weight and activation site, accumulated over
// one or more calibration windows. Weight entries use the parameter names
// from for_each_param; activation entries use quant_site_names.
struct CalibrationStats {
    std::map<std::string, SiteStats> entries;
    std::size_t windows = 0;

    const SiteStats& at(const std::string& name) const;  // throws ConfigError
};

// Activation site names in canonical order. Blocks without prenorm have no
// ln/res sites (the bare block output is the p2 site).
std::vector<std::string> quant_site_names(const BioformerConfig& cfg);

// Runs fp32 forward passes over ds[idx] and records per-site ranges.
// Weight ranges are read from the tensors directly.
CalibrationStats calibrate(const ModelParams& p, const BioformerConfig& cfg,
                           const WindowDataset& ds,
                           std::span<const std::size_t> idx);

// One requant site of the lowered graph. rq is the fixed-point multiplier
// of the matmul producing this site (identity for non-matmul sites); scale
// is the site's int8 output scale.
struct QuantSite {
    std::string name;
    kernels::Requant rq;
    float scale = 1.0f;
};

struct QuantizedModel {
    BioformerConfig cfg;
    Tensor conv_w, conv_b;  // int8 weights, int32 bias at s_in*s_w
    Tensor class_token;     // int8 at its own scale
    Tensor pos_embedding;   // int8; empty when disabled
    struct Layer {
        Tensor w_q, b_q, w_k, b_k, w_v, b_v;
        Tensor w_p1, b_p1, w_p2, b_p2;
        Tensor ln_g, ln_b;    // int8 gamma, int32 beta at 2^-24; empty when
                              // prenorm is off
        ops::IntLnParams ln;  // folded integer layernorm (derived, not stored)
    };
    std::vector<Layer> layers;
    Tensor head_w, head_b;
    std::vector<QuantSite> sites;  // canonical order (quant_site_names)
};

// Visits every stored tensor in canonical order (same names as the fp32
// model); serialization and the memory accounting iterate through this.
void for_each_qtensor(
    const QuantizedModel& qm,
    const std::function<void(const std::string&, const Tensor&)>& fn);

// Quantizes weights at per-tensor max-abs scales, folds biases to int32 at
// s_in*s_w, builds the integer layernorm tables, and derives every requant
// multiplier. Throws ConfigError if stats lack a site, NumericError if a
// scale combination leaves the representable requant domain.
QuantizedModel lower(const ModelParams& p, const CalibrationStats& stats,
                     const BioformerConfig& cfg);

// Integer-only forward pass: the window is quantized once at the boundary,
// everything after runs on int8/int32 values. Returns int8 logits. When
// deq is given, dequantized activations are captured in ForwardTrace form
// (this is the straight-through trace QAT backpropagates through).
Tensor int_forward(const QuantizedModel& qm, const Tensor& window,
                   ForwardTrace* deq = nullptr);
int int_predict(const QuantizedModel& qm, const Tensor& window);

// Floating-point mirror of the lowered graph for a configurable bit width:
// weights and activations are snapped to their integer grids (qmax = 127
// matches the int8 graph rounding-for-rounding; accumulators are carried
// in double, which is exact for integer-valued operands). At qmax = 127
// the integer softmax/layernorm kernels are used so both paths share the
// nonlinear approximations; wider grids (debug, e.g. 32767) use fp32
// softmax/layernorm since no integer kernels exist for them.
Tensor fake_quant_forward(const ModelParams& p, const CalibrationStats& stats,
                          const BioformerConfig& cfg, const Tensor& window,
                          int qmax, ForwardTrace* trace = nullptr);

struct QatConfig {
    int epochs = 5;
    float lr = 1e-5f;
    int batch_size = 64;
    std::uint64_t seed = 0xB10F0;
    int qmax = 127;  // 32767 = high-resolution debug grid
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;

    void validate() const;  // throws ConfigError
};

// Quantization-aware fine-tuning: forward through fake_quant_forward with
// activation scales frozen from stats (weight scales track the live
// tensors), backward straight through the rounding into the fp32 master
// weights, plain Adam at qc.lr. Returns the tuned master weights.
ModelParams qat_finetune(const ModelParams& p, const CalibrationStats& stats,
                         const BioformerConfig& cfg, const WindowDataset& ds,
                         std::span<const std::size_t> idx,
                         const QatConfig& qc);

// Deployed model size: stored tensor payloads (1 byte per int8 weight, 4
// per int32 bias) plus 16 bytes of requant metadata per site. Equals the
// serialized checkpoint payload exactly.
std::size_t model_memory_bytes(const QuantizedModel& qm);

// Rough peak of live int8 activation buffers during int_forward (the
// memory the weights table above deliberately excludes).
std::size_t activation_buffer_bytes(const BioformerConfig& cfg);

// Integer-graph audit: counts violations — any non-integer stored tensor,
// plus any fp32 GEMM issued while running int_forward on the probe window.
// A lowered model must return 0.
int integer_graph_audit(const QuantizedModel& qm, const Tensor& probe);

// Checkpoint glue: int8 models reuse the model container with a requant
// site section.
CheckpointData to_checkpoint(const QuantizedModel& qm);
QuantizedModel from_checkpoint(const CheckpointData& cd);
void save_quantized(const std::string& path, const QuantizedModel& qm);
QuantizedModel load_quantized(const std::string& path);

}  // namespace bioformer
