// Bioformer topology: 1-D conv tokenizer -> class token (+ optional learned
// positional embedding) -> d encoder blocks of multi-head self-attention ->
// class-token row -> linear head.
//
// Each encoder block applies one pre-norm residual unit, x + mhsa(ln(x)),
// where mhsa already contains the two projection layers (concat heads ->
// proj1 -> ReLU -> proj2 back to C). With use_prenorm=false a block is the
// bare mhsa(x) with no normalization or residual.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bioformer/rng.hpp"
#include "bioformer/tensor.hpp"

namespace bioformer {

struct BioformerConfig {
    int in_channels = 14;   // electrodes
    int window_len = 300;   // samples per window
    int filter = 10;        // conv filter length F; stride = F, padding 0
    int embed = 64;         // token dim C
    int heads = 8;          // H
    int depth = 1;          // encoder blocks d
    int head_dim = 32;      // per-head dim P
    int ffn_dim = 128;      // hidden width of the projection pair
    int num_classes = 8;    // rest + 7 grasps
    bool use_pos_embedding = true;
    bool use_prenorm = true;
    float eps = 1e-5f;

    int tokens() const { return window_len / filter; }  // N
    int seq_len() const { return tokens() + 1; }        // S' = N + 1
    int concat_dim() const { return heads * head_dim; } // H*P

    void validate() const;  // throws ConfigError on any violation
};

struct LayerParams {
    Tensor w_q, b_q;    // [C x H*P], [H*P]
    Tensor w_k, b_k;
    Tensor w_v, b_v;
    Tensor w_p1, b_p1;  // [H*P x ffn], [ffn]
    Tensor w_p2, b_p2;  // [ffn x C], [C]
    Tensor ln_g, ln_b;  // [C], [C]; absent when use_prenorm is off
};

struct ModelParams {
    // conv_w is stored in GEMM layout [F*in_channels x C]: row f*in_ch + ch
    // holds the weights multiplying sample f, channel ch of a token's span.
    Tensor conv_w;
    Tensor conv_b;         // [C]
    Tensor class_token;    // [C]
    Tensor pos_embedding;  // [(N+1) x C]; empty when disabled
    std::vector<LayerParams> layers;
    Tensor head_w;  // [C x num_classes]
    Tensor head_b;  // [num_classes]
};

// Zero-shaped parameters for cfg (all tensors allocated, values zero).
ModelParams zero_params(const BioformerConfig& cfg);

// Xavier-style random init, deterministic in rng. Layernorm gains start at
// 1, biases at 0, class token and positional table at small gaussians.
ModelParams init_params(const BioformerConfig& cfg, Rng& rng);

// Visits every parameter tensor in a fixed canonical order (the order is
// load-bearing: optimizer state, serialization and determinism depend on it).
void for_each_param(ModelParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const ModelParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

// Activations captured during forward; consumed by backprop (training) and
// calibration (quant). Heads are sliced out explicitly per head.
struct ForwardTrace {
    Tensor conv_in;  // [N x F*in_ch] reshaped window (conv GEMM input)
    Tensor tokens;   // [N x C]
    Tensor seq0;     // [S' x C] after class token + positional table
    struct Layer {
        Tensor x_in;    // block input
        Tensor ln_out;  // layernorm output (== x_in when prenorm off)
        Tensor q, k, v; // [S' x H*P]
        std::vector<Tensor> scores;  // per head, [S' x S'], scaled, pre-softmax
        std::vector<Tensor> probs;   // per head, [S' x S'], post-softmax
        Tensor attn_concat;          // [S' x H*P]
        Tensor p1_pre;  // [S' x ffn] before ReLU
        Tensor p1;      // [S' x ffn] after ReLU
        Tensor p2;      // [S' x C] mhsa output
        Tensor out;     // [S' x C] block output (after residual if prenorm)
    };
    std::vector<Layer> layers;
    Tensor logits;  // [num_classes]
};

// window [window_len x in_channels] -> tokens [N x C]; token i convolves
// input rows [i*F, (i+1)*F).
Tensor tokenize(const Tensor& window, const ModelParams& p,
                const BioformerConfig& cfg);

// One attention block body over x [S' x C]: per-head scaled dot-product
// attention, heads concatenated, then proj1 -> ReLU -> proj2 back to C.
Tensor mhsa(const Tensor& x, const LayerParams& lp, const BioformerConfig& cfg,
            ForwardTrace::Layer* trace = nullptr);

// Full forward pass; returns logits [num_classes].
Tensor forward(const Tensor& window, const ModelParams& p,
               const BioformerConfig& cfg, ForwardTrace* trace = nullptr);

// argmax with lowest-index tie break; NaN logits rejected.
int predict(const Tensor& logits);

}  // namespace bioformer
