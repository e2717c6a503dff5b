#include "bioformer/model.hpp"

#include <cmath>
#include <string>

#include "bioformer/error.hpp"
#include "bioformer/ops.hpp"

namespace bioformer {

void BioformerConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (in_channels <= 0) fail("in_channels must be positive");
    if (window_len <= 0) fail("window_len must be positive");
    if (filter != 1 && filter != 5 && filter != 10 && filter != 20 &&
        filter != 30)
        fail("filter must be one of {1,5,10,20,30}, got " +
             std::to_string(filter));
    if (window_len % filter != 0)
        fail("window_len " + std::to_string(window_len) +
             " not divisible by filter " + std::to_string(filter));
    if (embed < 2) fail("embed must be at least 2");
    if (heads != 1 && heads != 2 && heads != 4 && heads != 8)
        fail("heads must be one of {1,2,4,8}, got " + std::to_string(heads));
    if (depth < 1 || depth > 4)
        fail("depth must be in [1,4], got " + std::to_string(depth));
    if (head_dim <= 0) fail("head_dim must be positive");
    if (ffn_dim <= 0) fail("ffn_dim must be positive");
    if (num_classes < 2) fail("num_classes must be at least 2");
    if (!(eps > 0.0f)) fail("eps must be positive");
}

ModelParams zero_params(const BioformerConfig& cfg) {
    cfg.validate();
    const int C = cfg.embed, HP = cfg.concat_dim(), FFN = cfg.ffn_dim;
    ModelParams p;
    p.conv_w = Tensor::f32({cfg.filter * cfg.in_channels, C});
    p.conv_b = Tensor::f32({C});
    p.class_token = Tensor::f32({C});
    if (cfg.use_pos_embedding)
        p.pos_embedding = Tensor::f32({cfg.seq_len(), C});
    p.layers.resize(static_cast<std::size_t>(cfg.depth));
    for (auto& l : p.layers) {
        l.w_q = Tensor::f32({C, HP});
        l.b_q = Tensor::f32({HP});
        l.w_k = Tensor::f32({C, HP});
        l.b_k = Tensor::f32({HP});
        l.w_v = Tensor::f32({C, HP});
        l.b_v = Tensor::f32({HP});
        l.w_p1 = Tensor::f32({HP, FFN});
        l.b_p1 = Tensor::f32({FFN});
        l.w_p2 = Tensor::f32({FFN, C});
        l.b_p2 = Tensor::f32({C});
        if (cfg.use_prenorm) {
            l.ln_g = Tensor::f32({C});
            l.ln_b = Tensor::f32({C});
        }
    }
    p.head_w = Tensor::f32({C, cfg.num_classes});
    p.head_b = Tensor::f32({cfg.num_classes});
    return p;
}

namespace {

void xavier_fill(Tensor& w, Rng& rng) {
    const float fan_in = float(w.rows());
    const float fan_out = float(w.cols());
    const float std_dev = std::sqrt(2.0f / (fan_in + fan_out));
    for (auto& v : w.f) v = rng.gaussian() * std_dev;
}

}  // namespace

ModelParams init_params(const BioformerConfig& cfg, Rng& rng) {
    ModelParams p = zero_params(cfg);
    xavier_fill(p.conv_w, rng);
    for (auto& v : p.class_token.f) v = rng.gaussian() * 0.02f;
    if (cfg.use_pos_embedding)
        for (auto& v : p.pos_embedding.f) v = rng.gaussian() * 0.02f;
    for (auto& l : p.layers) {
        xavier_fill(l.w_q, rng);
        xavier_fill(l.w_k, rng);
        xavier_fill(l.w_v, rng);
        xavier_fill(l.w_p1, rng);
        xavier_fill(l.w_p2, rng);
        if (cfg.use_prenorm)
            for (auto& v : l.ln_g.f) v = 1.0f;
    }
    xavier_fill(p.head_w, rng);
    return p;
}

template <typename Params, typename Fn>
static void visit_params(Params& p, const Fn& fn) {
    fn("conv_w", p.conv_w);
    fn("conv_b", p.conv_b);
    fn("cls", p.class_token);
    if (p.pos_embedding.numel() != 0) fn("pos", p.pos_embedding);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const std::string pre = "l" + std::to_string(i) + ".";
        auto& l = p.layers[i];
        fn(pre + "wq", l.w_q);
        fn(pre + "bq", l.b_q);
        fn(pre + "wk", l.w_k);
        fn(pre + "bk", l.b_k);
        fn(pre + "wv", l.w_v);
        fn(pre + "bv", l.b_v);
        fn(pre + "wp1", l.w_p1);
        fn(pre + "bp1", l.b_p1);
        fn(pre + "wp2", l.w_p2);
        fn(pre + "bp2", l.b_p2);
        if (l.ln_g.numel() != 0) {
            fn(pre + "ln_g", l.ln_g);
            fn(pre + "ln_b", l.ln_b);
        }
    }
    fn("head_w", p.head_w);
    fn("head_b", p.head_b);
}

void for_each_param(ModelParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_params(p, fn);
}

void for_each_param(
    const ModelParams& p,
    const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_params(p, fn);
}

Tensor tokenize(const Tensor& window, const ModelParams& p,
                const BioformerConfig& cfg) {
    require_shape(window, {cfg.window_len, cfg.in_channels}, "tokenize window");
    if (cfg.window_len % cfg.filter != 0)
        throw ConfigError("window_len not divisible by filter");
    // Non-overlapping stride-F conv is a GEMM over the window reshaped to
    // [N x F*in_ch]; rows are already contiguous in the row-major window.
    Tensor a = window;
    a.shape = {cfg.tokens(), cfg.filter * cfg.in_channels};
    return ops::matmul(a, p.conv_w, p.conv_b);
}

namespace {

// Copies columns [h*P, (h+1)*P) of src [S x H*P] into a [S x P] tensor.
Tensor slice_head(const Tensor& src, int h, int P) {
    Tensor out = Tensor::f32({src.rows(), P});
    for (int r = 0; r < src.rows(); ++r)
        for (int c = 0; c < P; ++c) out.at(r, c) = src.at(r, h * P + c);
    return out;
}

}  // namespace

Tensor mhsa(const Tensor& x, const LayerParams& lp, const BioformerConfig& cfg,
            ForwardTrace::Layer* trace) {
    const int S = x.rows(), P = cfg.head_dim, H = cfg.heads;
    require_shape(x, {S, cfg.embed}, "mhsa input");

    const Tensor q = ops::matmul(x, lp.w_q, lp.b_q);  // [S x H*P]
    const Tensor k = ops::matmul(x, lp.w_k, lp.b_k);
    const Tensor v = ops::matmul(x, lp.w_v, lp.b_v);

    const float inv_sqrt_p = 1.0f / std::sqrt(float(P));
    Tensor concat = Tensor::f32({S, H * P});
    for (int h = 0; h < H; ++h) {
        const Tensor qh = slice_head(q, h, P);
        const Tensor kh = slice_head(k, h, P);
        const Tensor vh = slice_head(v, h, P);
        Tensor scores = ops::matmul(qh, ops::transpose(kh));  // [S x S]
        for (auto& s : scores.f) s *= inv_sqrt_p;
        const Tensor probs = ops::softmax_rows(scores);
        const Tensor att = ops::matmul(probs, vh);  // [S x P]
        for (int r = 0; r < S; ++r)
            for (int c = 0; c < P; ++c) concat.at(r, h * P + c) = att.at(r, c);
        if (trace) {
            trace->scores.push_back(std::move(scores));
            trace->probs.push_back(probs);
        }
    }

    Tensor p1_pre = ops::matmul(concat, lp.w_p1, lp.b_p1);  // [S x ffn]
    const Tensor p1 = ops::relu(p1_pre);
    Tensor out = ops::matmul(p1, lp.w_p2, lp.b_p2);  // [S x C]
    if (trace) {
        trace->q = q;
        trace->k = k;
        trace->v = v;
        trace->attn_concat = std::move(concat);
        trace->p1_pre = std::move(p1_pre);
        trace->p1 = p1;
        trace->p2 = out;
    }
    return out;
}

Tensor forward(const Tensor& window, const ModelParams& p,
               const BioformerConfig& cfg, ForwardTrace* trace) {
    const Tensor tokens = tokenize(window, p, cfg);

    const int S = cfg.seq_len(), C = cfg.embed;
    Tensor x = Tensor::f32({S, C});
    for (int c = 0; c < C; ++c) x.at(0, c) = p.class_token.f[c];
    for (int r = 0; r < cfg.tokens(); ++r)
        for (int c = 0; c < C; ++c) x.at(r + 1, c) = tokens.at(r, c);
    if (cfg.use_pos_embedding) {
        require_shape(p.pos_embedding, {S, C}, "pos_embedding");
        x = ops::add(x, p.pos_embedding);
    }
    if (trace) {
        Tensor a = window;
        a.shape = {cfg.tokens(), cfg.filter * cfg.in_channels};
        trace->conv_in = std::move(a);
        trace->tokens = tokens;
        trace->seq0 = x;
        trace->layers.clear();
        trace->layers.reserve(static_cast<std::size_t>(cfg.depth));
    }

    for (const auto& l : p.layers) {
        ForwardTrace::Layer* lt = nullptr;
        if (trace) {
            trace->layers.emplace_back();
            lt = &trace->layers.back();
            lt->x_in = x;
        }
        if (cfg.use_prenorm) {
            const Tensor ln = ops::layernorm(x, l.ln_g, l.ln_b, cfg.eps);
            if (lt) lt->ln_out = ln;
            x = ops::add(x, mhsa(ln, l, cfg, lt));
        } else {
            if (lt) lt->ln_out = x;
            x = mhsa(x, l, cfg, lt);
        }
        if (lt) lt->out = x;
    }

    Tensor cls = Tensor::f32({1, C});
    for (int c = 0; c < C; ++c) cls.at(0, c) = x.at(0, c);
    Tensor logits = ops::matmul(cls, p.head_w, p.head_b);
    logits.shape = {cfg.num_classes};
    if (trace) trace->logits = logits;
    return logits;
}

int predict(const Tensor& logits) { return ops::argmax(logits); }

}  // namespace bioformer
