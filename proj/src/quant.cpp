#include "bioformer/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

#include "bioformer/error.hpp"
#include "bioformer/ops.hpp"
#include "bioformer/rng.hpp"

namespace bioformer {

namespace {

// Positions of the canonical sites. "q" names the first per-block matmul
// site; without prenorm the ln/res slots collapse away.
struct SiteMap {
    int per, off;
    explicit SiteMap(const BioformerConfig& c)
        : per(c.use_prenorm ? 9 : 7), off(c.use_prenorm ? 1 : 0) {}
    int in() const { return 0; }
    int seq() const { return 1; }
    int ln(int l) const { return 2 + l * per; }  // prenorm only
    int q(int l) const { return 2 + l * per + off; }
    int k(int l) const { return q(l) + 1; }
    int v(int l) const { return q(l) + 2; }
    int scores(int l) const { return q(l) + 3; }
    int attn(int l) const { return q(l) + 4; }
    int p1(int l) const { return q(l) + 5; }
    int p2(int l) const { return q(l) + 6; }
    int res(int l) const { return q(l) + 7; }  // prenorm only
    int head(int depth) const { return 2 + depth * per; }
    int count(int depth) const { return head(depth) + 1; }
};

float max_abs(const Tensor& t) {
    float m = 0.0f;
    for (float v : t.f) m = std::max(m, std::fabs(v));
    return m;
}

// Symmetric per-tensor scale. An all-zero tensor gets a neutral scale so
// downstream requant factors stay near unity.
float scale_for(float mx, int qmax) {
    return mx > 0.0f ? mx / float(qmax) : 1.0f / float(qmax);
}

void check_window_shape(const WindowDataset& ds, const BioformerConfig& cfg) {
    if (ds.window_len != cfg.window_len || ds.channels != cfg.in_channels)
        throw ShapeError("dataset windows are " + std::to_string(ds.window_len) +
                         "x" + std::to_string(ds.channels) + ", model expects " +
                         std::to_string(cfg.window_len) + "x" +
                         std::to_string(cfg.in_channels));
}

void scan(SiteStats& s, const Tensor& t) {
    for (float v : t.f) s.update(v);
}

Tensor quantize_weight(const Tensor& w) {
    return ops::quantize(w, QuantParams{scale_for(max_abs(w), 127)});
}

Tensor quantize_bias(const Tensor& b, float s_in, float s_w,
                     const std::string& name) {
    const double s = double(s_in) * double(s_w);
    Tensor q = Tensor::i32(b.shape, float(s));
    for (std::size_t i = 0; i < b.f.size(); ++i) {
        const long long r = std::llround(double(b.f[i]) / s);
        if (r > std::numeric_limits<std::int32_t>::max() ||
            r < std::numeric_limits<std::int32_t>::min())
            throw NumericError("int32 bias overflow lowering " + name);
        q.q32[i] = static_cast<std::int32_t>(r);
    }
    return q;
}

// beta for the integer layernorm lives on a fixed 2^-24 grid.
constexpr float kLnBetaScale = 1.0f / 16777216.0f;

Tensor quantize_ln_beta(const Tensor& b) {
    Tensor q = Tensor::i32(b.shape, kLnBetaScale);
    for (std::size_t i = 0; i < b.f.size(); ++i) {
        const long long r = std::llround(double(b.f[i]) * 16777216.0);
        if (r > std::numeric_limits<std::int32_t>::max() ||
            r < std::numeric_limits<std::int32_t>::min())
            throw NumericError("layernorm beta exceeds the 2^-24 int32 range");
        q.q32[i] = static_cast<std::int32_t>(r);
    }
    return q;
}

// Requants for every site, derived from the site scales and the quantized
// weight scales. lower() builds records through this, and checkpoint load
// re-derives and cross-checks them, so the two can never drift apart.
std::vector<QuantSite> derive_sites(const QuantizedModel& qm,
                                    const std::vector<float>& s) {
    const BioformerConfig& cfg = qm.cfg;
    const SiteMap sm(cfg);
    const std::vector<std::string> names = quant_site_names(cfg);
    const kernels::Requant ident = kernels::make_requant(1.0);
    std::vector<QuantSite> out(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
        out[i] = {names[i], ident, s[i]};

    out[std::size_t(sm.seq())].rq = kernels::make_requant(
        double(s[std::size_t(sm.in())]) * double(qm.conv_w.scale) /
        double(s[std::size_t(sm.seq())]));
    float sx = s[std::size_t(sm.seq())];
    for (int l = 0; l < cfg.depth; ++l) {
        const auto& ql = qm.layers[std::size_t(l)];
        const float su = cfg.use_prenorm ? s[std::size_t(sm.ln(l))] : sx;
        auto rq_of = [&](float s_w, int site) {
            return kernels::make_requant(double(su) * double(s_w) /
                                         double(s[std::size_t(site)]));
        };
        out[std::size_t(sm.q(l))].rq = rq_of(ql.w_q.scale, sm.q(l));
        out[std::size_t(sm.k(l))].rq = rq_of(ql.w_k.scale, sm.k(l));
        out[std::size_t(sm.v(l))].rq = rq_of(ql.w_v.scale, sm.v(l));
        // The 1/sqrt(P) score scaling folds into this multiplier; the graph
        // itself never applies it.
        out[std::size_t(sm.scores(l))].rq = kernels::make_requant(
            double(s[std::size_t(sm.q(l))]) * double(s[std::size_t(sm.k(l))]) /
            (std::sqrt(double(cfg.head_dim)) *
             double(s[std::size_t(sm.scores(l))])));
        out[std::size_t(sm.attn(l))].rq = kernels::make_requant(
            (1.0 / 127.0) * double(s[std::size_t(sm.v(l))]) /
            double(s[std::size_t(sm.attn(l))]));
        out[std::size_t(sm.p1(l))].rq = kernels::make_requant(
            double(s[std::size_t(sm.attn(l))]) * double(ql.w_p1.scale) /
            double(s[std::size_t(sm.p1(l))]));
        out[std::size_t(sm.p2(l))].rq = kernels::make_requant(
            double(s[std::size_t(sm.p1(l))]) * double(ql.w_p2.scale) /
            double(s[std::size_t(sm.p2(l))]));
        sx = cfg.use_prenorm ? s[std::size_t(sm.res(l))]
                             : s[std::size_t(sm.p2(l))];
    }
    out[std::size_t(sm.head(cfg.depth))].rq = kernels::make_requant(
        double(sx) * double(qm.head_w.scale) /
        double(s[std::size_t(sm.head(cfg.depth))]));
    return out;
}

// int8 GEMM into a fresh tensor at the given site scale.
Tensor im(const Tensor& a, const Tensor& w, const Tensor* bias,
          kernels::Requant rq, float out_scale) {
    Tensor c = Tensor::i8({a.rows(), w.cols()}, out_scale);
    kernels::gemm_s8(a.q8.data(), w.q8.data(), bias ? bias->q32.data() : nullptr,
                     c.q8.data(), a.rows(), a.cols(), w.cols(), rq);
    return c;
}

// Columns [h*P, (h+1)*P) of src, optionally transposed to [P x S].
Tensor slice_head_i8(const Tensor& src, int h, int P, bool transposed) {
    const int S = src.rows();
    Tensor out = transposed ? Tensor::i8({P, S}, src.scale)
                            : Tensor::i8({S, P}, src.scale);
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < P; ++c) {
            const std::int8_t v = src.q8[std::size_t(r) * std::size_t(src.cols()) +
                                         std::size_t(h * P + c)];
            if (transposed)
                out.q8[std::size_t(c) * std::size_t(S) + std::size_t(r)] = v;
            else
                out.q8[std::size_t(r) * std::size_t(P) + std::size_t(c)] = v;
        }
    return out;
}

template <typename Params, typename Fn>
void visit_qtensors(Params& qm, const Fn& fn) {
    fn("conv_w", qm.conv_w);
    fn("conv_b", qm.conv_b);
    fn("cls", qm.class_token);
    if (qm.pos_embedding.numel() != 0) fn("pos", qm.pos_embedding);
    for (std::size_t i = 0; i < qm.layers.size(); ++i) {
        const std::string pre = "l" + std::to_string(i) + ".";
        auto& l = qm.layers[i];
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
    fn("head_w", qm.head_w);
    fn("head_b", qm.head_b);
}

}  // namespace

void SiteStats::update(float v) {
    if (!seen) {
        min = max = v;
        seen = true;
    } else {
        min = std::min(min, v);
        max = std::max(max, v);
    }
    max_abs = std::max(max_abs, std::fabs(v));
}

const SiteStats& CalibrationStats::at(const std::string& name) const {
    const auto it = entries.find(name);
    if (it == entries.end() || !it->second.seen)
        throw ConfigError("no calibration entry for site '" + name + "'");
    return it->second;
}

std::vector<std::string> quant_site_names(const BioformerConfig& cfg) {
    std::vector<std::string> names;
    names.reserve(std::size_t(SiteMap(cfg).count(cfg.depth)));
    names.emplace_back("in");
    names.emplace_back("seq");
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        if (cfg.use_prenorm) names.push_back(pre + "ln");
        names.push_back(pre + "q");
        names.push_back(pre + "k");
        names.push_back(pre + "v");
        names.push_back(pre + "scores");
        names.push_back(pre + "attn");
        names.push_back(pre + "p1");
        names.push_back(pre + "p2");
        if (cfg.use_prenorm) names.push_back(pre + "res");
    }
    names.emplace_back("head");
    return names;
}

CalibrationStats calibrate(const ModelParams& p, const BioformerConfig& cfg,
                           const WindowDataset& ds,
                           std::span<const std::size_t> idx) {
    cfg.validate();
    check_window_shape(ds, cfg);
    if (idx.empty()) throw ConfigError("calibration needs at least one window");
    for (std::size_t i : idx)
        if (i >= ds.size())
            throw ShapeError("calibration index " + std::to_string(i) +
                             " out of range");

    CalibrationStats cs;
    for_each_param(p, [&](const std::string& name, const Tensor& t) {
        scan(cs.entries[name], t);
    });

    for (std::size_t i : idx) {
        const Tensor w = ds.window(i);
        ForwardTrace tr;
        forward(w, p, cfg, &tr);
        scan(cs.entries["in"], w);
        scan(cs.entries["seq"], tr.seq0);
        for (int l = 0; l < cfg.depth; ++l) {
            const auto& tl = tr.layers[std::size_t(l)];
            const std::string pre = "l" + std::to_string(l) + ".";
            if (cfg.use_prenorm) {
                scan(cs.entries[pre + "ln"], tl.ln_out);
                scan(cs.entries[pre + "res"], tl.out);
            }
            scan(cs.entries[pre + "q"], tl.q);
            scan(cs.entries[pre + "k"], tl.k);
            scan(cs.entries[pre + "v"], tl.v);
            for (const Tensor& sc : tl.scores)
                scan(cs.entries[pre + "scores"], sc);
            scan(cs.entries[pre + "attn"], tl.attn_concat);
            // The p1 site covers the pre-activation range; ReLU only drops
            // the negative half, so the same scale serves both.
            scan(cs.entries[pre + "p1"], tl.p1_pre);
            scan(cs.entries[pre + "p2"], tl.p2);
        }
        scan(cs.entries["head"], tr.logits);
    }
    cs.windows = idx.size();
    return cs;
}

void for_each_qtensor(
    const QuantizedModel& qm,
    const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_qtensors(qm, fn);
}

QuantizedModel lower(const ModelParams& p, const CalibrationStats& stats,
                     const BioformerConfig& cfg) {
    cfg.validate();
    const std::vector<std::string> names = quant_site_names(cfg);
    const SiteMap sm(cfg);
    std::vector<float> s(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
        s[i] = scale_for(stats.at(names[i]).max_abs, 127);

    QuantizedModel qm;
    qm.cfg = cfg;
    qm.conv_w = quantize_weight(p.conv_w);
    qm.conv_b = quantize_bias(p.conv_b, s[std::size_t(sm.in())],
                              qm.conv_w.scale, "conv_b");
    qm.class_token = quantize_weight(p.class_token);
    if (cfg.use_pos_embedding)
        qm.pos_embedding = quantize_weight(p.pos_embedding);

    float sx = s[std::size_t(sm.seq())];
    for (int l = 0; l < cfg.depth; ++l) {
        const auto& lp = p.layers[std::size_t(l)];
        const std::string pre = "l" + std::to_string(l) + ".";
        QuantizedModel::Layer ql;
        const float su = cfg.use_prenorm ? s[std::size_t(sm.ln(l))] : sx;
        ql.w_q = quantize_weight(lp.w_q);
        ql.b_q = quantize_bias(lp.b_q, su, ql.w_q.scale, pre + "bq");
        ql.w_k = quantize_weight(lp.w_k);
        ql.b_k = quantize_bias(lp.b_k, su, ql.w_k.scale, pre + "bk");
        ql.w_v = quantize_weight(lp.w_v);
        ql.b_v = quantize_bias(lp.b_v, su, ql.w_v.scale, pre + "bv");
        ql.w_p1 = quantize_weight(lp.w_p1);
        ql.b_p1 = quantize_bias(lp.b_p1, s[std::size_t(sm.attn(l))],
                                ql.w_p1.scale, pre + "bp1");
        ql.w_p2 = quantize_weight(lp.w_p2);
        ql.b_p2 = quantize_bias(lp.b_p2, s[std::size_t(sm.p1(l))],
                                ql.w_p2.scale, pre + "bp2");
        if (cfg.use_prenorm) {
            ql.ln_g = quantize_weight(lp.ln_g);
            ql.ln_b = quantize_ln_beta(lp.ln_b);
            ql.ln = ops::make_int_ln(ql.ln_g, ql.ln_b, s[std::size_t(sm.ln(l))]);
            sx = s[std::size_t(sm.res(l))];
        } else {
            sx = s[std::size_t(sm.p2(l))];
        }
        qm.layers.push_back(std::move(ql));
    }
    qm.head_w = quantize_weight(p.head_w);
    qm.head_b = quantize_bias(p.head_b, sx, qm.head_w.scale, "head_b");
    qm.sites = derive_sites(qm, s);
    return qm;
}

Tensor int_forward(const QuantizedModel& qm, const Tensor& window,
                   ForwardTrace* deq) {
    const BioformerConfig& cfg = qm.cfg;
    const SiteMap sm(cfg);
    const auto& st = qm.sites;
    if (st.size() != std::size_t(sm.count(cfg.depth)))
        throw ConfigError("quantized model has " + std::to_string(st.size()) +
                          " sites, expected " +
                          std::to_string(sm.count(cfg.depth)));
    const int N = cfg.tokens(), S = cfg.seq_len(), C = cfg.embed;
    const int H = cfg.heads, P = cfg.head_dim;

    Tensor in_q = ops::quantize(window, QuantParams{st[std::size_t(sm.in())].scale});
    in_q.shape = {N, cfg.filter * cfg.in_channels};

    // Conv tokens land straight in rows 1..N of the sequence; row 0 is the
    // class token rescaled from its own weight grid.
    const float s_seq = st[std::size_t(sm.seq())].scale;
    Tensor x = Tensor::i8({S, C}, s_seq);
    kernels::gemm_s8(in_q.q8.data(), qm.conv_w.q8.data(), qm.conv_b.q32.data(),
                     x.q8.data() + C, N, in_q.cols(), C,
                     st[std::size_t(sm.seq())].rq);
    const kernels::Requant rq_cls =
        kernels::make_requant(double(qm.class_token.scale) / double(s_seq));
    for (int c = 0; c < C; ++c)
        x.q8[std::size_t(c)] = kernels::requant_one(qm.class_token.q8[std::size_t(c)], rq_cls);
    if (deq) {
        deq->conv_in = ops::dequantize(in_q);
        Tensor tok = Tensor::i8({N, C}, s_seq);
        std::copy(x.q8.begin() + C, x.q8.end(), tok.q8.begin());
        deq->tokens = ops::dequantize(tok);
        deq->layers.clear();
        deq->layers.reserve(std::size_t(cfg.depth));
    }
    if (cfg.use_pos_embedding) {
        Tensor pos = qm.pos_embedding;
        pos.shape = {S, C};
        x = ops::rescale_add_sat8(x, pos, QuantParams{s_seq});
    }
    if (deq) deq->seq0 = ops::dequantize(x);

    for (int l = 0; l < cfg.depth; ++l) {
        const auto& ql = qm.layers[std::size_t(l)];
        ForwardTrace::Layer* lt = nullptr;
        if (deq) {
            deq->layers.emplace_back();
            lt = &deq->layers.back();
            lt->x_in = ops::dequantize(x);
        }
        const Tensor u = cfg.use_prenorm ? ops::int_layernorm(x, ql.ln) : x;
        if (lt) lt->ln_out = ops::dequantize(u);

        const Tensor q = im(u, ql.w_q, &ql.b_q, st[std::size_t(sm.q(l))].rq,
                            st[std::size_t(sm.q(l))].scale);
        const Tensor k = im(u, ql.w_k, &ql.b_k, st[std::size_t(sm.k(l))].rq,
                            st[std::size_t(sm.k(l))].scale);
        const Tensor v = im(u, ql.w_v, &ql.b_v, st[std::size_t(sm.v(l))].rq,
                            st[std::size_t(sm.v(l))].scale);

        Tensor concat = Tensor::i8({S, H * P}, st[std::size_t(sm.attn(l))].scale);
        for (int h = 0; h < H; ++h) {
            const Tensor qh = slice_head_i8(q, h, P, false);
            const Tensor kht = slice_head_i8(k, h, P, true);
            const Tensor vh = slice_head_i8(v, h, P, false);
            const Tensor scores =
                im(qh, kht, nullptr, st[std::size_t(sm.scores(l))].rq,
                   st[std::size_t(sm.scores(l))].scale);
            const Tensor probs = ops::int_softmax(
                scores, QuantParams{st[std::size_t(sm.scores(l))].scale});
            const Tensor att = im(probs, vh, nullptr,
                                  st[std::size_t(sm.attn(l))].rq,
                                  st[std::size_t(sm.attn(l))].scale);
            for (int r = 0; r < S; ++r)
                for (int c = 0; c < P; ++c)
                    concat.q8[std::size_t(r) * std::size_t(H * P) +
                              std::size_t(h * P + c)] =
                        att.q8[std::size_t(r) * std::size_t(P) + std::size_t(c)];
            if (lt) {
                lt->scores.push_back(ops::dequantize(scores));
                lt->probs.push_back(ops::dequantize(probs));
            }
        }

        const Tensor p1 = im(concat, ql.w_p1, &ql.b_p1,
                             st[std::size_t(sm.p1(l))].rq,
                             st[std::size_t(sm.p1(l))].scale);
        const Tensor p1r = ops::relu(p1);
        const Tensor p2 = im(p1r, ql.w_p2, &ql.b_p2,
                             st[std::size_t(sm.p2(l))].rq,
                             st[std::size_t(sm.p2(l))].scale);
        if (lt) {
            lt->q = ops::dequantize(q);
            lt->k = ops::dequantize(k);
            lt->v = ops::dequantize(v);
            lt->attn_concat = ops::dequantize(concat);
            lt->p1_pre = ops::dequantize(p1);
            lt->p1 = ops::dequantize(p1r);
            lt->p2 = ops::dequantize(p2);
        }
        x = cfg.use_prenorm
                ? ops::rescale_add_sat8(
                      x, p2, QuantParams{st[std::size_t(sm.res(l))].scale})
                : p2;
        if (lt) lt->out = ops::dequantize(x);
    }

    Tensor cls = Tensor::i8({1, C}, x.scale);
    std::copy(x.q8.begin(), x.q8.begin() + C, cls.q8.begin());
    Tensor logits = im(cls, qm.head_w, &qm.head_b,
                       st[std::size_t(sm.head(cfg.depth))].rq,
                       st[std::size_t(sm.head(cfg.depth))].scale);
    logits.shape = {cfg.num_classes};
    if (deq) deq->logits = ops::dequantize(logits);
    return logits;
}

int int_predict(const QuantizedModel& qm, const Tensor& window) {
    return ops::argmax(ops::dequantize(int_forward(qm, window)));
}

// ---------------------------------------------------------------------------
// Fake-quant mirror. Values are carried as integer-valued doubles ("grid
// units") with the scale tracked alongside, so sums of int8 products are
// exact and the only divergence from the integer graph is the ~2^-31
// relative error of its fixed-point multipliers.

namespace {

struct DMat {
    int r = 0, c = 0;
    std::vector<double> v;
    DMat() = default;
    DMat(int r_, int c_) : r(r_), c(c_), v(std::size_t(r_) * std::size_t(c_)) {}
    double& at(int i, int j) { return v[std::size_t(i) * std::size_t(c) + std::size_t(j)]; }
    double at(int i, int j) const { return v[std::size_t(i) * std::size_t(c) + std::size_t(j)]; }
};

double snap(double x, double scale, int qmax) {
    return std::clamp(double(std::llround(x / scale)), -double(qmax),
                      double(qmax));
}

// Quantize an fp32 tensor onto its grid; returns integer-valued doubles.
// The int8 grid goes through ops::quantize so both paths round identically.
DMat to_grid(const Tensor& t, int rows, int cols, double scale, int qmax) {
    DMat m(rows, cols);
    if (qmax == 127) {
        const Tensor q = ops::quantize(t, QuantParams{float(scale)});
        for (std::size_t i = 0; i < q.q8.size(); ++i) m.v[i] = double(q.q8[i]);
    } else {
        for (std::size_t i = 0; i < t.f.size(); ++i)
            m.v[i] = snap(double(t.f[i]), scale, qmax);
    }
    return m;
}

DMat dgemm(const DMat& a, const DMat& b, const std::vector<double>* bias) {
    DMat c(a.r, b.c);
    for (int i = 0; i < a.r; ++i)
        for (int j = 0; j < b.c; ++j) {
            double acc = bias ? (*bias)[std::size_t(j)] : 0.0;
            for (int t = 0; t < a.c; ++t) acc += a.at(i, t) * b.at(t, j);
            c.at(i, j) = acc;
        }
    return c;
}

// Accumulator -> next grid: round(acc * factor), saturated. Mirrors
// kernels::requant_one with the exact real factor instead of mult/shift.
void requant_grid(DMat& m, double factor, int qmax) {
    for (double& x : m.v)
        x = std::clamp(double(std::llround(x * factor)), -double(qmax),
                       double(qmax));
}

Tensor grid_to_tensor(const DMat& m, double scale, std::vector<int> shape) {
    Tensor t = Tensor::f32(std::move(shape));
    for (std::size_t i = 0; i < m.v.size(); ++i)
        t.f[i] = float(m.v[i] * scale);
    return t;
}

struct GridWeight {
    DMat w;
    double scale = 1.0;
};

GridWeight weight_grid(const Tensor& t, int rows, int cols, int qmax) {
    const double s = double(scale_for(max_abs(t), qmax));
    return {to_grid(t, rows, cols, s, qmax), s};
}

std::vector<double> bias_grid(const Tensor& b, double s) {
    std::vector<double> out(b.f.size());
    for (std::size_t i = 0; i < b.f.size(); ++i)
        out[i] = double(std::llround(double(b.f[i]) / s));
    return out;
}

}  // namespace

Tensor fake_quant_forward(const ModelParams& p, const CalibrationStats& stats,
                          const BioformerConfig& cfg, const Tensor& window,
                          int qmax, ForwardTrace* trace) {
    cfg.validate();
    if (qmax < 3 || qmax > 32767)
        throw ConfigError("fake-quant qmax out of range");
    const bool i8 = qmax == 127;
    const SiteMap sm(cfg);
    const std::vector<std::string> names = quant_site_names(cfg);
    std::vector<double> s(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
        s[i] = double(scale_for(stats.at(names[i]).max_abs, qmax));

    const int N = cfg.tokens(), S = cfg.seq_len(), C = cfg.embed;
    const int H = cfg.heads, P = cfg.head_dim, F = cfg.filter;

    const double s_in = s[std::size_t(sm.in())];
    DMat xin = to_grid(window, N, F * cfg.in_channels, s_in, qmax);

    const GridWeight conv_w = weight_grid(p.conv_w, F * cfg.in_channels, C, qmax);
    const std::vector<double> conv_b = bias_grid(p.conv_b, s_in * conv_w.scale);
    DMat tokens = dgemm(xin, conv_w.w, &conv_b);
    const double s_seq = s[std::size_t(sm.seq())];
    requant_grid(tokens, s_in * conv_w.scale / s_seq, qmax);

    const GridWeight cls_w = weight_grid(p.class_token, 1, C, qmax);
    DMat x(S, C);
    for (int c = 0; c < C; ++c)
        x.at(0, c) = std::clamp(
            double(std::llround(cls_w.w.at(0, c) * (cls_w.scale / s_seq))),
            -double(qmax), double(qmax));
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < C; ++c) x.at(r + 1, c) = tokens.at(r, c);
    if (trace) {
        trace->conv_in = grid_to_tensor(xin, s_in, {N, F * cfg.in_channels});
        trace->tokens = grid_to_tensor(tokens, s_seq, {N, C});
        trace->layers.clear();
        trace->layers.reserve(std::size_t(cfg.depth));
    }
    if (cfg.use_pos_embedding) {
        const GridWeight pos = weight_grid(p.pos_embedding, S, C, qmax);
        const double f = pos.scale / s_seq;
        for (int r = 0; r < S; ++r)
            for (int c = 0; c < C; ++c)
                x.at(r, c) = std::clamp(
                    x.at(r, c) + double(std::llround(pos.w.at(r, c) * f)),
                    -double(qmax), double(qmax));
    }
    if (trace) trace->seq0 = grid_to_tensor(x, s_seq, {S, C});

    double sx = s_seq;
    for (int l = 0; l < cfg.depth; ++l) {
        const auto& lp = p.layers[std::size_t(l)];
        ForwardTrace::Layer* lt = nullptr;
        if (trace) {
            trace->layers.emplace_back();
            lt = &trace->layers.back();
            lt->x_in = grid_to_tensor(x, sx, {S, C});
        }

        DMat u;
        double su;
        if (cfg.use_prenorm) {
            su = s[std::size_t(sm.ln(l))];
            if (i8) {
                // Share the integer layernorm kernel so both paths carry the
                // same normalization approximation.
                Tensor xq = Tensor::i8({S, C}, float(sx));
                for (std::size_t i = 0; i < xq.q8.size(); ++i)
                    xq.q8[i] = static_cast<std::int8_t>(x.v[i]);
                const Tensor g8 = ops::quantize(
                    lp.ln_g, QuantParams{scale_for(max_abs(lp.ln_g), 127)});
                const Tensor b32 = quantize_ln_beta(lp.ln_b);
                const Tensor ln8 =
                    ops::int_layernorm(xq, ops::make_int_ln(g8, b32, float(su)));
                u = DMat(S, C);
                for (std::size_t i = 0; i < ln8.q8.size(); ++i)
                    u.v[i] = double(ln8.q8[i]);
            } else {
                const GridWeight g = weight_grid(lp.ln_g, 1, C, qmax);
                Tensor gt = grid_to_tensor(g.w, g.scale, {C});
                Tensor bt = Tensor::f32({C});
                for (int c = 0; c < C; ++c)
                    bt.f[std::size_t(c)] = float(
                        double(std::llround(double(lp.ln_b.f[std::size_t(c)]) *
                                            16777216.0)) /
                        16777216.0);
                const Tensor ln = ops::layernorm(
                    grid_to_tensor(x, sx, {S, C}), gt, bt, cfg.eps);
                u = DMat(S, C);
                for (std::size_t i = 0; i < ln.f.size(); ++i)
                    u.v[i] = snap(double(ln.f[i]), su, qmax);
            }
        } else {
            u = x;
            su = sx;
        }
        if (lt) lt->ln_out = grid_to_tensor(u, su, {S, C});

        const GridWeight wq = weight_grid(lp.w_q, C, H * P, qmax);
        const GridWeight wk = weight_grid(lp.w_k, C, H * P, qmax);
        const GridWeight wv = weight_grid(lp.w_v, C, H * P, qmax);
        const std::vector<double> bq = bias_grid(lp.b_q, su * wq.scale);
        const std::vector<double> bk = bias_grid(lp.b_k, su * wk.scale);
        const std::vector<double> bv = bias_grid(lp.b_v, su * wv.scale);
        DMat q = dgemm(u, wq.w, &bq);
        DMat k = dgemm(u, wk.w, &bk);
        DMat v = dgemm(u, wv.w, &bv);
        const double s_q = s[std::size_t(sm.q(l))];
        const double s_k = s[std::size_t(sm.k(l))];
        const double s_v = s[std::size_t(sm.v(l))];
        requant_grid(q, su * wq.scale / s_q, qmax);
        requant_grid(k, su * wk.scale / s_k, qmax);
        requant_grid(v, su * wv.scale / s_v, qmax);

        const double s_sc = s[std::size_t(sm.scores(l))];
        const double s_at = s[std::size_t(sm.attn(l))];
        const double s_probs = 1.0 / double(qmax);
        DMat concat(S, H * P);
        for (int h = 0; h < H; ++h) {
            DMat qh(S, P), kht(P, S), vh(S, P);
            for (int r = 0; r < S; ++r)
                for (int c = 0; c < P; ++c) {
                    qh.at(r, c) = q.at(r, h * P + c);
                    kht.at(c, r) = k.at(r, h * P + c);
                    vh.at(r, c) = v.at(r, h * P + c);
                }
            DMat scores = dgemm(qh, kht, nullptr);
            requant_grid(scores, s_q * s_k / (std::sqrt(double(P)) * s_sc), qmax);

            DMat probs(S, S);
            if (i8) {
                Tensor sq = Tensor::i8({S, S}, float(s_sc));
                for (std::size_t i = 0; i < sq.q8.size(); ++i)
                    sq.q8[i] = static_cast<std::int8_t>(scores.v[i]);
                const Tensor pr = ops::int_softmax(sq, QuantParams{float(s_sc)});
                for (std::size_t i = 0; i < pr.q8.size(); ++i)
                    probs.v[i] = double(pr.q8[i]);
            } else {
                const Tensor pr = ops::softmax_rows(
                    grid_to_tensor(scores, s_sc, {S, S}));
                for (std::size_t i = 0; i < pr.f.size(); ++i)
                    probs.v[i] = std::clamp(
                        double(std::llround(double(pr.f[i]) * double(qmax))),
                        0.0, double(qmax));
            }

            DMat att = dgemm(probs, vh, nullptr);
            requant_grid(att, s_probs * s_v / s_at, qmax);
            for (int r = 0; r < S; ++r)
                for (int c = 0; c < P; ++c) concat.at(r, h * P + c) = att.at(r, c);
            if (lt) {
                lt->scores.push_back(grid_to_tensor(scores, s_sc, {S, S}));
                lt->probs.push_back(grid_to_tensor(probs, s_probs, {S, S}));
            }
        }

        const GridWeight wp1 = weight_grid(lp.w_p1, H * P, cfg.ffn_dim, qmax);
        const GridWeight wp2 = weight_grid(lp.w_p2, cfg.ffn_dim, C, qmax);
        const std::vector<double> bp1 = bias_grid(lp.b_p1, s_at * wp1.scale);
        const double s_p1 = s[std::size_t(sm.p1(l))];
        const std::vector<double> bp2 = bias_grid(lp.b_p2, s_p1 * wp2.scale);
        DMat p1 = dgemm(concat, wp1.w, &bp1);
        requant_grid(p1, s_at * wp1.scale / s_p1, qmax);
        if (lt) lt->p1_pre = grid_to_tensor(p1, s_p1, {S, cfg.ffn_dim});
        DMat p1r = p1;
        for (double& t : p1r.v) t = std::max(0.0, t);
        DMat p2 = dgemm(p1r, wp2.w, &bp2);
        const double s_p2 = s[std::size_t(sm.p2(l))];
        requant_grid(p2, s_p1 * wp2.scale / s_p2, qmax);
        if (lt) {
            lt->q = grid_to_tensor(q, s_q, {S, H * P});
            lt->k = grid_to_tensor(k, s_k, {S, H * P});
            lt->v = grid_to_tensor(v, s_v, {S, H * P});
            lt->attn_concat = grid_to_tensor(concat, s_at, {S, H * P});
            lt->p1 = grid_to_tensor(p1r, s_p1, {S, cfg.ffn_dim});
            lt->p2 = grid_to_tensor(p2, s_p2, {S, C});
        }

        if (cfg.use_prenorm) {
            const double s_res = s[std::size_t(sm.res(l))];
            DMat nx(S, C);
            for (std::size_t i = 0; i < nx.v.size(); ++i) {
                const double a = double(std::llround(x.v[i] * (sx / s_res)));
                const double b = double(std::llround(p2.v[i] * (s_p2 / s_res)));
                nx.v[i] = std::clamp(a + b, -double(qmax), double(qmax));
            }
            x = std::move(nx);
            sx = s_res;
        } else {
            x = std::move(p2);
            sx = s_p2;
        }
        if (lt) lt->out = grid_to_tensor(x, sx, {S, C});
    }

    const GridWeight hw = weight_grid(p.head_w, C, cfg.num_classes, qmax);
    const std::vector<double> hb = bias_grid(p.head_b, sx * hw.scale);
    DMat cls(1, C);
    for (int c = 0; c < C; ++c) cls.at(0, c) = x.at(0, c);
    DMat lg = dgemm(cls, hw.w, &hb);
    const double s_head = s[std::size_t(sm.head(cfg.depth))];
    requant_grid(lg, sx * hw.scale / s_head, qmax);
    Tensor logits = grid_to_tensor(lg, s_head, {cfg.num_classes});
    if (trace) trace->logits = logits;
    return logits;
}

void QatConfig::validate() const {
    if (epochs < 0) throw ConfigError("qat epochs must be >= 0");
    if (!(lr > 0.0f)) throw ConfigError("qat lr must be positive");
    if (batch_size < 1) throw ConfigError("qat batch_size must be >= 1");
    if (qmax < 3 || qmax > 32767) throw ConfigError("qat qmax out of range");
}

ModelParams qat_finetune(const ModelParams& p, const CalibrationStats& stats,
                         const BioformerConfig& cfg, const WindowDataset& ds,
                         std::span<const std::size_t> idx,
                         const QatConfig& qc) {
    cfg.validate();
    qc.validate();
    check_window_shape(ds, cfg);
    if (idx.empty()) throw ConfigError("QAT needs at least one window");
    for (std::size_t i : idx) {
        if (i >= ds.size())
            throw ShapeError("QAT index " + std::to_string(i) + " out of range");
        if (ds.labels[i] >= cfg.num_classes)
            throw ConfigError("label " + std::to_string(int(ds.labels[i])) +
                              " >= num_classes");
    }

    ModelParams master = p;
    OptimizerState st = make_optimizer(cfg);
    TrainConfig tc;
    tc.adam_beta1 = qc.adam_beta1;
    tc.adam_beta2 = qc.adam_beta2;
    tc.adam_eps = qc.adam_eps;
    Rng rng(qc.seed);
    std::vector<std::size_t> order(idx.begin(), idx.end());

    for (int epoch = 0; epoch < qc.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t b0 = 0; b0 < order.size();
             b0 += std::size_t(qc.batch_size)) {
            const std::size_t bn =
                std::min(order.size() - b0, std::size_t(qc.batch_size));
            // Straight-through step: the backward graph sees the snapped
            // weights the forward used, the update lands on the fp32 masters.
            ModelParams fake = master;
            for_each_param(fake, [&](const std::string&, Tensor& t) {
                const float s = scale_for(max_abs(t), qc.qmax);
                for (float& v : t.f)
                    v = float(std::clamp(double(std::llround(double(v) / s)),
                                         -double(qc.qmax), double(qc.qmax)) *
                              double(s));
            });
            ModelParams grads;
            accumulate_grads(
                cfg, bn,
                [&](std::size_t i, ModelParams& g, int& corr) {
                    const std::size_t w = order[b0 + i];
                    ForwardTrace tr;
                    fake_quant_forward(master, stats, cfg, ds.window(w),
                                       qc.qmax, &tr);
                    return backward_from_trace(fake, cfg, tr,
                                               int(ds.labels[w]), g, corr);
                },
                grads, nullptr);
            adam_step(master, grads, st, tc, qc.lr);
        }
    }
    return master;
}

std::size_t model_memory_bytes(const QuantizedModel& qm) {
    std::size_t total = 0;
    for_each_qtensor(qm, [&](const std::string&, const Tensor& t) {
        total += t.payload_bytes();
    });
    return total + 16 * qm.sites.size();
}

std::size_t activation_buffer_bytes(const BioformerConfig& cfg) {
    const std::size_t S = std::size_t(cfg.seq_len());
    const std::size_t C = std::size_t(cfg.embed);
    const std::size_t HP = std::size_t(cfg.concat_dim());
    const std::size_t P = std::size_t(cfg.head_dim);
    // Attention phase: x + ln + q/k/v + concat + one head's score/prob pair
    // and slices. Projection phase: x + concat + p1 pair + p2.
    const std::size_t attn = 2 * S * C + 4 * S * HP + 3 * S * P + 2 * S * S;
    const std::size_t proj = 2 * S * C + S * HP + 2 * S * std::size_t(cfg.ffn_dim);
    return std::size_t(cfg.window_len) * std::size_t(cfg.in_channels) +
           std::max(attn, proj);
}

int integer_graph_audit(const QuantizedModel& qm, const Tensor& probe) {
    int bad = 0;
    for_each_qtensor(qm, [&](const std::string&, const Tensor& t) {
        if (t.dtype == DType::F32) ++bad;
    });
    // Dynamic half: a probe forward must never reach the fp32 GEMM kernel.
    // (Resets the global kernel counters as a side effect.)
    kernels::reset_stats();
    int_forward(qm, probe);
    bad += int(kernels::stats().gemm_f32_calls);
    return bad;
}

CheckpointData to_checkpoint(const QuantizedModel& qm) {
    CheckpointData cd;
    cd.cfg = qm.cfg;
    cd.kind = kKindInt8;
    for_each_qtensor(qm, [&](const std::string& name, const Tensor& t) {
        cd.tensors.push_back({name, t});
    });
    cd.sites.reserve(qm.sites.size());
    for (const QuantSite& s : qm.sites) cd.sites.push_back({s.rq, s.scale});
    return cd;
}

QuantizedModel from_checkpoint(const CheckpointData& cd) {
    if (cd.kind != kKindInt8)
        throw ParseError("checkpoint does not hold an int8 model");
    cd.cfg.validate();
    const std::vector<std::string> names = quant_site_names(cd.cfg);
    if (cd.sites.size() != names.size())
        throw ParseError("checkpoint has " + std::to_string(cd.sites.size()) +
                         " requant sites, model needs " +
                         std::to_string(names.size()));

    std::map<std::string, const Tensor*> by_name;
    for (const NamedTensor& nt : cd.tensors) by_name[nt.name] = &nt.t;
    auto take = [&](const std::string& name, DType dt) -> const Tensor& {
        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw ParseError("checkpoint is missing tensor '" + name + "'");
        if (it->second->dtype != dt)
            throw ParseError("tensor '" + name + "' has the wrong dtype");
        return *it->second;
    };

    QuantizedModel qm;
    qm.cfg = cd.cfg;
    qm.conv_w = take("conv_w", DType::I8);
    qm.conv_b = take("conv_b", DType::I32);
    qm.class_token = take("cls", DType::I8);
    if (cd.cfg.use_pos_embedding) qm.pos_embedding = take("pos", DType::I8);
    const SiteMap sm(cd.cfg);
    for (int l = 0; l < cd.cfg.depth; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        QuantizedModel::Layer ql;
        ql.w_q = take(pre + "wq", DType::I8);
        ql.b_q = take(pre + "bq", DType::I32);
        ql.w_k = take(pre + "wk", DType::I8);
        ql.b_k = take(pre + "bk", DType::I32);
        ql.w_v = take(pre + "wv", DType::I8);
        ql.b_v = take(pre + "bv", DType::I32);
        ql.w_p1 = take(pre + "wp1", DType::I8);
        ql.b_p1 = take(pre + "bp1", DType::I32);
        ql.w_p2 = take(pre + "wp2", DType::I8);
        ql.b_p2 = take(pre + "bp2", DType::I32);
        if (cd.cfg.use_prenorm) {
            ql.ln_g = take(pre + "ln_g", DType::I8);
            ql.ln_b = take(pre + "ln_b", DType::I32);
            ql.ln = ops::make_int_ln(
                ql.ln_g, ql.ln_b, cd.sites[std::size_t(sm.ln(l))].scale);
        }
        qm.layers.push_back(std::move(ql));
    }
    qm.head_w = take("head_w", DType::I8);
    qm.head_b = take("head_b", DType::I32);

    // Multipliers are derivable from the stored scales; a mismatch against
    // the recorded ones means the file is corrupt or hand-edited.
    std::vector<float> s(cd.sites.size());
    for (std::size_t i = 0; i < cd.sites.size(); ++i) s[i] = cd.sites[i].scale;
    qm.sites = derive_sites(qm, s);
    for (std::size_t i = 0; i < qm.sites.size(); ++i)
        if (qm.sites[i].rq.mult != cd.sites[i].rq.mult ||
            qm.sites[i].rq.shift != cd.sites[i].rq.shift)
            throw ParseError("requant record mismatch at site '" +
                             qm.sites[i].name + "'");
    return qm;
}

void save_quantized(const std::string& path, const QuantizedModel& qm) {
    save_checkpoint(path, to_checkpoint(qm));
}

QuantizedModel load_quantized(const std::string& path) {
    return from_checkpoint(load_checkpoint(path));
}

}  // namespace bioformer
