#include "bioformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <thread>

#include "bioformer/error.hpp"
#include "bioformer/ops.hpp"

namespace bioformer {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) {
        throw ConfigError("train config: " + msg);
    };
    if (pretrain_epochs <= 0 || finetune_epochs <= 0)
        fail("epoch counts must be positive");
    if (warmup_epochs < 0) fail("warmup_epochs must be >= 0");
    if (!(warmup_start_lr > 0.0f) || !(pretrain_peak_lr > 0.0f) ||
        !(finetune_lr > 0.0f))
        fail("learning rates must be positive");
    if (finetune_drop_epoch < 0 || finetune_drop_epoch >= finetune_epochs)
        fail("finetune_drop_epoch must lie inside the finetune epoch range");
    if (batch_size <= 0) fail("batch_size must be positive");
    if (!(adam_beta1 > 0.0f && adam_beta1 < 1.0f) ||
        !(adam_beta2 > 0.0f && adam_beta2 < 1.0f))
        fail("adam betas must be in (0,1)");
    if (!(adam_eps > 0.0f)) fail("adam_eps must be positive");
    if (eval_every < 0) fail("eval_every must be >= 0");
}

const char* phase_name(Phase p) {
    return p == Phase::Pretrain ? "pretrain" : "finetune";
}

OptimizerState make_optimizer(const BioformerConfig& cfg) {
    return {zero_params(cfg), zero_params(cfg), 0};
}

namespace {

std::vector<Tensor*> collect(ModelParams& p) {
    std::vector<Tensor*> out;
    for_each_param(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<const Tensor*> collect(const ModelParams& p) {
    std::vector<const Tensor*> out;
    for_each_param(
        p, [&](const std::string&, const Tensor& t) { out.push_back(&t); });
    return out;
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.f.size(); ++i) dst.f[i] += src.f[i];
}

// dw += x^T . dy for a linear layer y = x.w + b.
void acc_wgrad(const Tensor& x, const Tensor& dy, Tensor& dw) {
    add_into(dw, ops::matmul(ops::transpose(x), dy));
}

void acc_bgrad(const Tensor& dy, Tensor& db) {
    for (int r = 0; r < dy.rows(); ++r)
        for (int c = 0; c < dy.cols(); ++c) db.f[std::size_t(c)] += dy.at(r, c);
}

// dy . w^T: gradient reaching the input of y = x.w + b.
Tensor input_grad(const Tensor& dy, const Tensor& w) {
    return ops::matmul(dy, ops::transpose(w));
}

Tensor slice_cols(const Tensor& x, int c0, int w) {
    Tensor out = Tensor::f32({x.rows(), w});
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = x.at(r, c0 + c);
    return out;
}

void set_cols(Tensor& dst, const Tensor& src, int c0) {
    for (int r = 0; r < src.rows(); ++r)
        for (int c = 0; c < src.cols(); ++c) dst.at(r, c0 + c) = src.at(r, c);
}

// d(scores) given post-softmax probs and d(probs): per row,
// ds = p * (dp - <p, dp>).
Tensor softmax_backward(const Tensor& p, const Tensor& dp) {
    Tensor ds = Tensor::f32({p.rows(), p.cols()});
    for (int r = 0; r < p.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < p.cols(); ++c)
            dot += double(p.at(r, c)) * dp.at(r, c);
        for (int c = 0; c < p.cols(); ++c)
            ds.at(r, c) = p.at(r, c) * float(double(dp.at(r, c)) - dot);
    }
    return ds;
}

// Gradient through y = gamma * (x - mu)/sqrt(var + eps) + beta, rows
// independent, biased variance (matches the forward op).
Tensor layernorm_backward(const Tensor& x, const Tensor& gamma, float eps,
                          const Tensor& dy, Tensor& dgamma, Tensor& dbeta) {
    const int R = x.rows(), C = x.cols();
    Tensor dx = Tensor::f32({R, C});
    std::vector<double> xhat(static_cast<std::size_t>(C));
    std::vector<double> dxh(static_cast<std::size_t>(C));
    for (int r = 0; r < R; ++r) {
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += x.at(r, c);
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = x.at(r, c) - mu;
            var += d * d;
        }
        var /= C;
        const double sigma = std::sqrt(var + double(eps));
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < C; ++c) {
            xhat[std::size_t(c)] = (x.at(r, c) - mu) / sigma;
            dxh[std::size_t(c)] = double(dy.at(r, c)) * gamma.f[std::size_t(c)];
            m1 += dxh[std::size_t(c)];
            m2 += dxh[std::size_t(c)] * xhat[std::size_t(c)];
        }
        m1 /= C;
        m2 /= C;
        for (int c = 0; c < C; ++c) {
            dx.at(r, c) = float(
                (dxh[std::size_t(c)] - m1 - xhat[std::size_t(c)] * m2) / sigma);
            dgamma.f[std::size_t(c)] += dy.at(r, c) * float(xhat[std::size_t(c)]);
            dbeta.f[std::size_t(c)] += dy.at(r, c);
        }
    }
    return dx;
}

// Backward through one attention block body; returns the gradient reaching
// its input (the layernorm output under pre-norm). Accumulates into glp.
Tensor mhsa_backward(const Tensor& dm, const ForwardTrace::Layer& tl,
                     const LayerParams& lp, const BioformerConfig& cfg,
                     LayerParams& glp) {
    const int H = cfg.heads, P = cfg.head_dim;
    const float inv_sqrt_p = 1.0f / std::sqrt(float(P));

    acc_wgrad(tl.p1, dm, glp.w_p2);
    acc_bgrad(dm, glp.b_p2);
    Tensor dr = input_grad(dm, lp.w_p2);  // [S' x ffn]
    for (std::size_t i = 0; i < dr.f.size(); ++i)
        if (!(tl.p1_pre.f[i] > 0.0f)) dr.f[i] = 0.0f;

    acc_wgrad(tl.attn_concat, dr, glp.w_p1);
    acc_bgrad(dr, glp.b_p1);
    Tensor dconcat = input_grad(dr, lp.w_p1);  // [S' x H*P]

    const int S = dconcat.rows();
    Tensor dq = Tensor::f32({S, H * P});
    Tensor dk = Tensor::f32({S, H * P});
    Tensor dv = Tensor::f32({S, H * P});
    for (int h = 0; h < H; ++h) {
        Tensor do_h = slice_cols(dconcat, h * P, P);
        Tensor qh = slice_cols(tl.q, h * P, P);
        Tensor kh = slice_cols(tl.k, h * P, P);
        Tensor vh = slice_cols(tl.v, h * P, P);
        const Tensor& ph = tl.probs[std::size_t(h)];

        Tensor dp = ops::matmul(do_h, ops::transpose(vh));   // [S' x S']
        Tensor dvh = ops::matmul(ops::transpose(ph), do_h);  // [S' x P]
        Tensor dsc = softmax_backward(ph, dp);
        for (float& v : dsc.f) v *= inv_sqrt_p;
        Tensor dqh = ops::matmul(dsc, kh);
        Tensor dkh = ops::matmul(ops::transpose(dsc), qh);
        set_cols(dq, dqh, h * P);
        set_cols(dk, dkh, h * P);
        set_cols(dv, dvh, h * P);
    }

    acc_wgrad(tl.ln_out, dq, glp.w_q);
    acc_bgrad(dq, glp.b_q);
    acc_wgrad(tl.ln_out, dk, glp.w_k);
    acc_bgrad(dk, glp.b_k);
    acc_wgrad(tl.ln_out, dv, glp.w_v);
    acc_bgrad(dv, glp.b_v);
    Tensor du = input_grad(dq, lp.w_q);
    add_into(du, input_grad(dk, lp.w_k));
    add_into(du, input_grad(dv, lp.w_v));
    return du;
}

int worker_count() {
    const char* env = std::getenv("BIOFORMER_THREADS");
    if (!env || !*env) {
        const int hw = int(std::thread::hardware_concurrency());
        return std::clamp(hw, 1, 8);
    }
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
        throw ConfigError("BIOFORMER_THREADS must be a positive integer");
    return int(std::min<long>(v, 8));
}

}  // namespace

// One window's (unnormalized) cross-entropy loss from a captured forward;
// gradients accumulate into g, so summing samples then scaling by 1/B
// yields the batch mean.
double backward_from_trace(const ModelParams& p, const BioformerConfig& cfg,
                           const ForwardTrace& tr, int label, ModelParams& g,
                           int& correct) {
    const Tensor& logits = tr.logits;
    const int K = cfg.num_classes;

    float zmax = logits.f[0];
    for (float z : logits.f) zmax = std::max(zmax, z);
    double zsum = 0.0;
    for (float z : logits.f) zsum += std::exp(double(z) - zmax);
    const double loss =
        std::log(zsum) - (double(logits.f[std::size_t(label)]) - zmax);
    if (ops::argmax(logits) == label) ++correct;

    Tensor dlogits = Tensor::f32({1, K});
    for (int j = 0; j < K; ++j)
        dlogits.at(0, j) =
            float(std::exp(double(logits.f[std::size_t(j)]) - zmax) / zsum -
                  (j == label ? 1.0 : 0.0));

    const Tensor& xfin = tr.layers.back().out;
    const int C = cfg.embed;
    Tensor cls = Tensor::f32({1, C});
    for (int c = 0; c < C; ++c) cls.at(0, c) = xfin.at(0, c);
    acc_wgrad(cls, dlogits, g.head_w);
    acc_bgrad(dlogits, g.head_b);
    Tensor dcls = input_grad(dlogits, p.head_w);  // [1 x C]

    const int S = cfg.seq_len();
    Tensor dx = Tensor::f32({S, C});
    for (int c = 0; c < C; ++c) dx.at(0, c) = dcls.at(0, c);

    for (int l = cfg.depth - 1; l >= 0; --l) {
        const auto& tl = tr.layers[std::size_t(l)];
        auto& gl = g.layers[std::size_t(l)];
        if (cfg.use_prenorm) {
            // x_out = x_in + mhsa(ln(x_in)): the residual passes dx through.
            Tensor du = mhsa_backward(dx, tl, p.layers[std::size_t(l)], cfg, gl);
            Tensor dxin = layernorm_backward(tl.x_in, p.layers[std::size_t(l)].ln_g,
                                             cfg.eps, du, gl.ln_g, gl.ln_b);
            add_into(dx, dxin);
        } else {
            dx = mhsa_backward(dx, tl, p.layers[std::size_t(l)], cfg, gl);
        }
    }

    if (cfg.use_pos_embedding) add_into(g.pos_embedding, dx);
    for (int c = 0; c < C; ++c) g.class_token.f[std::size_t(c)] += dx.at(0, c);

    const int N = cfg.tokens();
    Tensor dtok = Tensor::f32({N, C});
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < C; ++c) dtok.at(r, c) = dx.at(r + 1, c);
    acc_wgrad(tr.conv_in, dtok, g.conv_w);
    acc_bgrad(dtok, g.conv_b);
    return loss;
}

float accumulate_grads(
    const BioformerConfig& cfg, std::size_t n,
    const std::function<double(std::size_t, ModelParams&, int&)>& sample_loss,
    ModelParams& grads, int* correct) {
    if (n == 0) throw ConfigError("empty batch");

    // Per-sample gradients accumulate over a fixed 8-chunk tree (chunks in
    // index order, then chunk partials reduced in chunk order), which makes
    // the sum bit-identical for any worker count.
    constexpr int kChunks = 8;
    struct Slot {
        ModelParams g;
        double loss = 0.0;
        int correct = 0;
    };
    std::vector<Slot> slots;
    slots.reserve(kChunks);
    for (int c = 0; c < kChunks; ++c) slots.push_back({zero_params(cfg), 0.0, 0});

    auto run_chunk = [&](int c) {
        const std::size_t lo = std::size_t(c) * n / kChunks;
        const std::size_t hi = std::size_t(c + 1) * n / kChunks;
        for (std::size_t i = lo; i < hi; ++i)
            slots[std::size_t(c)].loss += sample_loss(
                i, slots[std::size_t(c)].g, slots[std::size_t(c)].correct);
    };

    const int workers = std::min<int>(worker_count(), kChunks);
    if (workers <= 1) {
        for (int c = 0; c < kChunks; ++c) run_chunk(c);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(workers));
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&, t] {
                for (int c = t; c < kChunks; c += workers) run_chunk(c);
            });
        for (auto& th : pool) th.join();
    }

    grads = zero_params(cfg);
    auto dst = collect(grads);
    double loss = 0.0;
    int corr = 0;
    for (int c = 0; c < kChunks; ++c) {
        auto src = collect(slots[std::size_t(c)].g);
        for (std::size_t t = 0; t < dst.size(); ++t) add_into(*dst[t], *src[t]);
        loss += slots[std::size_t(c)].loss;
        corr += slots[std::size_t(c)].correct;
    }
    const float inv = 1.0f / float(n);
    for (Tensor* t : dst)
        for (float& v : t->f) v *= inv;
    if (correct) *correct = corr;
    return float(loss / double(n));
}

float loss_and_grads(const ModelParams& p, const BioformerConfig& cfg,
                     const WindowDataset& ds, std::span<const std::size_t> idx,
                     ModelParams& grads, int* correct) {
    if (idx.empty()) throw ConfigError("empty batch");
    for (std::size_t i : idx) {
        if (i >= ds.size())
            throw ShapeError("batch index " + std::to_string(i) +
                             " out of range");
        if (ds.labels[i] >= cfg.num_classes)
            throw ConfigError("label " + std::to_string(int(ds.labels[i])) +
                              " >= num_classes");
    }

    return accumulate_grads(
        cfg, idx.size(),
        [&](std::size_t i, ModelParams& g, int& corr) {
            ForwardTrace tr;
            forward(ds.window(idx[i]), p, cfg, &tr);
            return backward_from_trace(p, cfg, tr, int(ds.labels[idx[i]]), g,
                                       corr);
        },
        grads, correct);
}

void adam_step(ModelParams& p, const ModelParams& grads, OptimizerState& st,
               const TrainConfig& tc, float lr) {
    st.step += 1;
    const double c1 = 1.0 - std::pow(double(tc.adam_beta1), double(st.step));
    const double c2 = 1.0 - std::pow(double(tc.adam_beta2), double(st.step));
    auto pw = collect(p);
    auto gw = collect(grads);
    auto mw = collect(st.m);
    auto vw = collect(st.v);
    if (pw.size() != gw.size() || pw.size() != mw.size())
        throw ShapeError("optimizer state does not mirror the parameters");
    for (std::size_t t = 0; t < pw.size(); ++t) {
        if (pw[t]->numel() != gw[t]->numel())
            throw ShapeError("gradient shape mismatch at tensor " +
                             std::to_string(t));
        for (std::size_t i = 0; i < pw[t]->f.size(); ++i) {
            const float g = gw[t]->f[i];
            float& m = mw[t]->f[i];
            float& v = vw[t]->f[i];
            m = tc.adam_beta1 * m + (1.0f - tc.adam_beta1) * g;
            v = tc.adam_beta2 * v + (1.0f - tc.adam_beta2) * g * g;
            const double mhat = double(m) / c1;
            const double vhat = double(v) / c2;
            pw[t]->f[i] -=
                float(double(lr) * mhat / (std::sqrt(vhat) + double(tc.adam_eps)));
        }
    }
}

float lr_at(Phase phase, int epoch, int step_in_epoch, int steps_per_epoch,
            const TrainConfig& tc) {
    if (epoch < 0 || step_in_epoch < 0 || steps_per_epoch <= 0)
        throw ConfigError("lr_at: bad epoch/step");
    if (phase == Phase::Finetune)
        return epoch < tc.finetune_drop_epoch ? tc.finetune_lr
                                              : tc.finetune_lr * 0.1f;
    const std::int64_t total =
        std::int64_t(tc.warmup_epochs) * steps_per_epoch;
    const std::int64_t gs =
        std::int64_t(epoch) * steps_per_epoch + step_in_epoch;
    if (gs >= total) return tc.pretrain_peak_lr;
    const double t = double(gs) / double(total);
    return float(double(tc.warmup_start_lr) +
                 (double(tc.pretrain_peak_lr) - double(tc.warmup_start_lr)) * t);
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "epoch,phase,lr,loss,train_acc,session,test_acc\n";
    char buf[160];
    for (const auto& r : rows) {
        int len = std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,", r.epoch,
                                phase_name(r.phase), double(r.lr),
                                double(r.loss), double(r.train_acc));
        out.append(buf, std::size_t(len));
        if (r.session >= 0) {
            len = std::snprintf(buf, sizeof buf, "%d,%.9g\n", r.session,
                                double(r.test_acc));
            out.append(buf, std::size_t(len));
        } else {
            out += ",\n";
        }
    }
    return out;
}

std::vector<std::size_t> pretrain_pool(const WindowDataset& ds,
                                       int target_subject) {
    std::vector<std::size_t> pool;
    bool seen_target = false;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.meta[i].subject == target_subject)
            seen_target = true;
        else
            pool.push_back(i);
    }
    if (!seen_target)
        throw ConfigError("target subject " + std::to_string(target_subject) +
                          " not present in the dataset");
    if (pool.empty())
        throw ConfigError("no other subjects available for pre-training");
    return pool;
}

namespace {

void check_dataset_shape(const WindowDataset& ds, const BioformerConfig& cfg) {
    if (ds.window_len != cfg.window_len || ds.channels != cfg.in_channels)
        throw ShapeError("dataset windows are " + std::to_string(ds.window_len) +
                         "x" + std::to_string(ds.channels) +
                         ", model expects " + std::to_string(cfg.window_len) +
                         "x" + std::to_string(cfg.in_channels));
}

struct EpochStats {
    float lr = 0.0f;
    double loss = 0.0;
    long correct = 0;
};

EpochStats run_epoch(ModelParams& params, OptimizerState& opt,
                     ModelParams& grads, std::vector<std::size_t>& order,
                     Rng& rng, const WindowDataset& ds,
                     const BioformerConfig& cfg, const TrainConfig& tc,
                     Phase phase, int epoch) {
    rng.shuffle(order);
    const std::size_t bs = std::size_t(tc.batch_size);
    const int spe = int((order.size() + bs - 1) / bs);
    EpochStats st;
    for (int step = 0; step < spe; ++step) {
        const std::size_t lo = std::size_t(step) * bs;
        const std::size_t len = std::min(bs, order.size() - lo);
        st.lr = lr_at(phase, epoch, step, spe, tc);
        int corr = 0;
        const float loss = loss_and_grads(
            params, cfg, ds, std::span(order).subspan(lo, len), grads, &corr);
        adam_step(params, grads, opt, tc, st.lr);
        st.loss += double(loss) * double(len);
        st.correct += corr;
    }
    st.loss /= double(order.size());
    return st;
}

}  // namespace

ModelParams pretrain_inter_subject(const WindowDataset& ds, int target_subject,
                                   const BioformerConfig& cfg,
                                   const TrainConfig& tc,
                                   std::vector<MetricsRow>* metrics) {
    cfg.validate();
    tc.validate();
    check_dataset_shape(ds, cfg);
    auto pool = pretrain_pool(ds, target_subject);

    Rng rng(tc.seed);
    ModelParams params = init_params(cfg, rng);
    OptimizerState opt = make_optimizer(cfg);
    ModelParams grads = zero_params(cfg);
    for (int epoch = 0; epoch < tc.pretrain_epochs; ++epoch) {
        EpochStats st = run_epoch(params, opt, grads, pool, rng, ds, cfg, tc,
                                  Phase::Pretrain, epoch);
        if (metrics)
            metrics->push_back({epoch, Phase::Pretrain, st.lr, float(st.loss),
                                float(double(st.correct) / double(pool.size())),
                                -1, -1.0f});
    }
    return params;
}

FinetuneResult finetune_subject(const ModelParams& init,
                                const WindowDataset& ds, int subject,
                                const BioformerConfig& cfg,
                                const TrainConfig& tc,
                                std::vector<MetricsRow>* metrics) {
    cfg.validate();
    tc.validate();
    check_dataset_shape(ds, cfg);

    std::vector<std::size_t> train_idx;
    std::map<int, std::vector<std::size_t>> test_by_session;
    bool seen = false;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.meta[i].subject != subject) continue;
        seen = true;
        const int s = ds.meta[i].session;
        if (s >= 1 && s <= 5)
            train_idx.push_back(i);
        else if (s >= 6 && s <= 10)
            test_by_session[s].push_back(i);
    }
    if (!seen)
        throw ConfigError("subject " + std::to_string(subject) +
                          " not present in the dataset");
    if (train_idx.empty())
        throw ConfigError("subject " + std::to_string(subject) +
                          " has no training sessions (1-5)");
    if (test_by_session.empty())
        throw ConfigError("subject " + std::to_string(subject) +
                          " has no test sessions (6-10)");

    // Split audit: no window id may appear on both sides of the split.
    std::set<std::uint64_t> train_ids;
    for (std::size_t i : train_idx) train_ids.insert(ds.window_id(i));
    for (const auto& [s, v] : test_by_session)
        for (std::size_t i : v)
            if (train_ids.count(ds.window_id(i)))
                throw std::logic_error("split audit: window id in both splits");

    ModelParams params = init;
    OptimizerState opt = make_optimizer(cfg);
    ModelParams grads = zero_params(cfg);
    // Distinct stream from pretraining so the two stages never share draws.
    Rng rng(tc.seed ^ (0x9E3779B97F4A7C15ull * std::uint64_t(subject + 1)));

    FinetuneResult res;
    for (int epoch = 0; epoch < tc.finetune_epochs; ++epoch) {
        EpochStats st = run_epoch(params, opt, grads, train_idx, rng, ds, cfg,
                                  tc, Phase::Finetune, epoch);
        const float tr_acc = float(double(st.correct) / double(train_idx.size()));
        if (metrics)
            metrics->push_back(
                {epoch, Phase::Finetune, st.lr, float(st.loss), tr_acc, -1, -1.0f});
        const bool last = epoch == tc.finetune_epochs - 1;
        const bool cadence =
            tc.eval_every > 0 && (epoch + 1) % tc.eval_every == 0;
        if (last || cadence) {
            for (const auto& [s, v] : test_by_session) {
                const float acc = evaluate(params, cfg, ds, v);
                if (last) res.session_acc[s] = acc;
                if (metrics)
                    metrics->push_back({epoch, Phase::Finetune, st.lr,
                                        float(st.loss), tr_acc, s, acc});
            }
        }
    }
    res.params = std::move(params);
    return res;
}

float evaluate(const ModelParams& p, const BioformerConfig& cfg,
               const WindowDataset& ds, std::span<const std::size_t> idx) {
    if (idx.empty()) throw ConfigError("empty evaluation set");
    long correct = 0;
    for (std::size_t i : idx) {
        const Tensor w = ds.window(i);
        const Tensor logits = forward(w, p, cfg);
        if (predict(logits) == int(ds.labels[i])) ++correct;
    }
    return float(double(correct) / double(idx.size()));
}

}  // namespace bioformer
