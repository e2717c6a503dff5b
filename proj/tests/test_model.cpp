#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "bioformer/error.hpp"
#include "bioformer/model.hpp"
#include "bioformer/ops.hpp"
#include "bioformer/rng.hpp"
#include "oracles.hpp"

using namespace bioformer;

namespace {

// Small config used throughout: N = 3 tokens, C = 8, H = 2, P = 4.
BioformerConfig tiny_cfg() {
    BioformerConfig cfg;
    cfg.in_channels = 3;
    cfg.window_len = 30;
    cfg.filter = 10;
    cfg.embed = 8;
    cfg.heads = 2;
    cfg.depth = 1;
    cfg.head_dim = 4;
    cfg.ffn_dim = 16;
    cfg.num_classes = 8;
    return cfg;
}

Tensor random_window(Rng& rng, const BioformerConfig& cfg) {
    Tensor w = Tensor::f32({cfg.window_len, cfg.in_channels});
    for (auto& v : w.f) v = rng.gaussian();
    return w;
}

}  // namespace

TEST_CASE("config validation accepts the reference grid, rejects oddballs") {
    for (int h : {1, 2, 4, 8})
        for (int d : {1, 2, 3, 4})
            for (int f : {1, 5, 10, 20, 30}) {
                BioformerConfig cfg;
                cfg.heads = h;
                cfg.depth = d;
                cfg.filter = f;
                CHECK_NOTHROW(cfg.validate());
            }
    BioformerConfig bad;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = BioformerConfig{};
    bad.depth = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = BioformerConfig{};
    bad.filter = 15;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = BioformerConfig{};
    bad.window_len = 305;  // not divisible by 10
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tokenize: reference config yields 30 tokens of dim 64") {
    BioformerConfig cfg;  // defaults: window 300, F=10, C=64
    Rng rng(1);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = random_window(rng, cfg);
    const Tensor t = tokenize(w, p, cfg);
    CHECK(t.shape == std::vector<int>{30, 64});
}

TEST_CASE("tokenize: F=1 degenerates to a per-sample embedding") {
    BioformerConfig cfg;
    cfg.filter = 1;
    Rng rng(2);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = random_window(rng, cfg);
    const Tensor t = tokenize(w, p, cfg);
    CHECK(t.shape == std::vector<int>{300, 64});
    // Token i is exactly the linear embedding of sample i.
    Tensor one = Tensor::f32({1, cfg.in_channels});
    for (int c = 0; c < cfg.in_channels; ++c) one.at(0, c) = w.at(7, c);
    const Tensor emb = ops::matmul(one, p.conv_w, p.conv_b);
    for (int c = 0; c < cfg.embed; ++c) CHECK(t.at(7, c) == emb.at(0, c));
}

TEST_CASE("tokenize: all-zero window gives conv_b in every token") {
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(3);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = Tensor::f32({cfg.window_len, cfg.in_channels});
    const Tensor t = tokenize(w, p, cfg);
    for (int r = 0; r < cfg.tokens(); ++r)
        for (int c = 0; c < cfg.embed; ++c)
            CHECK(t.at(r, c) == p.conv_b.f[c]);
}

TEST_CASE("mhsa: single-token sequence has attention [[1]]") {
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(4);
    const ModelParams p = init_params(cfg, rng);
    Tensor x = Tensor::f32({1, cfg.embed});
    for (auto& v : x.f) v = rng.gaussian();
    ForwardTrace::Layer trace;
    (void)mhsa(x, p.layers[0], cfg, &trace);
    REQUIRE(trace.probs.size() == std::size_t(cfg.heads));
    for (const auto& pr : trace.probs) {
        CHECK(pr.shape == std::vector<int>{1, 1});
        CHECK(pr.f[0] == 1.0f);
    }
}

TEST_CASE("mhsa: zero value matrix zeroes the pre-projection output") {
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(5);
    ModelParams p = init_params(cfg, rng);
    for (auto& v : p.layers[0].w_v.f) v = 0.0f;
    for (auto& v : p.layers[0].b_v.f) v = 0.0f;
    Tensor x = Tensor::f32({4, cfg.embed});
    for (auto& v : x.f) v = rng.gaussian();
    ForwardTrace::Layer trace;
    (void)mhsa(x, p.layers[0], cfg, &trace);
    for (float v : trace.attn_concat.f) CHECK(v == 0.0f);
}

TEST_CASE("mhsa: random S'=4 C=8 H=2 P=4 matches the naive oracle") {
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const ModelParams p = init_params(cfg, rng);
        Tensor x = Tensor::f32({4, cfg.embed});
        for (auto& v : x.f) v = rng.gaussian();
        const Tensor got = mhsa(x, p.layers[0], cfg);
        const auto ref = oracles::mhsa_ref(x, p.layers[0], cfg);
        for (std::size_t i = 0; i < got.f.size(); ++i)
            CHECK(std::abs(got.f[i] - ref[i]) < 1e-5);
    }
}

TEST_CASE("forward: reference config emits 8 logits") {
    BioformerConfig cfg;  // Bio1 defaults
    Rng rng(7);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = random_window(rng, cfg);
    const Tensor logits = forward(w, p, cfg);
    CHECK(logits.shape == std::vector<int>{8});
    for (float v : logits.f) CHECK(std::isfinite(v));
}

TEST_CASE("forward: identical windows produce bit-identical logits") {
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(8);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = random_window(rng, cfg);
    const Tensor a = forward(w, p, cfg);
    const Tensor b = forward(w, p, cfg);
    CHECK(std::memcmp(a.f.data(), b.f.data(), a.f.size() * 4) == 0);
}

TEST_CASE("forward: attention of every head is row-stochastic") {
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(9);
    for (int trial = 0; trial < 25; ++trial) {
        const ModelParams p = init_params(cfg, rng);
        const Tensor w = random_window(rng, cfg);
        ForwardTrace trace;
        (void)forward(w, p, cfg, &trace);
        for (const auto& layer : trace.layers)
            for (const auto& probs : layer.probs)
                for (int r = 0; r < probs.rows(); ++r) {
                    double sum = 0.0;
                    for (int c = 0; c < probs.cols(); ++c) {
                        CHECK(probs.at(r, c) >= 0.0f);
                        sum += probs.at(r, c);
                    }
                    CHECK(std::abs(sum - 1.0) < 1e-6);
                }
    }
}

TEST_CASE("forward: token permutation leaves logits unchanged without pos") {
    BioformerConfig cfg = tiny_cfg();
    cfg.use_pos_embedding = false;
    cfg.depth = 2;
    Rng rng(10);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = random_window(rng, cfg);
    const Tensor base = forward(w, p, cfg);
    const int N = cfg.tokens(), F = cfg.filter, ch = cfg.in_channels;
    for (int trial = 0; trial < 20; ++trial) {
        // Permute the F-sample blocks of the window = permuting tokens.
        std::vector<int> perm(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) perm[i] = i;
        rng.shuffle(perm);
        Tensor pw = Tensor::f32({cfg.window_len, ch});
        for (int i = 0; i < N; ++i)
            for (int r = 0; r < F; ++r)
                for (int c = 0; c < ch; ++c)
                    pw.at(i * F + r, c) = w.at(perm[i] * F + r, c);
        const Tensor got = forward(pw, p, cfg);
        for (int i = 0; i < cfg.num_classes; ++i)
            CHECK(std::abs(got.f[i] - base.f[i]) < 1e-5);
        CHECK(predict(got) == predict(base));
    }
}

TEST_CASE("forward: positional embedding on breaks permutation invariance") {
    // Sanity check that the invariance above is not vacuous.
    BioformerConfig cfg = tiny_cfg();
    cfg.use_pos_embedding = true;
    Rng rng(11);
    const ModelParams p = init_params(cfg, rng);
    const Tensor w = random_window(rng, cfg);
    const Tensor base = forward(w, p, cfg);
    Tensor pw = Tensor::f32({cfg.window_len, cfg.in_channels});
    const int F = cfg.filter;
    // Swap token blocks 0 and 2.
    const int order[3] = {2, 1, 0};
    for (int i = 0; i < 3; ++i)
        for (int r = 0; r < F; ++r)
            for (int c = 0; c < cfg.in_channels; ++c)
                pw.at(i * F + r, c) = w.at(order[i] * F + r, c);
    const Tensor got = forward(pw, p, cfg);
    double diff = 0.0;
    for (int i = 0; i < cfg.num_classes; ++i)
        diff += std::abs(got.f[i] - base.f[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("predict: argmax with lowest-index ties") {
    Tensor logits = Tensor::f32({8});
    logits.f[7] = 1.0f;
    CHECK(predict(logits) == 7);
    Tensor tie = Tensor::f32({8});
    CHECK(predict(tie) == 0);
}

TEST_CASE("for_each_param: canonical order, unique names, stable count") {
    BioformerConfig cfg = tiny_cfg();
    cfg.depth = 2;
    ModelParams p = zero_params(cfg);
    std::vector<std::string> names;
    for_each_param(p, [&](const std::string& n, Tensor&) { names.push_back(n); });
    // conv_w conv_b cls pos + 12 per layer + head_w head_b
    CHECK(names.size() == 4 + 12 * 2 + 2);
    CHECK(names[0] == "conv_w");
    CHECK(names[3] == "pos");
    CHECK(names[4] == "l0.wq");
    CHECK(names.back() == "head_b");
    CHECK(std::set<std::string>(names.begin(), names.end()).size() ==
          names.size());

    // No pos table and no layernorm params when the flags are off.
    cfg.use_pos_embedding = false;
    cfg.use_prenorm = false;
    ModelParams q = zero_params(cfg);
    std::size_t count = 0;
    for_each_param(q, [&](const std::string&, Tensor&) { ++count; });
    CHECK(count == 3 + 10 * 2 + 2);
}

TEST_CASE("init_params is deterministic in the seed") {
    const BioformerConfig cfg = tiny_cfg();
    Rng r1(77), r2(77);
    ModelParams a = init_params(cfg, r1);
    ModelParams b = init_params(cfg, r2);
    bool equal = true;
    for_each_param(a, [&](const std::string& n, Tensor& t) {
        for_each_param(b, [&](const std::string& n2, Tensor& t2) {
            if (n == n2 && std::memcmp(t.f.data(), t2.f.data(),
                                       t.f.size() * 4) != 0)
                equal = false;
        });
    });
    CHECK(equal);
}
