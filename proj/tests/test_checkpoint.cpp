#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bioformer/checkpoint.hpp"
#include "bioformer/error.hpp"
#include "bioformer/model.hpp"
#include "bioformer/rng.hpp"

using namespace bioformer;

namespace {

std::string tmp_path(const char* name) {
    return std::string("ckpt_test_") + name + ".bin";
}

struct FileGuard {
    std::string path;
    ~FileGuard() { std::remove(path.c_str()); }
};

BioformerConfig tiny_cfg() {
    BioformerConfig cfg;
    cfg.in_channels = 3;
    cfg.window_len = 30;
    cfg.filter = 10;
    cfg.embed = 8;
    cfg.heads = 2;
    cfg.depth = 2;
    cfg.head_dim = 4;
    cfg.ffn_dim = 16;
    return cfg;
}

}  // namespace

TEST_CASE("fp32 model round-trips bit-exactly") {
    const auto path = tmp_path("roundtrip");
    FileGuard guard{path};
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(100);
    const ModelParams params = init_params(cfg, rng);
    save_model(path, cfg, params);

    auto [cfg2, params2] = load_model(path);
    CHECK(cfg2.embed == cfg.embed);
    CHECK(cfg2.heads == cfg.heads);
    CHECK(cfg2.depth == cfg.depth);
    CHECK(cfg2.use_pos_embedding == cfg.use_pos_embedding);
    CHECK(cfg2.eps == cfg.eps);

    std::vector<const Tensor*> a, b;
    for_each_param(params, [&](const std::string&, const Tensor& t) { a.push_back(&t); });
    for_each_param(params2, [&](const std::string&, const Tensor& t) { b.push_back(&t); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i]->shape == b[i]->shape);
        CHECK(std::memcmp(a[i]->f.data(), b[i]->f.data(), a[i]->f.size() * 4) == 0);
    }
}

TEST_CASE("saving twice produces identical bytes") {
    const auto p1 = tmp_path("bytes1"), p2 = tmp_path("bytes2");
    FileGuard g1{p1}, g2{p2};
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(7);
    const ModelParams params = init_params(cfg, rng);
    save_model(p1, cfg, params);
    save_model(p2, cfg, params);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(!s1.empty());
}

TEST_CASE("int8 container keeps tensors, scales and site records") {
    const auto path = tmp_path("int8");
    FileGuard guard{path};
    CheckpointData data;
    data.cfg = tiny_cfg();
    data.kind = kKindInt8;
    Tensor w = Tensor::i8({4, 3}, 0.05f);
    for (int i = 0; i < 12; ++i) w.q8[i] = std::int8_t(i - 6);
    Tensor b = Tensor::i32({3}, 0.05f * 0.1f);
    b.q32 = {-1000, 0, 77777};
    data.tensors.push_back({"w", w});
    data.tensors.push_back({"b", b});
    data.sites.push_back({kernels::make_requant(0.03), 0.11f});
    data.sites.push_back({kernels::make_requant(1.25), 0.22f});
    save_checkpoint(path, data);

    const CheckpointData back = load_checkpoint(path);
    CHECK(back.kind == kKindInt8);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].name == "w");
    CHECK(back.tensors[0].t.dtype == DType::I8);
    CHECK(back.tensors[0].t.scale == 0.05f);
    CHECK(back.tensors[0].t.q8 == w.q8);
    CHECK(back.tensors[1].t.q32 == b.q32);
    REQUIRE(back.sites.size() == 2);
    CHECK(back.sites[0].rq.mult == data.sites[0].rq.mult);
    CHECK(back.sites[0].rq.shift == data.sites[0].rq.shift);
    CHECK(back.sites[1].scale == 0.22f);

    // Payload accounting: 12 + 3*4 bytes of tensor data + 2*16 of sites.
    CHECK(checkpoint_payload_bytes(back) == 12 + 12 + 32);
}

TEST_CASE("bad magic raises a parse error") {
    const auto path = tmp_path("magic");
    FileGuard guard{path};
    std::ofstream out(path, std::ios::binary);
    out << "NOPEimmaterial";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
}

TEST_CASE("truncated file raises a parse error naming the byte offset") {
    const auto path = tmp_path("trunc");
    FileGuard guard{path};
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(8);
    save_model(path, cfg, init_params(cfg, rng));
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
    out.close();
    try {
        (void)load_checkpoint(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("missing tensors are rejected when loading as a model") {
    const auto path = tmp_path("missing");
    FileGuard guard{path};
    CheckpointData data;
    data.cfg = tiny_cfg();
    data.kind = kKindFp32;
    data.tensors.push_back({"conv_w", Tensor::f32({30, 8})});
    save_checkpoint(path, data);
    CHECK_THROWS_AS(load_model(path), ParseError);
}

TEST_CASE("unwritable target raises IoError and leaves no temp file") {
    const std::string path = "no_such_dir/ckpt.bin";
    const BioformerConfig cfg = tiny_cfg();
    Rng rng(9);
    CHECK_THROWS_AS(save_model(path, cfg, init_params(cfg, rng)), IoError);
    std::ifstream probe(path + ".tmp");
    CHECK(!probe.good());
}

TEST_CASE("failed save never replaces an existing file") {
    const auto path = tmp_path("atomic");
    FileGuard guard{path};
    std::ofstream pre(path, std::ios::binary);
    pre << "precious";
    pre.close();
    CheckpointData bad;
    bad.cfg = tiny_cfg();
    bad.cfg.heads = 3;  // invalid: save must throw before touching the file
    CHECK_THROWS_AS(save_checkpoint(path, bad), ConfigError);
    std::ifstream check(path);
    std::string content((std::istreambuf_iterator<char>(check)), {});
    CHECK(content == "precious");
}
