#include "bioformer/profile.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bioformer/error.hpp"

namespace bioformer {

namespace {

// All counts in one place so macs/params/bytes stay consistent with each
// other and with the GEMM shapes in model.cpp / quant.cpp.
struct Dims {
    std::uint64_t n, s, c, h, p, hp, ffn, k, f, in;
    explicit Dims(const BioformerConfig& cfg)
        : n(static_cast<std::uint64_t>(cfg.tokens())),
          s(static_cast<std::uint64_t>(cfg.seq_len())),
          c(static_cast<std::uint64_t>(cfg.embed)),
          h(static_cast<std::uint64_t>(cfg.heads)),
          p(static_cast<std::uint64_t>(cfg.head_dim)),
          hp(static_cast<std::uint64_t>(cfg.concat_dim())),
          ffn(static_cast<std::uint64_t>(cfg.ffn_dim)),
          k(static_cast<std::uint64_t>(cfg.num_classes)),
          f(static_cast<std::uint64_t>(cfg.filter)),
          in(static_cast<std::uint64_t>(cfg.in_channels)) {}
};

std::string format(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

}  // namespace

void DeployModel::validate() const {
    if (!(idle_power_mW > 0.0) || !(active_power_mW > idle_power_mW))
        throw ConfigError("deploy model requires active_power > idle_power > 0");
    if (!(throughput_MMAC_per_ms > 0.0))
        throw ConfigError("deploy model requires positive throughput");
    if (!(period_ms > 0.0))
        throw ConfigError("deploy model requires a positive duty-cycle period");
    if (!(battery_Wh > 0.0))
        throw ConfigError("deploy model requires positive battery capacity");
}

std::uint64_t count_macs(const BioformerConfig& cfg) {
    cfg.validate();
    const Dims d(cfg);
    // Tokenizer conv as GEMM: [N x F*in] times [F*in x C].
    std::uint64_t total = d.n * d.f * d.in * d.c;
    // Per block: QKV projections, per-head score and context GEMMs (the two
    // S'^2 terms), then the projection pair.
    const std::uint64_t block = 3 * d.s * d.c * d.hp   // q, k, v
                                + d.h * d.s * d.s * d.p  // scores = q k^T
                                + d.h * d.s * d.s * d.p  // context = probs v
                                + d.s * d.hp * d.ffn     // proj1
                                + d.s * d.ffn * d.c;     // proj2
    total += static_cast<std::uint64_t>(cfg.depth) * block;
    return total + d.c * d.k;  // classifier head on the class row
}

std::uint64_t count_params(const BioformerConfig& cfg) {
    cfg.validate();
    const Dims d(cfg);
    std::uint64_t total = d.f * d.in * d.c + d.c  // conv
                          + d.c;                  // class token
    if (cfg.use_pos_embedding) total += d.s * d.c;
    std::uint64_t block = 3 * (d.c * d.hp + d.hp)  // q, k, v with biases
                          + d.hp * d.ffn + d.ffn   // proj1
                          + d.ffn * d.c + d.c;     // proj2
    if (cfg.use_prenorm) block += 2 * d.c;         // layernorm gain + shift
    total += static_cast<std::uint64_t>(cfg.depth) * block;
    return total + d.c * d.k + d.k;  // head
}

std::uint64_t param_bytes_int8(const BioformerConfig& cfg) {
    cfg.validate();
    const Dims d(cfg);
    // Weights land as int8, biases as int32, plus one 16-byte requant
    // record per quantization site — the exact checkpoint payload layout.
    std::uint64_t w = d.f * d.in * d.c + d.c + d.c * d.k;  // conv_w, cls, head_w
    if (cfg.use_pos_embedding) w += d.s * d.c;
    std::uint64_t b = d.c + d.k;  // conv_b, head_b
    std::uint64_t block_w = 3 * d.c * d.hp + d.hp * d.ffn + d.ffn * d.c;
    std::uint64_t block_b = 3 * d.hp + d.ffn + d.c;
    std::uint64_t sites = 3;  // in, seq, head
    if (cfg.use_prenorm) {
        block_w += d.c;  // ln gain (int8)
        block_b += d.c;  // ln shift (int32)
        sites += 9 * static_cast<std::uint64_t>(cfg.depth);
    } else {
        sites += 7 * static_cast<std::uint64_t>(cfg.depth);
    }
    const auto depth = static_cast<std::uint64_t>(cfg.depth);
    return (w + depth * block_w) + 4 * (b + depth * block_b) + 16 * sites;
}

CostReport estimate_deployment(std::uint64_t macs, const DeployModel& dm) {
    dm.validate();
    CostReport r;
    r.macs = macs;
    r.est_latency_ms = static_cast<double>(macs) / (dm.throughput_MMAC_per_ms * 1e6);
    r.est_energy_mJ = r.est_latency_ms * dm.active_power_mW / 1000.0;  // mW*ms -> mJ
    r.duty_cycle_ok = r.est_latency_ms <= dm.period_ms;
    // When inference overruns the period the device never idles and the
    // average collapses to the active draw.
    const double frame_ms = std::max(dm.period_ms, r.est_latency_ms);
    const double idle_ms = frame_ms - r.est_latency_ms;
    r.avg_power_mW = (r.est_latency_ms * dm.active_power_mW +
                      idle_ms * dm.idle_power_mW) /
                     frame_ms;
    r.battery_hours = dm.battery_Wh / (r.avg_power_mW / 1000.0);
    return r;
}

CostReport profile_config(const BioformerConfig& cfg, const DeployModel& dm) {
    CostReport r = estimate_deployment(count_macs(cfg), dm);
    r.params = count_params(cfg);
    r.param_bytes_int8 = param_bytes_int8(cfg);
    return r;
}

std::vector<std::size_t> pareto_scan(std::span<const GridEntry> grid,
                                     CostAxis axis) {
    std::vector<std::uint64_t> cost(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!std::isfinite(grid[i].accuracy))
            throw ConfigError("pareto scan requires finite accuracies");
        cost[i] = axis == CostAxis::Macs ? count_macs(grid[i].cfg)
                                         : count_params(grid[i].cfg);
    }
    std::vector<std::size_t> order(grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (cost[a] != cost[b]) return cost[a] < cost[b];
        if (grid[a].accuracy != grid[b].accuracy)
            return grid[a].accuracy > grid[b].accuracy;
        return a < b;
    });
    // One sweep over cost groups: a point survives unless a strictly
    // cheaper point matches its accuracy or an equal-cost point beats it.
    std::vector<std::size_t> front;
    float best_cheaper = -1.0f;  // accuracies are nonnegative
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && cost[order[j]] == cost[order[i]]) ++j;
        const float group_best = grid[order[i]].accuracy;
        for (std::size_t t = i; t < j; ++t) {
            const float acc = grid[order[t]].accuracy;
            if (acc == group_best && acc > best_cheaper) front.push_back(order[t]);
        }
        best_cheaper = std::max(best_cheaper, group_best);
        i = j;
    }
    return front;
}

std::string profile_csv(std::span<const ProfileRow> rows) {
    std::string out =
        "name,params,macs,memory_kB,latency_ms,energy_mJ,avg_power_mW,"
        "battery_h\n";
    for (const auto& row : rows) {
        const CostReport& r = row.report;
        out += row.name;
        out += ',' + std::to_string(r.params);
        out += ',' + std::to_string(r.macs);
        out += ',' + format("%.3f", static_cast<double>(r.param_bytes_int8) / 1000.0);
        out += ',' + format("%.4f", r.est_latency_ms);
        out += ',' + format("%.5f", r.est_energy_mJ);
        out += ',' + format("%.4f", r.avg_power_mW);
        out += ',' + format("%.1f", r.battery_hours);
        out += '\n';
    }
    return out;
}

std::string profile_table(std::span<const ProfileRow> rows) {
    std::size_t name_w = 5;  // "model"
    for (const auto& row : rows) name_w = std::max(name_w, row.name.size());
    char line[256];
    std::snprintf(line, sizeof(line),
                  "%-*s  %9s  %7s  %8s  %8s  %8s  %9s\n",
                  static_cast<int>(name_w), "model", "Mem[kB]", "MMAC",
                  "Lat[ms]", "E[mJ]", "P[mW]", "Batt[h]");
    std::string out = line;
    for (const auto& row : rows) {
        const CostReport& r = row.report;
        std::snprintf(line, sizeof(line),
                      "%-*s  %9.1f  %7.2f  %8.3f  %8.4f  %8.3f  %9.1f%s\n",
                      static_cast<int>(name_w), row.name.c_str(),
                      static_cast<double>(r.param_bytes_int8) / 1000.0,
                      static_cast<double>(r.macs) / 1e6, r.est_latency_ms,
                      r.est_energy_mJ, r.avg_power_mW, r.battery_hours,
                      r.duty_cycle_ok ? "" : "  [overruns period]");
        out += line;
    }
    return out;
}

}  // namespace bioformer
