// Analytic cost model: closed-form MAC and parameter counts for any model
// configuration, int8 deployment byte counts matching the quantized
// checkpoint layout, latency/energy/battery estimates for the duty-cycled
// target, and Pareto-front selection over a configuration grid.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bioformer/model.hpp"

namespace bioformer {

// Published footprint of the TCN baseline (TEMPONet) the transformer family
// is compared against.
inline constexpr double kTempoNetBytes = 461.0e3;
inline constexpr double kTempoNetMacs = 16.0e6;

// Target duty cycle: one classification per 15 ms window slide, inference
// at 51 mW on the accelerator cluster, 10 mW idle floor, and a 1000 mAh /
// 3.3 V battery. Throughput is one global constant calibrated from a
// single measured row (3.3 MMAC in 2.72 ms); the estimate bands absorb
// kernel-efficiency variation across configurations.
inline constexpr double kCalibratedMmacPerMs = 3.3 / 2.72;

struct DeployModel {
    double active_power_mW = 51.0;
    double idle_power_mW = 10.0;
    double throughput_MMAC_per_ms = kCalibratedMmacPerMs;
    double period_ms = 15.0;
    double battery_Wh = 3.3;

    void validate() const;  // throws ConfigError
};

struct CostReport {
    std::uint64_t macs = 0;
    std::uint64_t params = 0;
    std::uint64_t param_bytes_int8 = 0;
    double est_latency_ms = 0.0;
    double est_energy_mJ = 0.0;  // == est_latency_ms * active_power by construction
    double avg_power_mW = 0.0;
    double battery_hours = 0.0;
    // False when inference cannot finish inside the duty-cycle period; the
    // average power then degenerates to the active draw.
    bool duty_cycle_ok = true;
};

// Multiply-accumulates of one forward pass (GEMM convention: softmax,
// layernorm and activation flops excluded). Equals the instrumented kernel
// counter for a traced forward exactly.
std::uint64_t count_macs(const BioformerConfig& cfg);

// Parameter element count, including biases, the class token and the
// positional table. Equals enumeration of a materialized model exactly.
std::uint64_t count_params(const BioformerConfig& cfg);

// Bytes of the lowered int8 deployment: 1 per weight, 4 per int32 bias,
// 16 per requant site. Equals model_memory_bytes of a lowered model.
std::uint64_t param_bytes_int8(const BioformerConfig& cfg);

// Latency/energy/battery arithmetic for a given MAC count; the count and
// byte fields of the report are left for the caller (see profile_config).
CostReport estimate_deployment(std::uint64_t macs, const DeployModel& dm);

// Full report for one configuration.
CostReport profile_config(const BioformerConfig& cfg, const DeployModel& dm);

struct GridEntry {
    std::string name;
    BioformerConfig cfg;
    float accuracy = 0.0f;
};

enum class CostAxis { Macs, Params };

// Indices of the non-dominated entries under (maximize accuracy, minimize
// the chosen cost axis), sorted by ascending cost, then descending
// accuracy, then input order — deterministic for equal points.
std::vector<std::size_t> pareto_scan(std::span<const GridEntry> grid,
                                     CostAxis axis);

struct ProfileRow {
    std::string name;
    CostReport report;
};

// CSV export: name,params,macs,memory_kB,latency_ms,energy_mJ,avg_power_mW,
// battery_h. Fixed formatting so identical inputs emit identical bytes.
std::string profile_csv(std::span<const ProfileRow> rows);

// Aligned text table with the published columns (Memory, MMAC, Lat., E.).
std::string profile_table(std::span<const ProfileRow> rows);

}  // namespace bioformer
