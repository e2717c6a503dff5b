// Checkpoint container. One format holds both fp32 and int8 models:
//
//   "BIOF"  magic
//   u16     format version (currently 1)
//   config  9 x u32 fields, u8 flags (bit0 pos_embedding, bit1 prenorm),
//           f32 eps
//   u8      model kind: 0 = fp32, 1 = int8 (lowered)
//   u32     tensor count, then per tensor:
//             u16 name_len, name bytes, u8 dtype, f32 scale, u8 ndim,
//             u32 dims[ndim], raw little-endian data
//   int8 only: u32 site count, then 16 bytes per requant site in canonical
//           order: i32 multiplier, i32 shift, f32 scale, f32 reserved
//
// Files are written to <path>.tmp and renamed into place, so a failed run
// never leaves a partial checkpoint behind.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bioformer/kernels.hpp"
#include "bioformer/model.hpp"
#include "bioformer/tensor.hpp"

namespace bioformer {

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kKindFp32 = 0;
inline constexpr std::uint8_t kKindInt8 = 1;

struct NamedTensor {
    std::string name;
    Tensor t;
};

struct SiteRecord {
    kernels::Requant rq;   // fixed-point multiplier applied at this site
    float scale = 1.0f;    // the site's output scale
};

struct CheckpointData {
    BioformerConfig cfg;
    std::uint8_t kind = kKindFp32;
    std::vector<NamedTensor> tensors;
    std::vector<SiteRecord> sites;  // int8 models only, canonical order
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Model payload bytes: raw tensor data plus 16 bytes per requant site.
// Container framing (magic, config, names, shapes) is excluded; this is the
// number the memory accounting reports.
std::size_t checkpoint_payload_bytes(const CheckpointData& data);

// fp32 conveniences over the generic container.
void save_model(const std::string& path, const BioformerConfig& cfg,
                const ModelParams& params);
std::pair<BioformerConfig, ModelParams> load_model(const std::string& path);

}  // namespace bioformer
