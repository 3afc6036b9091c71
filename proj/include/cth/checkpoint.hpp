#pragma once

#include <cstdint>
#include <string>

#include "cth/condition.hpp"
#include "cth/net.hpp"

#include "json.hpp"

namespace cth {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string kind;  // "diffusion" | "unet_attn" | "unet_plain"
    ArchConfig arch;
    NormalizationStats stats;
    double sigma_data = 1.0;
    nlohmann::json training;  // hyperparameters and provenance
    uint64_t seed = 0;
};

struct LoadedCheckpoint {
    CheckpointMeta meta;
    ParamStore<float> params;
};

// Layout: "CTHD" | u32 version | u32 header_len | UTF-8 JSON header |
// u32 n_params | { u32 name_len | name | u32 ndim | u32 dims[] | f32 data } ...
// All integers little-endian. Round-trip is bit-exact.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore<float>& params);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cth
