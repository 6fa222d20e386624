#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "poec/config.hpp"
#include "poec/conv.hpp"
#include "poec/training.hpp"

namespace poec {

// On-disk model container.  Byte layout ("POEC" format, version 1):
//
//   "POEC"                         4 bytes
//   version                        u32 LE
//   section_count                  u32 LE
//   per section:
//     name_len, name bytes         u32 LE + ASCII
//     payload_len, payload bytes   u64 LE + raw
//
// All numeric content is little-endian regardless of host; arrays are
// written as (ndim u32, dims u32[ndim], data f64[prod]).  Sections are
// emitted in the fixed order conv, encoder_w, decoder_u, orientation_stats,
// train_config; omitted when absent.  save(load(save(m))) is byte-identical.
// Unknown section names are rejected on load.
struct Checkpoint {
    std::optional<ConvStack> conv;
    std::optional<PredictionWeights> encoder_w;
    std::optional<PredictionWeights> decoder_u;
    std::optional<OrientationStats> stats;
    std::optional<TrainConfig> config;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace poec
