#pragma once

#include "glyphflow/model.hpp"
#include "glyphflow/optim.hpp"
#include "glyphflow/params.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace glyphflow::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint32_t version = kCheckpointVersion;
    model::ModelConfig config;
    std::string stage;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
};

/// Container layout: 8-byte little-endian header length, UTF-8 JSON header
/// (version, model config, stage, step, seed, parameter manifest with
/// name/shape/offset/frozen), then the parameter buffers as little-endian
/// 64-bit reals in manifest order. Writes go to a temp file and rename.
void save_checkpoint(const core::ParamSet& params, const CheckpointMeta& meta,
                     const std::string& path);

/// Optimizer moments stored in a sibling container (same layout) at
/// path + ".opt", with entries m.<name> / v.<name> and the step count.
void save_optimizer(const core::AdamW& opt, const core::ParamSet& params, const std::string& path);

struct LoadedCheckpoint {
    core::ParamSet params;
    CheckpointMeta meta;
};

/// Exact inverse of save_checkpoint. Refuses unknown versions and truncated
/// or inconsistent files, naming the missing byte range.
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Restores moments and step count into an optimizer; entries must match the
/// parameter set.
void load_optimizer(const std::string& path, core::AdamW& opt, const core::ParamSet& params);

std::string checkpoint_header_json(const std::string& path);

} // namespace glyphflow::pipeline
