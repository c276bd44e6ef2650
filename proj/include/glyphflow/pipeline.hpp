#pragma once

#include "glyphflow/checkpoint.hpp"
#include "glyphflow/dpo.hpp"
#include "glyphflow/evalkit.hpp"
#include "glyphflow/flowmatch.hpp"
#include "glyphflow/grpo.hpp"
#include "glyphflow/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace glyphflow::pipeline {

enum class Stage : int { pretrain = 0, sft = 1, dpo = 2, grpo = 3 };

const char* stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

struct FmStageConfig {
    int steps = 0;
    double lr = 0.0; // 0 = inherit (sft from pretrain halved? no: explicit defaults below)
    int warmup_steps = 0;
    int batch_size = 8;
};

struct DpoStageConfig {
    int steps = 200;
    double lr = 0.0; // 0 = inherit the sft learning rate
    int batch_size = 32;
    int pair_count = 500;
    dpo::DpoConfig dpo;
};

struct GrpoStageConfig {
    int steps = 100;
    double lr = 0.0; // 0 = inherit the dpo learning rate
    int prompt_count = 5;
    int prompt_length = 2;
    int prompts_per_step = 1;
    grpo::GrpoConfig grpo;
};

struct DataConfig {
    int pretrain_count = 512;
    int sft_count = 512;
    int dpo_prompt_count = 500;
    int grpo_prompt_count = 64;
    int eval_count = 64;
};

struct PipelineConfig {
    std::uint64_t seed = 1234;
    std::string out_dir = "runs/smoke";
    int threads = 0; // 0 = hardware concurrency
    model::ModelConfig model;
    core::AdamWConfig optim; // lr field unused; stages carry their own
    DataConfig data;
    FmStageConfig pretrain{3000, 2e-3, 100, 8};
    FmStageConfig sft{1000, 1e-3, 50, 8};
    DpoStageConfig dpo;
    GrpoStageConfig grpo;
    flow::SamplerSchedule sampling; // ODE sampling for eval and probes
    double guidance_scale = 1.0;
    int log_every = 50;
    int sample_every = 500;

    double effective_lr(Stage stage) const;
    void validate() const;
};

PipelineConfig default_config();
PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& cfg, const std::string& path);

struct StageOutcome {
    Stage stage;
    std::string checkpoint_path;
    std::int64_t steps_run = 0;
    double final_metric = 0.0; // stage-specific: loss / loss / sigma(inside) / mean reward
};

struct PipelineResult {
    std::vector<StageOutcome> outcomes;
    std::string final_checkpoint;
    // grpo pre/post group-reward evaluation on the fixed prompt set
    double grpo_pre_reward = 0.0;
    double grpo_post_reward = 0.0;
};

/// Runs the requested contiguous stage range in order, chaining parameters,
/// writing per-stage checkpoints, append-only metric CSVs, and periodic
/// sample grids under cfg.out_dir. Deterministic in cfg.seed.
/// `resume` supplies the initial parameters when the first requested stage
/// is not pretrain.
PipelineResult run_pipeline(const PipelineConfig& cfg, Stage first = Stage::pretrain,
                            Stage last = Stage::grpo,
                            const std::optional<std::string>& resume = std::nullopt);

/// The fixed GRPO prompt set: the first prompt_count prompts of the
/// configured length from the grpo_prompts split.
std::vector<glyph::GlyphPrompt> grpo_prompt_set(const PipelineConfig& cfg);

} // namespace glyphflow::pipeline
