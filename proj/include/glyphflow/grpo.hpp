#pragma once

#include "glyphflow/flowmatch.hpp"
#include "glyphflow/glyphworld.hpp"
#include "glyphflow/model.hpp"
#include "glyphflow/optim.hpp"
#include "glyphflow/scorers.hpp"

#include <vector>

namespace glyphflow::grpo {

struct GrpoConfig {
    int group_size = 8;     // G
    int rollout_steps = 10; // T, the reduced-step candidate sampling
    double eps_clip = 0.2;
    double beta_kl = 0.01;
    double sigma_s = 0.7;
    std::vector<int> window; // rollout steps receiving gradient; empty = all
    int update_epochs = 1;
    bool coeff_preserving = false;
    int coeff_reference_steps = 50;
    align::ScorerEnsemble rewards = align::ScorerEnsemble::ocr_only();

    std::vector<int> effective_window() const;
    flow::SamplerSchedule schedule() const;
    void validate() const;
};

using RewardReport = align::ScoreReport;

/// OCR-fidelity reward (plus optional auxiliary scorers) for a sampled image
/// against its prompt; combined value lies in [0, 1].
RewardReport glyph_reward(const glyph::GlyphImage& image, const glyph::GlyphPrompt& prompt,
                          const align::ScorerEnsemble& ensemble);

struct GroupSample {
    glyph::GlyphPrompt prompt;
    glyph::TokenSeq tokens;
    std::vector<flow::Trajectory> trajectories;
    std::vector<double> rewards;    // filled by the caller
    std::vector<double> advantages; // filled by the caller
};

/// G independent stochastic rollouts from disjoint RNG sub-streams; per-step
/// log-probs are recorded under the sampling parameters.
GroupSample sample_group(const core::ParamSet& params_old, const model::ModelConfig& cfg,
                         const glyph::GlyphPrompt& prompt, glyph::Resolution res,
                         const GrpoConfig& gcfg, std::uint64_t seed, int threads);

/// (r - mean) / population std; all zeros when the std falls below the
/// degenerate-group guard of 1e-6.
std::vector<double> compute_advantages(const std::vector<double>& rewards);

/// The clipped-ratio objective with per-step KL penalty:
/// (1/G) sum_i (1/T) sum_t [ min(r A_i, clip(r, 1-eps, 1+eps) A_i) - beta KL_t ],
/// r = exp(new_logp - old_logp). Maximization objective; training minimizes
/// its negation. Halts on non-finite ratios.
double grpo_objective(const core::Tensor& new_logps, const core::Tensor& old_logps,
                      const std::vector<double>& advantages, const core::Tensor& per_step_kl,
                      const GrpoConfig& gcfg);

/// One transition's objective term on a tape. The clip's case analysis is
/// resolved at the current value: on the clipped side the surrogate is a
/// constant, so no gradient flows through the ratio.
struct ObjectiveTerm {
    core::Val term; // min(rA, clip(r)A) - beta * kl as a tape node
    double value = 0.0;
    double ratio = 0.0;
    double kl = 0.0;
    bool clipped = false;
};
ObjectiveTerm build_objective_term(core::Tape& tape, core::Val mean_theta,
                                   const core::Tensor& x_next, double std, double old_logp,
                                   double advantage, const core::Tensor& mean_ref,
                                   const GrpoConfig& gcfg);

struct GrpoStepMetrics {
    double mean_reward = 0.0;
    double mean_abs_advantage = 0.0;
    double clip_fraction = 0.0;
    double mean_kl = 0.0;
    double objective = 0.0;
};

/// One GRPO update: rollout groups per prompt under params_old, reward and
/// normalize within each group, recompute transition means under the current
/// parameters on the stored states (std fixed by the schedule), and ascend
/// the clipped objective over the configured timestep window with AdamW.
GrpoStepMetrics grpo_update_step(core::ParamSet& params, const core::ParamSet& ref_params,
                                 const core::ParamSet& params_old, const model::ModelConfig& cfg,
                                 const std::vector<glyph::GlyphPrompt>& prompt_batch,
                                 glyph::Resolution res, const GrpoConfig& gcfg, core::AdamW& opt,
                                 double lr_scale, std::uint64_t seed, int threads);

/// Mean combined reward of freshly sampled groups; the pre/post evaluation
/// used around a GRPO run.
double evaluate_group_reward(const core::ParamSet& params, const model::ModelConfig& cfg,
                             const std::vector<glyph::GlyphPrompt>& prompts, glyph::Resolution res,
                             const GrpoConfig& gcfg, std::uint64_t seed, int threads);

} // namespace glyphflow::grpo
