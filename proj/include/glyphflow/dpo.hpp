#pragma once

#include "glyphflow/flowmatch.hpp"
#include "glyphflow/glyphworld.hpp"
#include "glyphflow/model.hpp"
#include "glyphflow/optim.hpp"
#include "glyphflow/scorers.hpp"

#include <string>
#include <vector>

namespace glyphflow::dpo {

struct DpoConfig {
    double beta = 500.0; // temperature in reconstruction-loss units
    double mu = 0.999;   // loser-branch strength in the safeguard
    double eps_safe = 1e-8;
    double lambda_min = 0.0;
    double lambda_max = 1.0;
    int batch_size = 32;
    bool shared_noise = true;     // one (t, eps) draw across the four branch evaluations
    bool per_batch_lambda = false; // per-pair by default
    int pair_sample_steps = 20;   // ODE steps for the model-generated candidate

    void validate() const;
};

struct PreferencePair {
    glyph::GlyphPrompt prompt;
    glyph::TokenSeq tokens;
    glyph::GlyphImage winner;
    glyph::GlyphImage loser;
    align::ScoreReport winner_scores;
    align::ScoreReport loser_scores;
    bool curated_is_winner = true;
};

/// One pair per prompt: the curated render is one candidate, a sample from
/// the given (SFT) checkpoint the other; both are scored by the ensemble and
/// the higher combined score wins, ties going to the curated image.
std::vector<PreferencePair> build_preference_pairs(const glyph::Dataset& prompts,
                                                   const core::ParamSet& sft_params,
                                                   const model::ModelConfig& cfg,
                                                   const align::ScorerEnsemble& ensemble,
                                                   const DpoConfig& dcfg, std::uint64_t seed,
                                                   int threads);

void save_pairs_jsonl(const std::vector<PreferencePair>& pairs, const std::string& path);
std::vector<PreferencePair> load_pairs_jsonl(const std::string& path);

struct InsideLoss {
    double inside = 0.0;
    double loss = 0.0;
    double l_theta_w = 0.0;
    double l_theta_l = 0.0;
    double l_ref_w = 0.0;
    double l_ref_l = 0.0;
};

/// inside = -beta * [(L_theta_w - L_ref_w) - (L_theta_l - L_ref_l)],
/// loss = -ln(sigma(inside)). Pure scalar formula.
InsideLoss dpo_inside_from_losses(double l_theta_w, double l_theta_l, double l_ref_w, double l_ref_l,
                                  double beta);

/// Full per-pair evaluation at shared (t, eps): reconstruction losses of
/// both branches under the policy and the frozen reference.
InsideLoss dpo_inside_and_loss(const core::ParamSet& params, const core::ParamSet& ref_params,
                               const model::ModelConfig& cfg, const PreferencePair& pair, double t,
                               const core::Tensor& eps, double beta);

/// lambda_safe = clip(mu * <g_w, g_l> / (|g_l|^2 + eps), lambda_min, lambda_max).
double sdpo_lambda(const core::Tensor& g_w, const core::Tensor& g_l, double mu, double eps_safe,
                   double lambda_min, double lambda_max);

struct DpoStepMetrics {
    double loss = 0.0;
    double inside = 0.0;
    double sigma_inside = 0.0;
    double lambda = 0.0;
    double winner_loss = 0.0;
    double loser_loss = 0.0;
    double grad_max_abs = 0.0; // largest batch-averaged gradient entry
};

/// One optimizer step over a pair batch. Output-space seeds are
/// w_dpo * g_w on the winner branch and -w_dpo * lambda_safe * g_l on the
/// loser branch, w_dpo = beta * sigma(-inside); seeds are backpropagated,
/// averaged over the batch and applied with AdamW.
DpoStepMetrics dpo_update_step(core::ParamSet& params, const core::ParamSet& ref_params,
                               const model::ModelConfig& cfg,
                               const std::vector<const PreferencePair*>& batch, const DpoConfig& dcfg,
                               core::AdamW& opt, double lr_scale, core::RngStream& rng, int threads);

} // namespace glyphflow::dpo
