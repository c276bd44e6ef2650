#pragma once

#include "glyphflow/glyphworld.hpp"
#include "glyphflow/model.hpp"
#include "glyphflow/params.hpp"
#include "glyphflow/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace glyphflow::flow {

// Convention: t = 1 is pure noise, t = 0 is data. The network regresses the
// sampling-direction velocity u = x0 - eps, so samplers integrate
// x <- x + dt * v while t decreases on a uniform grid.

/// x_t = (1 - t) * x0 + t * eps.
core::Tensor interpolate(const core::Tensor& x0, const core::Tensor& noise, double t);

/// Regression target u = x0 - eps.
core::Tensor velocity_target(const core::Tensor& x0, const core::Tensor& noise);

// ---------------------------------------------------------------------------
// Training loss
// ---------------------------------------------------------------------------

struct FlowBatchItem {
    glyph::TokenSeq tokens;
    core::Tensor x0;
    core::Tensor noise;
    double t = 0.5;
    bool drop_cond = false; // conditioning dropout -> learned null sequence
};

/// Draw (t, eps, dropout) for a batch of dataset items. Timesteps are
/// uniform on (0.001, 0.999).
std::vector<FlowBatchItem> make_flow_batch(const std::vector<const glyph::DatasetItem*>& items,
                                           const model::ModelConfig& cfg, core::RngStream& rng);

struct FmLossResult {
    double loss = 0.0;
    core::GradMap grads;
};

/// Mean over batch and pixels of (v_theta(x_t, t, c) - u)^2, with gradients.
/// Batch items run in parallel; the reduction is sequential in item order.
/// Halts on a non-finite loss.
FmLossResult fm_loss(const core::ParamSet& params, const model::ModelConfig& cfg,
                     const std::vector<FlowBatchItem>& batch, int threads);

/// Loss only (no gradient sweep), e.g. for held-out evaluation.
double fm_loss_value(const core::ParamSet& params, const model::ModelConfig& cfg,
                     const FlowBatchItem& item);

/// Tape-level building block shared with the preference stages: builds the
/// velocity at x_t = interpolate(x0, noise, t) and the per-item
/// reconstruction loss mean((v - u)^2).
struct ReconNodes {
    core::Val velocity;
    core::Val loss;
    core::Tensor x_t;
    core::Tensor target;
};
ReconNodes build_recon_loss(core::Tape& tape, const model::TapeParams& p, const model::ModelConfig& cfg,
                            const glyph::TokenSeq& tokens, const core::Tensor& x0,
                            const core::Tensor& noise, double t, model::CondMode mode);

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// Velocity field hook; the tests drive the integrators with stub fields.
using VelocityFn = std::function<core::Tensor(const core::Tensor& x, double t)>;

struct SamplerSchedule {
    int steps = 50;
    /// When set, rollout timesteps reuse the values of a uniform reference
    /// grid with this many steps at proportionally matched indices (with
    /// uniform grids the values coincide with the plain rollout grid).
    std::optional<int> coeff_preserving_reference;

    /// Timestep at the start of step k and the step size to the next node.
    double t_at(int k) const;
    double dt_at(int k) const;
};

/// Forward-Euler integration of the field from x at t=1 down to t=0.
core::Tensor integrate_ode(const VelocityFn& field, core::Tensor x, const SamplerSchedule& schedule);

/// ODE sampling from seeded noise; guidance g combines conditional and
/// null-conditioned predictions v = v_null + g * (v_cond - v_null) for g != 1.
core::Tensor sample_ode(const core::ParamSet& params, const model::ModelConfig& cfg,
                        const glyph::TokenSeq& tokens, glyph::Resolution res,
                        const SamplerSchedule& schedule, core::RngStream rng,
                        double guidance_scale = 1.0);

struct TrajectoryStep {
    double t = 0.0;      // timestep at the start of the step
    double dt = 0.0;     // step size
    core::Tensor state;  // x before the step
    core::Tensor mean;   // transition mean m = x + dt * v
    double std = 0.0;    // shared per-pixel transition std
    core::Tensor next;   // sampled next state
    double logprob = 0.0;
};

struct Trajectory {
    glyph::TokenSeq tokens;
    std::vector<TrajectoryStep> steps;
    core::Tensor final_image;
};

/// Diagonal-Gaussian log-density of x_next under (mean, std), summed over
/// pixels. std must be positive.
double transition_logprob(const core::Tensor& mean, double std, const core::Tensor& x_next);

/// Gaussian-perturbed Euler rollout recording per-step transition
/// statistics: m = x + dt * v, s = sigma_s * sqrt(dt), next = m + s * xi.
/// sigma_s = 0 with log-probs requested is rejected; without them it
/// degenerates to the ODE path.
Trajectory integrate_sde(const VelocityFn& field, core::Tensor x, const SamplerSchedule& schedule,
                         double sigma_s, core::RngStream rng, bool record_logprobs = true);

Trajectory sample_sde(const core::ParamSet& params, const model::ModelConfig& cfg,
                      const glyph::TokenSeq& tokens, glyph::Resolution res,
                      const SamplerSchedule& schedule, double sigma_s, core::RngStream rng,
                      bool record_logprobs = true);

/// Transition mean under the bound parameters on a stored state:
/// m = x + dt * v_theta(x, t, c). Used by the GRPO likelihood recomputation.
core::Val build_transition_mean(core::Tape& tape, const model::TapeParams& p,
                                const model::ModelConfig& cfg, const glyph::TokenSeq& tokens,
                                const core::Tensor& x, double t, double dt);

void save_trajectory_jsonl(const Trajectory& traj, const std::string& path);

} // namespace glyphflow::flow
