#include "glyphflow/flowmatch.hpp"

#include "glyphflow/parallel.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace glyphflow::flow {

using core::ParamSet;
using core::RngStream;
using core::Tape;
using core::Tensor;
using core::Val;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("flowmatch: " + msg); }

} // namespace

Tensor interpolate(const Tensor& x0, const Tensor& noise, double t) {
    if (!x0.same_shape(noise)) {
        fail("interpolate shape mismatch");
    }
    if (t < 0.0 || t > 1.0) {
        fail("interpolate timestep outside [0, 1]");
    }
    Tensor out(x0.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = (1.0 - t) * x0[i] + t * noise[i];
    }
    return out;
}

Tensor velocity_target(const Tensor& x0, const Tensor& noise) {
    if (!x0.same_shape(noise)) {
        fail("velocity_target shape mismatch");
    }
    Tensor out(x0.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = x0[i] - noise[i];
    }
    return out;
}

std::vector<FlowBatchItem> make_flow_batch(const std::vector<const glyph::DatasetItem*>& items,
                                           const model::ModelConfig& cfg, RngStream& rng) {
    std::vector<FlowBatchItem> batch;
    batch.reserve(items.size());
    for (const glyph::DatasetItem* item : items) {
        FlowBatchItem b;
        b.tokens = glyph::tokenize_prompt(item->prompt, cfg.max_seq_len);
        b.x0 = item->image.pixels;
        b.noise = rng.normal_tensor(item->image.pixels.shape());
        b.t = rng.uniform(0.001, 0.999);
        b.drop_cond = rng.uniform01() < cfg.cond_dropout_prob;
        batch.push_back(std::move(b));
    }
    return batch;
}

ReconNodes build_recon_loss(Tape& tape, const model::TapeParams& p, const model::ModelConfig& cfg,
                            const glyph::TokenSeq& tokens, const Tensor& x0, const Tensor& noise,
                            double t, model::CondMode mode) {
    ReconNodes nodes;
    nodes.x_t = interpolate(x0, noise, t);
    nodes.target = velocity_target(x0, noise);
    Val x = tape.constant(nodes.x_t);
    nodes.velocity = model::build_velocity(tape, p, cfg, tokens, x, t, mode);
    nodes.loss = tape.mean(tape.square(tape.sub(nodes.velocity, tape.constant(nodes.target))));
    return nodes;
}

FmLossResult fm_loss(const ParamSet& params, const model::ModelConfig& cfg,
                     const std::vector<FlowBatchItem>& batch, int threads) {
    if (batch.empty()) {
        fail("empty batch");
    }
    const int n = static_cast<int>(batch.size());
    std::vector<double> losses(static_cast<std::size_t>(n));
    std::vector<core::GradMap> grads(static_cast<std::size_t>(n));

    core::parallel_for(n, threads, [&](int i) {
        const FlowBatchItem& item = batch[static_cast<std::size_t>(i)];
        Tape tape;
        model::TapeParams p = model::bind_params(tape, params, true);
        ReconNodes nodes = build_recon_loss(tape, p, cfg, item.tokens, item.x0, item.noise, item.t,
                                            item.drop_cond ? model::CondMode::null_cond
                                                           : model::CondMode::tokens);
        losses[static_cast<std::size_t>(i)] = tape.scalar_value(nodes.loss);
        grads[static_cast<std::size_t>(i)] = tape.backward(nodes.loss);
    });

    FmLossResult result;
    for (int i = 0; i < n; ++i) {
        result.loss += losses[static_cast<std::size_t>(i)];
    }
    result.loss /= n;
    if (!std::isfinite(result.loss)) {
        fail("non-finite flow-matching loss");
    }
    const double inv = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        for (auto& [name, g] : grads[static_cast<std::size_t>(i)]) {
            auto it = result.grads.find(name);
            if (it == result.grads.end()) {
                Tensor scaled(g.shape());
                for (std::int64_t k = 0; k < g.numel(); ++k) {
                    scaled[k] = g[k] * inv;
                }
                result.grads.emplace(name, std::move(scaled));
            } else {
                Tensor& acc = it->second;
                for (std::int64_t k = 0; k < g.numel(); ++k) {
                    acc[k] += g[k] * inv;
                }
            }
        }
    }
    return result;
}

double fm_loss_value(const ParamSet& params, const model::ModelConfig& cfg, const FlowBatchItem& item) {
    Tensor x_t = interpolate(item.x0, item.noise, item.t);
    Tensor u = velocity_target(item.x0, item.noise);
    Tensor v = model::forward_velocity(params, cfg, item.tokens, x_t, item.t,
                                       item.drop_cond ? model::CondMode::null_cond
                                                      : model::CondMode::tokens);
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double d = v[i] - u[i];
        acc += d * d;
    }
    return acc / static_cast<double>(v.numel());
}

double SamplerSchedule::t_at(int k) const {
    if (steps < 1) {
        fail("sampler needs steps >= 1");
    }
    if (!coeff_preserving_reference) {
        return 1.0 - static_cast<double>(k) / steps;
    }
    // reuse the reference grid's node values at matched indices
    const int ref = *coeff_preserving_reference;
    const std::int64_t idx = static_cast<std::int64_t>(k) * ref / steps;
    return 1.0 - static_cast<double>(idx) / ref;
}

double SamplerSchedule::dt_at(int k) const { return t_at(k) - t_at(k + 1); }

Tensor integrate_ode(const VelocityFn& field, Tensor x, const SamplerSchedule& schedule) {
    for (int k = 0; k < schedule.steps; ++k) {
        const double t = schedule.t_at(k);
        const double dt = schedule.dt_at(k);
        Tensor v = field(x, t);
        if (!v.same_shape(x)) {
            fail("velocity field changed shape");
        }
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            x[i] += dt * v[i];
        }
    }
    return x;
}

namespace {

VelocityFn model_field(const ParamSet& params, const model::ModelConfig& cfg,
                       const glyph::TokenSeq& tokens, double guidance_scale) {
    return [&params, &cfg, tokens, guidance_scale](const Tensor& x, double t) {
        Tensor v_cond = model::forward_velocity(params, cfg, tokens, x, t, model::CondMode::tokens);
        if (guidance_scale == 1.0) {
            return v_cond;
        }
        Tensor v_null = model::forward_velocity(params, cfg, tokens, x, t, model::CondMode::null_cond);
        Tensor v(v_cond.shape());
        for (std::int64_t i = 0; i < v.numel(); ++i) {
            v[i] = v_null[i] + guidance_scale * (v_cond[i] - v_null[i]);
        }
        return v;
    };
}

} // namespace

Tensor sample_ode(const ParamSet& params, const model::ModelConfig& cfg, const glyph::TokenSeq& tokens,
                  glyph::Resolution res, const SamplerSchedule& schedule, RngStream rng,
                  double guidance_scale) {
    const int n = glyph::grid_size(res);
    Tensor x = rng.normal_tensor({n, n});
    return integrate_ode(model_field(params, cfg, tokens, guidance_scale), std::move(x), schedule);
}

double transition_logprob(const Tensor& mean, double std, const Tensor& x_next) {
    if (!(std > 0.0)) {
        fail("transition_logprob requires std > 0");
    }
    if (!mean.same_shape(x_next)) {
        fail("transition_logprob shape mismatch");
    }
    // Same expression shape as the tape-side recomputation in the GRPO
    // update, so recomputed log-probs under unchanged parameters are
    // bit-identical and the policy ratio is exactly 1.
    const double d = static_cast<double>(mean.numel());
    const double log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi * std * std);
    const double inv_two_var = 1.0 / (2.0 * std * std);
    double sq = 0.0;
    for (std::int64_t i = 0; i < mean.numel(); ++i) {
        const double diff = x_next[i] - mean[i];
        sq += diff * diff;
    }
    return log_norm + sq * -inv_two_var;
}

Trajectory integrate_sde(const VelocityFn& field, Tensor x, const SamplerSchedule& schedule,
                         double sigma_s, RngStream rng, bool record_logprobs) {
    if (sigma_s < 0.0) {
        fail("sigma_s must be >= 0");
    }
    if (sigma_s == 0.0 && record_logprobs) {
        fail("sigma_s = 0 has no transition density; log-probs rejected");
    }
    Trajectory traj;
    traj.steps.reserve(static_cast<std::size_t>(schedule.steps));
    for (int k = 0; k < schedule.steps; ++k) {
        TrajectoryStep step;
        step.t = schedule.t_at(k);
        step.dt = schedule.dt_at(k);
        step.state = x;
        Tensor v = field(x, step.t);
        step.mean = Tensor(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            step.mean[i] = x[i] + step.dt * v[i];
        }
        step.std = sigma_s * std::sqrt(step.dt);
        step.next = step.mean;
        if (sigma_s > 0.0) {
            for (std::int64_t i = 0; i < x.numel(); ++i) {
                step.next[i] += step.std * rng.normal();
            }
        }
        step.logprob = record_logprobs ? transition_logprob(step.mean, step.std, step.next) : 0.0;
        x = step.next;
        traj.steps.push_back(std::move(step));
    }
    traj.final_image = std::move(x);
    return traj;
}

Trajectory sample_sde(const ParamSet& params, const model::ModelConfig& cfg,
                      const glyph::TokenSeq& tokens, glyph::Resolution res,
                      const SamplerSchedule& schedule, double sigma_s, RngStream rng,
                      bool record_logprobs) {
    const int n = glyph::grid_size(res);
    Tensor x = rng.normal_tensor({n, n});
    Trajectory traj = integrate_sde(model_field(params, cfg, tokens, 1.0), std::move(x), schedule,
                                    sigma_s, rng, record_logprobs);
    traj.tokens = tokens;
    return traj;
}

Val build_transition_mean(Tape& tape, const model::TapeParams& p, const model::ModelConfig& cfg,
                          const glyph::TokenSeq& tokens, const Tensor& x, double t, double dt) {
    Val xv = tape.constant(x);
    Val v = model::build_velocity(tape, p, cfg, tokens, xv, t, model::CondMode::tokens);
    return tape.add(xv, tape.scale(v, dt));
}

void save_trajectory_jsonl(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        fail("cannot open '" + path + "' for writing");
    }
    for (std::size_t k = 0; k < traj.steps.size(); ++k) {
        const TrajectoryStep& s = traj.steps[k];
        nlohmann::json rec;
        rec["step"] = k;
        rec["t"] = s.t;
        rec["dt"] = s.dt;
        rec["std"] = s.std;
        rec["logprob"] = s.logprob;
        rec["state"] = s.state.vec();
        rec["mean"] = s.mean.vec();
        rec["next"] = s.next.vec();
        out << rec.dump() << "\n";
    }
}

} // namespace glyphflow::flow
