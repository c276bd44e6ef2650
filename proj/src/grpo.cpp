#include "glyphflow/grpo.hpp"

#include "glyphflow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace glyphflow::grpo {

using core::ParamSet;
using core::RngStream;
using core::Tape;
using core::Tensor;
using core::Val;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("grpo: " + msg); }

constexpr double kAdvantageGuard = 1e-6;

} // namespace

std::vector<int> GrpoConfig::effective_window() const {
    if (window.empty()) {
        std::vector<int> all(static_cast<std::size_t>(rollout_steps));
        for (int k = 0; k < rollout_steps; ++k) {
            all[static_cast<std::size_t>(k)] = k;
        }
        return all;
    }
    return window;
}

flow::SamplerSchedule GrpoConfig::schedule() const {
    flow::SamplerSchedule s;
    s.steps = rollout_steps;
    if (coeff_preserving) {
        s.coeff_preserving_reference = coeff_reference_steps;
    }
    return s;
}

void GrpoConfig::validate() const {
    if (group_size < 2) {
        fail("group_size must be >= 2");
    }
    if (rollout_steps < 1 || update_epochs < 1) {
        fail("rollout_steps and update_epochs must be >= 1");
    }
    if (!(eps_clip > 0.0) || eps_clip >= 1.0) {
        fail("eps_clip must lie in (0, 1)");
    }
    if (beta_kl < 0.0 || sigma_s <= 0.0) {
        fail("need beta_kl >= 0 and sigma_s > 0");
    }
    for (int k : window) {
        if (k < 0 || k >= rollout_steps) {
            fail("window step outside the rollout");
        }
    }
    rewards.validate();
}

RewardReport glyph_reward(const glyph::GlyphImage& image, const glyph::GlyphPrompt& prompt,
                          const align::ScorerEnsemble& ensemble) {
    return align::score_image(ensemble, image, prompt);
}

GroupSample sample_group(const ParamSet& params_old, const model::ModelConfig& cfg,
                         const glyph::GlyphPrompt& prompt, glyph::Resolution res,
                         const GrpoConfig& gcfg, std::uint64_t seed, int threads) {
    gcfg.validate();
    GroupSample group;
    group.prompt = prompt;
    group.tokens = glyph::tokenize_prompt(prompt, cfg.max_seq_len);
    group.trajectories.resize(static_cast<std::size_t>(gcfg.group_size));

    RngStream root(seed, 0x6690ULL);
    const flow::SamplerSchedule schedule = gcfg.schedule();
    core::parallel_for(gcfg.group_size, threads, [&](int i) {
        group.trajectories[static_cast<std::size_t>(i)] =
            flow::sample_sde(params_old, cfg, group.tokens, res, schedule, gcfg.sigma_s,
                             root.split(static_cast<std::uint64_t>(i)));
    });
    return group;
}

std::vector<double> compute_advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2) {
        fail("advantage normalization needs at least two rewards");
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= n;
    double var = 0.0;
    for (double r : rewards) {
        var += (r - mean) * (r - mean);
    }
    const double std = std::sqrt(var / n); // population std
    std::vector<double> adv(rewards.size(), 0.0);
    if (std < kAdvantageGuard) {
        return adv;
    }
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (rewards[i] - mean) / std;
    }
    return adv;
}

double grpo_objective(const Tensor& new_logps, const Tensor& old_logps,
                      const std::vector<double>& advantages, const Tensor& per_step_kl,
                      const GrpoConfig& gcfg) {
    if (!new_logps.same_shape(old_logps) || !new_logps.same_shape(per_step_kl)) {
        fail("objective inputs must share shape (G, T)");
    }
    const int g = new_logps.rows();
    const int t_steps = new_logps.cols();
    if (static_cast<int>(advantages.size()) != g) {
        fail("advantage count does not match the group size");
    }
    double total = 0.0;
    for (int i = 0; i < g; ++i) {
        const double a = advantages[static_cast<std::size_t>(i)];
        double inner = 0.0;
        for (int k = 0; k < t_steps; ++k) {
            const double r = std::exp(new_logps.at(i, k) - old_logps.at(i, k));
            if (!std::isfinite(r)) {
                fail("non-finite ratio at group " + std::to_string(i) + " step " + std::to_string(k));
            }
            const double clipped = std::clamp(r, 1.0 - gcfg.eps_clip, 1.0 + gcfg.eps_clip);
            inner += std::min(r * a, clipped * a) - gcfg.beta_kl * per_step_kl.at(i, k);
        }
        total += inner / t_steps;
    }
    return total / g;
}

ObjectiveTerm build_objective_term(Tape& tape, Val mean_theta, const Tensor& x_next, double std,
                                   double old_logp, double advantage, const Tensor& mean_ref,
                                   const GrpoConfig& gcfg) {
    if (!(std > 0.0)) {
        fail("objective term requires positive transition std");
    }
    const double d = static_cast<double>(x_next.numel());
    const double log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi * std * std);
    const double inv_two_var = 1.0 / (2.0 * std * std);

    // new log-probability of the stored transition under the current policy
    Val diff = tape.sub(tape.constant(x_next), mean_theta);
    Val new_logp = tape.add(tape.constant(Tensor::scalar(log_norm)),
                            tape.scale(tape.sum(tape.square(diff)), -inv_two_var));
    Val ratio = tape.exp(tape.sub(new_logp, tape.constant(Tensor::scalar(old_logp))));

    ObjectiveTerm out;
    out.ratio = tape.scalar_value(ratio);
    if (!std::isfinite(out.ratio)) {
        fail("non-finite policy ratio");
    }

    // analytic per-step Gaussian KL with shared std: |m_theta - m_ref|^2 / (2 s^2)
    Val kl = tape.scale(tape.sum(tape.square(tape.sub(mean_theta, tape.constant(mean_ref)))), inv_two_var);
    out.kl = tape.scalar_value(kl);

    const double clipped_ratio = std::clamp(out.ratio, 1.0 - gcfg.eps_clip, 1.0 + gcfg.eps_clip);
    out.clipped = (advantage > 0.0 && out.ratio > 1.0 + gcfg.eps_clip) ||
                  (advantage < 0.0 && out.ratio < 1.0 - gcfg.eps_clip);
    out.value = std::min(out.ratio * advantage, clipped_ratio * advantage) - gcfg.beta_kl * out.kl;

    // surrogate: constant on the clipped side, r * A elsewhere
    Val surrogate = out.clipped ? tape.constant(Tensor::scalar(clipped_ratio * advantage))
                                : tape.scale(ratio, advantage);
    out.term = tape.sub(surrogate, tape.scale(kl, gcfg.beta_kl));
    return out;
}

GrpoStepMetrics grpo_update_step(ParamSet& params, const ParamSet& ref_params,
                                 const ParamSet& params_old, const model::ModelConfig& cfg,
                                 const std::vector<glyph::GlyphPrompt>& prompt_batch,
                                 glyph::Resolution res, const GrpoConfig& gcfg, core::AdamW& opt,
                                 double lr_scale, std::uint64_t seed, int threads) {
    gcfg.validate();
    if (prompt_batch.empty()) {
        fail("empty prompt batch");
    }

    // 1) on-policy rollouts and group-relative advantages
    std::vector<GroupSample> groups;
    groups.reserve(prompt_batch.size());
    RngStream root(seed, 0x6691ULL);
    GrpoStepMetrics metrics;
    for (std::size_t pi = 0; pi < prompt_batch.size(); ++pi) {
        GroupSample group = sample_group(params_old, cfg, prompt_batch[pi], res, gcfg,
                                         root.split(pi).next_u64(), threads);
        for (const flow::Trajectory& traj : group.trajectories) {
            glyph::GlyphImage image;
            image.res = res;
            image.pixels = traj.final_image;
            group.rewards.push_back(glyph_reward(image, group.prompt, gcfg.rewards).combined);
        }
        group.advantages = compute_advantages(group.rewards);
        for (std::size_t i = 0; i < group.rewards.size(); ++i) {
            metrics.mean_reward += group.rewards[i];
            metrics.mean_abs_advantage += std::abs(group.advantages[i]);
        }
        groups.push_back(std::move(group));
    }
    const double n_samples = static_cast<double>(prompt_batch.size() * gcfg.group_size);
    metrics.mean_reward /= n_samples;
    metrics.mean_abs_advantage /= n_samples;

    // 2) gradient of the negated objective over the timestep window
    const std::vector<int> window = gcfg.effective_window();
    struct Job {
        const GroupSample* group;
        const flow::Trajectory* traj;
        double advantage;
        int step;
    };
    std::vector<Job> jobs;
    for (const GroupSample& group : groups) {
        for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
            for (int k : window) {
                jobs.push_back(Job{&group, &group.trajectories[i],
                                   group.advantages[i], k});
            }
        }
    }

    const double norm = 1.0 / (static_cast<double>(prompt_batch.size()) * gcfg.group_size *
                               static_cast<double>(window.size()));

    // The clipped ratio permits reusing one rollout for several gradient
    // passes; metrics report the first (on-policy) epoch.
    for (int epoch = 0; epoch < gcfg.update_epochs; ++epoch) {
        std::vector<core::GradMap> job_grads(jobs.size());
        std::vector<double> job_values(jobs.size());
        std::vector<double> job_kl(jobs.size());
        std::vector<char> job_clipped(jobs.size());

        core::parallel_for(static_cast<int>(jobs.size()), threads, [&](int j) {
            const Job& job = jobs[static_cast<std::size_t>(j)];
            const flow::TrajectoryStep& step = job.traj->steps[static_cast<std::size_t>(job.step)];

            Tape tape;
            model::TapeParams p = model::bind_params(tape, params, true);
            Val mean_theta = flow::build_transition_mean(tape, p, cfg, job.group->tokens, step.state,
                                                         step.t, step.dt);
            // reference transition mean, no gradient
            Tensor v_ref = model::forward_velocity(ref_params, cfg, job.group->tokens, step.state, step.t);
            Tensor mean_ref(step.state.shape());
            for (std::int64_t i = 0; i < mean_ref.numel(); ++i) {
                mean_ref[i] = step.state[i] + step.dt * v_ref[i];
            }

            ObjectiveTerm term = build_objective_term(tape, mean_theta, step.next, step.std,
                                                      step.logprob, job.advantage, mean_ref, gcfg);
            job_values[static_cast<std::size_t>(j)] = term.value;
            job_kl[static_cast<std::size_t>(j)] = term.kl;
            job_clipped[static_cast<std::size_t>(j)] = term.clipped ? 1 : 0;
            // minimize the negation of the normalized objective
            job_grads[static_cast<std::size_t>(j)] = tape.backward(tape.scale(term.term, -norm));
        });

        core::GradMap total;
        double objective = 0.0, mean_kl = 0.0, clip_fraction = 0.0;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            objective += job_values[j] * norm;
            mean_kl += job_kl[j] / static_cast<double>(jobs.size());
            clip_fraction += job_clipped[j] ? 1.0 / static_cast<double>(jobs.size()) : 0.0;
            for (auto& [name, g] : job_grads[j]) {
                auto it = total.find(name);
                if (it == total.end()) {
                    total.emplace(name, std::move(g));
                } else {
                    for (std::int64_t k = 0; k < it->second.numel(); ++k) {
                        it->second[k] += g[k];
                    }
                }
            }
        }
        if (!std::isfinite(objective)) {
            fail("non-finite objective");
        }
        if (epoch == 0) {
            metrics.objective = objective;
            metrics.mean_kl = mean_kl;
            metrics.clip_fraction = clip_fraction;
        }
        opt.step(params, total, lr_scale);
    }
    return metrics;
}

double evaluate_group_reward(const ParamSet& params, const model::ModelConfig& cfg,
                             const std::vector<glyph::GlyphPrompt>& prompts, glyph::Resolution res,
                             const GrpoConfig& gcfg, std::uint64_t seed, int threads) {
    double total = 0.0;
    RngStream root(seed, 0x6692ULL);
    for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
        GroupSample group =
            sample_group(params, cfg, prompts[pi], res, gcfg, root.split(pi).next_u64(), threads);
        for (const flow::Trajectory& traj : group.trajectories) {
            glyph::GlyphImage image;
            image.res = res;
            image.pixels = traj.final_image;
            total += glyph_reward(image, group.prompt, gcfg.rewards).combined;
        }
    }
    return total / (static_cast<double>(prompts.size()) * gcfg.group_size);
}

} // namespace glyphflow::grpo
