#include "glyphflow/dpo.hpp"

#include "glyphflow/parallel.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace glyphflow::dpo {

using core::ParamSet;
using core::RngStream;
using core::Tape;
using core::Tensor;
using core::Val;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("dpo: " + msg); }

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// -ln(sigma(x)) = softplus(-x), computed stably
double neg_log_sigmoid(double x) {
    const double nx = -x;
    return std::max(nx, 0.0) + std::log1p(std::exp(-std::abs(nx)));
}

// output-space gradient of mean((v - u)^2): 2 (v - u) / numel
Tensor recon_output_grad(const Tensor& v, const Tensor& u) {
    Tensor g(v.shape());
    const double scale = 2.0 / static_cast<double>(v.numel());
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        g[i] = scale * (v[i] - u[i]);
    }
    return g;
}

double recon_loss_of(const ParamSet& params, const model::ModelConfig& cfg,
                     const glyph::TokenSeq& tokens, const Tensor& x0, const Tensor& eps, double t) {
    flow::FlowBatchItem item;
    item.tokens = tokens;
    item.x0 = x0;
    item.noise = eps;
    item.t = t;
    return flow::fm_loss_value(params, cfg, item);
}

} // namespace

void DpoConfig::validate() const {
    if (!(beta > 0.0)) {
        fail("beta must be positive");
    }
    if (!(mu > 0.0) || mu > 1.0) {
        fail("mu must be in (0, 1]");
    }
    if (lambda_min < 0.0 || lambda_min > lambda_max) {
        fail("need 0 <= lambda_min <= lambda_max");
    }
    if (batch_size < 1 || pair_sample_steps < 1) {
        fail("batch_size and pair_sample_steps must be >= 1");
    }
}

std::vector<PreferencePair> build_preference_pairs(const glyph::Dataset& prompts,
                                                   const ParamSet& sft_params,
                                                   const model::ModelConfig& cfg,
                                                   const align::ScorerEnsemble& ensemble,
                                                   const DpoConfig& dcfg, std::uint64_t seed,
                                                   int threads) {
    ensemble.validate();
    const int n = static_cast<int>(prompts.items.size());
    std::vector<PreferencePair> pairs(static_cast<std::size_t>(n));
    RngStream root(seed, 0xD40ULL);

    flow::SamplerSchedule schedule;
    schedule.steps = dcfg.pair_sample_steps;

    core::parallel_for(n, threads, [&](int i) {
        const glyph::DatasetItem& item = prompts.items[static_cast<std::size_t>(i)];
        PreferencePair pair;
        pair.prompt = item.prompt;
        pair.tokens = glyph::tokenize_prompt(item.prompt, cfg.max_seq_len);

        glyph::GlyphImage curated = item.image;
        glyph::GlyphImage sampled;
        sampled.res = item.image.res;
        sampled.pixels = flow::sample_ode(sft_params, cfg, pair.tokens, item.image.res, schedule,
                                          root.split(static_cast<std::uint64_t>(i)));

        const align::ScoreReport curated_scores = align::score_image(ensemble, curated, item.prompt);
        const align::ScoreReport sampled_scores = align::score_image(ensemble, sampled, item.prompt);

        // ties go to the curated image
        if (sampled_scores.combined > curated_scores.combined) {
            pair.winner = std::move(sampled);
            pair.winner_scores = sampled_scores;
            pair.loser = std::move(curated);
            pair.loser_scores = curated_scores;
            pair.curated_is_winner = false;
        } else {
            pair.winner = std::move(curated);
            pair.winner_scores = curated_scores;
            pair.loser = std::move(sampled);
            pair.loser_scores = sampled_scores;
            pair.curated_is_winner = true;
        }
        pairs[static_cast<std::size_t>(i)] = std::move(pair);
    });
    return pairs;
}

InsideLoss dpo_inside_from_losses(double l_theta_w, double l_theta_l, double l_ref_w, double l_ref_l,
                                  double beta) {
    InsideLoss out;
    out.l_theta_w = l_theta_w;
    out.l_theta_l = l_theta_l;
    out.l_ref_w = l_ref_w;
    out.l_ref_l = l_ref_l;
    out.inside = -beta * ((l_theta_w - l_ref_w) - (l_theta_l - l_ref_l));
    out.loss = neg_log_sigmoid(out.inside);
    return out;
}

InsideLoss dpo_inside_and_loss(const ParamSet& params, const ParamSet& ref_params,
                               const model::ModelConfig& cfg, const PreferencePair& pair, double t,
                               const Tensor& eps, double beta) {
    const double ltw = recon_loss_of(params, cfg, pair.tokens, pair.winner.pixels, eps, t);
    const double ltl = recon_loss_of(params, cfg, pair.tokens, pair.loser.pixels, eps, t);
    const double lrw = recon_loss_of(ref_params, cfg, pair.tokens, pair.winner.pixels, eps, t);
    const double lrl = recon_loss_of(ref_params, cfg, pair.tokens, pair.loser.pixels, eps, t);
    return dpo_inside_from_losses(ltw, ltl, lrw, lrl, beta);
}

double sdpo_lambda(const Tensor& g_w, const Tensor& g_l, double mu, double eps_safe,
                   double lambda_min, double lambda_max) {
    if (g_w.numel() != g_l.numel()) {
        fail("sdpo_lambda gradient length mismatch");
    }
    double dot = 0.0, norm_l = 0.0;
    for (std::int64_t i = 0; i < g_w.numel(); ++i) {
        dot += g_w[i] * g_l[i];
        norm_l += g_l[i] * g_l[i];
    }
    const double raw = mu * dot / (norm_l + eps_safe);
    return std::clamp(raw, lambda_min, lambda_max);
}

DpoStepMetrics dpo_update_step(ParamSet& params, const ParamSet& ref_params,
                               const model::ModelConfig& cfg,
                               const std::vector<const PreferencePair*>& batch, const DpoConfig& dcfg,
                               core::AdamW& opt, double lr_scale, RngStream& rng, int threads) {
    dcfg.validate();
    if (batch.empty()) {
        fail("empty pair batch");
    }
    const int n = static_cast<int>(batch.size());

    // Per-pair randomness drawn up front so threading cannot reorder it.
    struct Draw {
        double t_w, t_l;
        Tensor eps_w, eps_l;
    };
    std::vector<Draw> draws;
    draws.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Draw d;
        const auto shape = batch[static_cast<std::size_t>(i)]->winner.pixels.shape();
        d.t_w = rng.uniform(0.001, 0.999);
        d.eps_w = rng.normal_tensor(shape);
        if (dcfg.shared_noise) {
            d.t_l = d.t_w;
            d.eps_l = d.eps_w;
        } else {
            d.t_l = rng.uniform(0.001, 0.999);
            d.eps_l = rng.normal_tensor(shape);
        }
        draws.push_back(std::move(d));
    }

    // Per-batch safeguard mode: one lambda from the concatenated output-space
    // gradients, computed in a forward-only prepass.
    double lambda_batch = 1.0;
    if (dcfg.per_batch_lambda) {
        double dot = 0.0, norm_l = 0.0;
        for (int i = 0; i < n; ++i) {
            const PreferencePair& pair = *batch[static_cast<std::size_t>(i)];
            const Draw& d = draws[static_cast<std::size_t>(i)];
            const Tensor xw = flow::interpolate(pair.winner.pixels, d.eps_w, d.t_w);
            const Tensor uw = flow::velocity_target(pair.winner.pixels, d.eps_w);
            const Tensor vw = model::forward_velocity(params, cfg, pair.tokens, xw, d.t_w);
            const Tensor xl = flow::interpolate(pair.loser.pixels, d.eps_l, d.t_l);
            const Tensor ul = flow::velocity_target(pair.loser.pixels, d.eps_l);
            const Tensor vl = model::forward_velocity(params, cfg, pair.tokens, xl, d.t_l);
            const Tensor gw = recon_output_grad(vw, uw);
            const Tensor gl = recon_output_grad(vl, ul);
            for (std::int64_t k = 0; k < gw.numel(); ++k) {
                dot += gw[k] * gl[k];
                norm_l += gl[k] * gl[k];
            }
        }
        lambda_batch = std::clamp(dcfg.mu * dot / (norm_l + dcfg.eps_safe), dcfg.lambda_min,
                                  dcfg.lambda_max);
    }

    std::vector<core::GradMap> grads(static_cast<std::size_t>(n));
    std::vector<InsideLoss> inside_losses(static_cast<std::size_t>(n));
    std::vector<double> lambdas(static_cast<std::size_t>(n));

    core::parallel_for(n, threads, [&](int i) {
        const PreferencePair& pair = *batch[static_cast<std::size_t>(i)];
        const Draw& d = draws[static_cast<std::size_t>(i)];

        Tape tape;
        model::TapeParams p = model::bind_params(tape, params, true);
        flow::ReconNodes win = flow::build_recon_loss(tape, p, cfg, pair.tokens, pair.winner.pixels,
                                                      d.eps_w, d.t_w, model::CondMode::tokens);
        flow::ReconNodes lose = flow::build_recon_loss(tape, p, cfg, pair.tokens, pair.loser.pixels,
                                                       d.eps_l, d.t_l, model::CondMode::tokens);

        const double ltw = tape.scalar_value(win.loss);
        const double ltl = tape.scalar_value(lose.loss);
        const double lrw = recon_loss_of(ref_params, cfg, pair.tokens, pair.winner.pixels, d.eps_w, d.t_w);
        const double lrl = recon_loss_of(ref_params, cfg, pair.tokens, pair.loser.pixels, d.eps_l, d.t_l);
        inside_losses[static_cast<std::size_t>(i)] =
            dpo_inside_from_losses(ltw, ltl, lrw, lrl, dcfg.beta);

        const Tensor g_w = recon_output_grad(tape.value(win.velocity), win.target);
        const Tensor g_l = recon_output_grad(tape.value(lose.velocity), lose.target);
        const double lambda = dcfg.per_batch_lambda
                                  ? lambda_batch
                                  : sdpo_lambda(g_w, g_l, dcfg.mu, dcfg.eps_safe, dcfg.lambda_min,
                                                dcfg.lambda_max);
        lambdas[static_cast<std::size_t>(i)] = lambda;

        const double w_dpo = dcfg.beta * sigmoid(-inside_losses[static_cast<std::size_t>(i)].inside);
        Tensor seed_w(g_w.shape());
        Tensor seed_l(g_l.shape());
        for (std::int64_t k = 0; k < g_w.numel(); ++k) {
            seed_w[k] = w_dpo * g_w[k];
            seed_l[k] = -w_dpo * lambda * g_l[k];
        }
        grads[static_cast<std::size_t>(i)] =
            tape.backward_seeded({{win.velocity, seed_w}, {lose.velocity, seed_l}});
    });

    core::GradMap total;
    DpoStepMetrics metrics;
    const double inv = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        const InsideLoss& il = inside_losses[static_cast<std::size_t>(i)];
        metrics.loss += il.loss * inv;
        metrics.inside += il.inside * inv;
        metrics.sigma_inside += sigmoid(il.inside) * inv;
        metrics.lambda += lambdas[static_cast<std::size_t>(i)] * inv;
        metrics.winner_loss += il.l_theta_w * inv;
        metrics.loser_loss += il.l_theta_l * inv;
        for (auto& [name, g] : grads[static_cast<std::size_t>(i)]) {
            auto it = total.find(name);
            if (it == total.end()) {
                Tensor scaled(g.shape());
                for (std::int64_t k = 0; k < g.numel(); ++k) {
                    scaled[k] = g[k] * inv;
                }
                total.emplace(name, std::move(scaled));
            } else {
                for (std::int64_t k = 0; k < g.numel(); ++k) {
                    it->second[k] += g[k] * inv;
                }
            }
        }
    }
    for (const auto& [name, g] : total) {
        for (std::int64_t k = 0; k < g.numel(); ++k) {
            metrics.grad_max_abs = std::max(metrics.grad_max_abs, std::abs(g[k]));
        }
    }
    if (!std::isfinite(metrics.loss) || !std::isfinite(metrics.inside)) {
        fail("non-finite preference loss");
    }
    opt.step(params, total, lr_scale);
    return metrics;
}

void save_pairs_jsonl(const std::vector<PreferencePair>& pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        fail("cannot open '" + path + "' for writing");
    }
    for (const PreferencePair& pair : pairs) {
        nlohmann::json rec;
        rec["text"] = pair.prompt.text;
        rec["row"] = pair.prompt.row;
        rec["col"] = pair.prompt.col;
        rec["style"] = pair.prompt.style == glyph::Style::normal ? "normal" : "inverted";
        rec["resolution"] = glyph::resolution_name(pair.winner.res);
        rec["winner"] = pair.winner.pixels.vec();
        rec["loser"] = pair.loser.pixels.vec();
        rec["winner_score"] = pair.winner_scores.combined;
        rec["loser_score"] = pair.loser_scores.combined;
        rec["curated_is_winner"] = pair.curated_is_winner;
        out << rec.dump() << "\n";
    }
}

std::vector<PreferencePair> load_pairs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail("cannot open '" + path + "'");
    }
    std::vector<PreferencePair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        nlohmann::json rec = nlohmann::json::parse(line);
        PreferencePair pair;
        pair.prompt.text = rec.at("text").get<std::string>();
        pair.prompt.row = rec.at("row").get<int>();
        pair.prompt.col = rec.at("col").get<int>();
        pair.prompt.style =
            rec.at("style").get<std::string>() == "inverted" ? glyph::Style::inverted : glyph::Style::normal;
        const glyph::Resolution res = glyph::resolution_from_name(rec.at("resolution").get<std::string>());
        const int n = glyph::grid_size(res);
        pair.winner.res = res;
        pair.winner.pixels = Tensor({n, n}, rec.at("winner").get<std::vector<double>>());
        pair.loser.res = res;
        pair.loser.pixels = Tensor({n, n}, rec.at("loser").get<std::vector<double>>());
        pair.winner_scores.combined = rec.at("winner_score").get<double>();
        pair.loser_scores.combined = rec.at("loser_score").get<double>();
        pair.curated_is_winner = rec.at("curated_is_winner").get<bool>();
        pair.tokens = glyph::tokenize_prompt(pair.prompt);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

} // namespace glyphflow::dpo
