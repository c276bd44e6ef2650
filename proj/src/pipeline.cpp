#include "glyphflow/pipeline.hpp"

#include "glyphflow/parallel.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace glyphflow::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("pipeline: " + msg); }

// purpose tags for derived rng streams
enum : std::uint64_t {
    kTagPretrain = 101,
    kTagSft = 102,
    kTagDpo = 103,
    kTagGrpo = 104,
    kTagPairs = 105,
    kTagProbe = 106,
    kTagGrpoEval = 107,
};

class CsvLog {
public:
    CsvLog(const std::string& path, const std::string& header) : out_(path, std::ios::app) {
        if (!out_) {
            fail("cannot open log '" + path + "'");
        }
        if (fs::file_size(path) == 0) {
            out_ << header << "\n";
            out_.flush();
        }
    }
    template <typename... Args>
    void row(Args&&... args) {
        bool first = true;
        ((out_ << (first ? "" : ",") << args, first = false), ...);
        out_ << "\n";
        out_.flush(); // crash-parseable logs
    }

private:
    std::ofstream out_;
};

std::vector<const glyph::DatasetItem*> pick_batch(const glyph::Dataset& data, int batch_size,
                                                  core::RngStream& rng) {
    std::vector<const glyph::DatasetItem*> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        out.push_back(&data.items[rng.below(data.items.size())]);
    }
    return out;
}

void dump_probe_samples(const core::ParamSet& params, const PipelineConfig& cfg,
                        const glyph::Dataset& data, Stage stage, std::int64_t step) {
    const fs::path dir = fs::path(cfg.out_dir) / "samples";
    fs::create_directories(dir);
    core::RngStream rng(cfg.seed, kTagProbe);
    const int count = std::min<int>(4, static_cast<int>(data.items.size()));
    for (int i = 0; i < count; ++i) {
        const glyph::DatasetItem& item = data.items[static_cast<std::size_t>(i)];
        glyph::TokenSeq tokens = glyph::tokenize_prompt(item.prompt, cfg.model.max_seq_len);
        core::Tensor img = flow::sample_ode(params, cfg.model, tokens, item.image.res, cfg.sampling,
                                            rng.split(static_cast<std::uint64_t>(i)),
                                            cfg.guidance_scale);
        const std::string name = std::string(stage_name(stage)) + "_step" + std::to_string(step) +
                                 "_" + std::to_string(i) + ".pgm";
        glyph::write_pgm(img, (dir / name).string());
    }
}

std::string ckpt_path(const PipelineConfig& cfg, Stage stage) {
    return (fs::path(cfg.out_dir) / ("ckpt_" + std::string(stage_name(stage)) + ".bin")).string();
}

void write_stage_checkpoint(const core::ParamSet& params, const core::AdamW& opt,
                            const PipelineConfig& cfg, Stage stage, std::int64_t step) {
    CheckpointMeta meta;
    meta.config = cfg.model;
    meta.stage = stage_name(stage);
    meta.step = step;
    meta.seed = cfg.seed;
    const std::string path = ckpt_path(cfg, stage);
    save_checkpoint(params, meta, path);
    save_optimizer(opt, params, path + ".opt");
}

// pretrain and sft share the flow-matching loop
StageOutcome run_fm_stage(core::ParamSet& params, const PipelineConfig& cfg, Stage stage) {
    const FmStageConfig& scfg = stage == Stage::pretrain ? cfg.pretrain : cfg.sft;
    const glyph::Split split = stage == Stage::pretrain ? glyph::Split::pretrain : glyph::Split::sft;
    const int count = stage == Stage::pretrain ? cfg.data.pretrain_count : cfg.data.sft_count;
    glyph::Dataset data = glyph::generate_dataset(split, count, cfg.seed);

    core::AdamWConfig ocfg = cfg.optim;
    ocfg.lr = cfg.effective_lr(stage);
    core::AdamW opt(ocfg);
    core::RngStream rng(cfg.seed, stage == Stage::pretrain ? kTagPretrain : kTagSft);

    CsvLog log((fs::path(cfg.out_dir) / ("metrics_" + std::string(stage_name(stage)) + ".csv")).string(),
               "step,lr,loss");

    double loss = 0.0;
    for (int step = 1; step <= scfg.steps; ++step) {
        const double warm =
            scfg.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) / scfg.warmup_steps) : 1.0;
        auto items = pick_batch(data, scfg.batch_size, rng);
        auto batch = flow::make_flow_batch(items, cfg.model, rng);
        flow::FmLossResult res = flow::fm_loss(params, cfg.model, batch, cfg.threads);
        opt.step(params, res.grads, warm);
        loss = res.loss;
        log.row(step, ocfg.lr * warm, res.loss);
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            std::cout << "[" << stage_name(stage) << "] step " << step << "/" << scfg.steps
                      << " loss " << res.loss << "\n";
        }
        if (cfg.sample_every > 0 && step % cfg.sample_every == 0) {
            dump_probe_samples(params, cfg, data, stage, step);
        }
    }
    write_stage_checkpoint(params, opt, cfg, stage, scfg.steps);
    return StageOutcome{stage, ckpt_path(cfg, stage), scfg.steps, loss};
}

StageOutcome run_dpo_stage(core::ParamSet& params, const PipelineConfig& cfg) {
    const DpoStageConfig& scfg = cfg.dpo;
    const core::ParamSet ref_params = params; // frozen reference at the sft checkpoint

    glyph::Dataset prompts = glyph::generate_dataset(glyph::Split::dpo_prompts,
                                                     std::max(scfg.pair_count, cfg.data.dpo_prompt_count),
                                                     cfg.seed);
    prompts.items.resize(static_cast<std::size_t>(scfg.pair_count));
    std::vector<dpo::PreferencePair> pairs =
        dpo::build_preference_pairs(prompts, params, cfg.model, align::ScorerEnsemble::default_preference(),
                                    scfg.dpo, cfg.seed ^ kTagPairs, cfg.threads);
    dpo::save_pairs_jsonl(pairs, (fs::path(cfg.out_dir) / "preference_pairs.jsonl").string());

    core::AdamWConfig ocfg = cfg.optim;
    ocfg.lr = cfg.effective_lr(Stage::dpo);
    core::AdamW opt(ocfg);
    core::RngStream rng(cfg.seed, kTagDpo);

    CsvLog log((fs::path(cfg.out_dir) / "metrics_dpo.csv").string(),
               "step,lr,loss,inside,sigma_inside,lambda,winner_loss,loser_loss");

    dpo::DpoStepMetrics metrics;
    for (int step = 1; step <= scfg.steps; ++step) {
        std::vector<const dpo::PreferencePair*> batch;
        batch.reserve(static_cast<std::size_t>(scfg.batch_size));
        for (int i = 0; i < scfg.batch_size; ++i) {
            batch.push_back(&pairs[rng.below(pairs.size())]);
        }
        metrics = dpo::dpo_update_step(params, ref_params, cfg.model, batch, scfg.dpo, opt, 1.0, rng,
                                       cfg.threads);
        log.row(step, ocfg.lr, metrics.loss, metrics.inside, metrics.sigma_inside, metrics.lambda,
                metrics.winner_loss, metrics.loser_loss);
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            std::cout << "[dpo] step " << step << "/" << scfg.steps << " loss " << metrics.loss
                      << " sigma(inside) " << metrics.sigma_inside << "\n";
        }
    }
    write_stage_checkpoint(params, opt, cfg, Stage::dpo, scfg.steps);
    return StageOutcome{Stage::dpo, ckpt_path(cfg, Stage::dpo), scfg.steps, metrics.sigma_inside};
}

StageOutcome run_grpo_stage(core::ParamSet& params, const PipelineConfig& cfg, double& pre_reward,
                            double& post_reward) {
    const GrpoStageConfig& scfg = cfg.grpo;
    const core::ParamSet ref_params = params; // KL anchor: the dpo checkpoint

    std::vector<glyph::GlyphPrompt> prompt_set = grpo_prompt_set(cfg);
    const glyph::Resolution res = glyph::split_resolution(glyph::Split::grpo_prompts);

    core::AdamWConfig ocfg = cfg.optim;
    ocfg.lr = cfg.effective_lr(Stage::grpo);
    core::AdamW opt(ocfg);
    core::RngStream rng(cfg.seed, kTagGrpo);

    CsvLog log((fs::path(cfg.out_dir) / "metrics_grpo.csv").string(),
               "step,mean_reward,clip_fraction,mean_kl,objective");

    pre_reward = grpo::evaluate_group_reward(params, cfg.model, prompt_set, res, scfg.grpo,
                                             cfg.seed ^ kTagGrpoEval, cfg.threads);

    grpo::GrpoStepMetrics metrics;
    double reward_acc = 0.0;
    for (int step = 1; step <= scfg.steps; ++step) {
        std::vector<glyph::GlyphPrompt> batch;
        for (int i = 0; i < scfg.prompts_per_step; ++i) {
            batch.push_back(prompt_set[static_cast<std::size_t>(
                (static_cast<std::size_t>(step - 1) * scfg.prompts_per_step + i) % prompt_set.size())]);
        }
        const core::ParamSet snapshot = params; // rollout policy
        metrics = grpo::grpo_update_step(params, ref_params, snapshot, cfg.model, batch, res,
                                         scfg.grpo, opt, 1.0, rng.next_u64(), cfg.threads);
        reward_acc += metrics.mean_reward;
        log.row(step, metrics.mean_reward, metrics.clip_fraction, metrics.mean_kl, metrics.objective);
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            std::cout << "[grpo] step " << step << "/" << scfg.steps << " reward "
                      << metrics.mean_reward << " clip " << metrics.clip_fraction << "\n";
        }
    }
    post_reward = grpo::evaluate_group_reward(params, cfg.model, prompt_set, res, scfg.grpo,
                                              cfg.seed ^ kTagGrpoEval, cfg.threads);

    json summary;
    summary["pre_grpo_mean_reward"] = pre_reward;
    summary["post_grpo_mean_reward"] = post_reward;
    summary["mean_training_reward"] = scfg.steps > 0 ? reward_acc / scfg.steps : 0.0;
    std::ofstream out(fs::path(cfg.out_dir) / "grpo_summary.json");
    out << summary.dump(2) << "\n";

    write_stage_checkpoint(params, opt, cfg, Stage::grpo, scfg.steps);
    return StageOutcome{Stage::grpo, ckpt_path(cfg, Stage::grpo), scfg.steps, post_reward};
}

} // namespace

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::pretrain: return "pretrain";
        case Stage::sft: return "sft";
        case Stage::dpo: return "dpo";
        case Stage::grpo: return "grpo";
    }
    return "?";
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : {Stage::pretrain, Stage::sft, Stage::dpo, Stage::grpo}) {
        if (name == stage_name(s)) {
            return s;
        }
    }
    fail("unknown stage '" + name + "'");
}

double PipelineConfig::effective_lr(Stage stage) const {
    switch (stage) {
        case Stage::pretrain:
            return pretrain.lr;
        case Stage::sft:
            return sft.lr;
        case Stage::dpo:
            return dpo.lr > 0.0 ? dpo.lr : sft.lr;
        case Stage::grpo:
            return grpo.lr > 0.0 ? grpo.lr : effective_lr(Stage::dpo);
    }
    return 0.0;
}

void PipelineConfig::validate() const {
    model.validate();
    dpo.dpo.validate();
    grpo.grpo.validate();
    if (pretrain.lr <= 0.0 || sft.lr <= 0.0) {
        fail("pretrain and sft learning rates must be positive");
    }
    if (pretrain.steps < 0 || sft.steps < 0 || dpo.steps < 0 || grpo.steps < 0) {
        fail("stage step counts must be nonnegative");
    }
    if (pretrain.batch_size < 1 || sft.batch_size < 1) {
        fail("batch sizes must be >= 1");
    }
    if (dpo.pair_count < 1 || dpo.batch_size < 1) {
        fail("dpo pair_count and batch_size must be >= 1");
    }
    if (grpo.prompt_count < 1 || grpo.prompts_per_step < 1) {
        fail("grpo prompt counts must be >= 1");
    }
    if (out_dir.empty()) {
        fail("out_dir must be set");
    }
}

PipelineConfig default_config() { return PipelineConfig{}; }

namespace {

json fm_stage_to_json(const FmStageConfig& s) {
    return json{{"steps", s.steps}, {"lr", s.lr}, {"warmup_steps", s.warmup_steps},
                {"batch_size", s.batch_size}};
}

FmStageConfig fm_stage_from_json(const json& j, const FmStageConfig& defaults) {
    FmStageConfig s = defaults;
    s.steps = j.value("steps", s.steps);
    s.lr = j.value("lr", s.lr);
    s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
    s.batch_size = j.value("batch_size", s.batch_size);
    return s;
}

} // namespace

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail("cannot open config '" + path + "'");
    }
    json j = json::parse(in);
    PipelineConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.threads = j.value("threads", cfg.threads);

    if (j.contains("model")) {
        const json& m = j["model"];
        cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
        cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
        cfg.model.num_heads = m.value("num_heads", cfg.model.num_heads);
        cfg.model.n_double = m.value("n_double", cfg.model.n_double);
        cfg.model.n_single = m.value("n_single", cfg.model.n_single);
        cfg.model.patch_size = m.value("patch_size", cfg.model.patch_size);
        cfg.model.max_seq_len = m.value("max_seq_len", cfg.model.max_seq_len);
        cfg.model.cond_dropout_prob = m.value("cond_dropout_prob", cfg.model.cond_dropout_prob);
        cfg.model.ffn_mult = m.value("ffn_mult", cfg.model.ffn_mult);
    }
    if (j.contains("optim")) {
        const json& o = j["optim"];
        cfg.optim.beta1 = o.value("beta1", cfg.optim.beta1);
        cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
        cfg.optim.eps = o.value("eps", cfg.optim.eps);
        cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        cfg.data.pretrain_count = d.value("pretrain_count", cfg.data.pretrain_count);
        cfg.data.sft_count = d.value("sft_count", cfg.data.sft_count);
        cfg.data.dpo_prompt_count = d.value("dpo_prompt_count", cfg.data.dpo_prompt_count);
        cfg.data.grpo_prompt_count = d.value("grpo_prompt_count", cfg.data.grpo_prompt_count);
        cfg.data.eval_count = d.value("eval_count", cfg.data.eval_count);
    }
    if (j.contains("pretrain")) {
        cfg.pretrain = fm_stage_from_json(j["pretrain"], cfg.pretrain);
    }
    if (j.contains("sft")) {
        cfg.sft = fm_stage_from_json(j["sft"], cfg.sft);
    }
    if (j.contains("dpo")) {
        const json& d = j["dpo"];
        cfg.dpo.steps = d.value("steps", cfg.dpo.steps);
        cfg.dpo.lr = d.value("lr", cfg.dpo.lr);
        cfg.dpo.batch_size = d.value("batch_size", cfg.dpo.batch_size);
        cfg.dpo.pair_count = d.value("pair_count", cfg.dpo.pair_count);
        cfg.dpo.dpo.beta = d.value("beta", cfg.dpo.dpo.beta);
        cfg.dpo.dpo.mu = d.value("mu", cfg.dpo.dpo.mu);
        cfg.dpo.dpo.eps_safe = d.value("eps_safe", cfg.dpo.dpo.eps_safe);
        cfg.dpo.dpo.lambda_min = d.value("lambda_min", cfg.dpo.dpo.lambda_min);
        cfg.dpo.dpo.lambda_max = d.value("lambda_max", cfg.dpo.dpo.lambda_max);
        cfg.dpo.dpo.shared_noise = d.value("shared_noise", cfg.dpo.dpo.shared_noise);
        cfg.dpo.dpo.per_batch_lambda = d.value("per_batch_lambda", cfg.dpo.dpo.per_batch_lambda);
        cfg.dpo.dpo.pair_sample_steps = d.value("pair_sample_steps", cfg.dpo.dpo.pair_sample_steps);
        cfg.dpo.dpo.batch_size = cfg.dpo.batch_size;
    }
    if (j.contains("grpo")) {
        const json& g = j["grpo"];
        cfg.grpo.steps = g.value("steps", cfg.grpo.steps);
        cfg.grpo.lr = g.value("lr", cfg.grpo.lr);
        cfg.grpo.prompt_count = g.value("prompt_count", cfg.grpo.prompt_count);
        cfg.grpo.prompt_length = g.value("prompt_length", cfg.grpo.prompt_length);
        cfg.grpo.prompts_per_step = g.value("prompts_per_step", cfg.grpo.prompts_per_step);
        cfg.grpo.grpo.group_size = g.value("group_size", cfg.grpo.grpo.group_size);
        cfg.grpo.grpo.rollout_steps = g.value("rollout_steps", cfg.grpo.grpo.rollout_steps);
        cfg.grpo.grpo.eps_clip = g.value("eps_clip", cfg.grpo.grpo.eps_clip);
        cfg.grpo.grpo.beta_kl = g.value("beta_kl", cfg.grpo.grpo.beta_kl);
        cfg.grpo.grpo.sigma_s = g.value("sigma_s", cfg.grpo.grpo.sigma_s);
        cfg.grpo.grpo.window = g.value("window", cfg.grpo.grpo.window);
        cfg.grpo.grpo.update_epochs = g.value("update_epochs", cfg.grpo.grpo.update_epochs);
        cfg.grpo.grpo.coeff_preserving = g.value("coeff_preserving", cfg.grpo.grpo.coeff_preserving);
        cfg.grpo.grpo.coeff_reference_steps =
            g.value("coeff_reference_steps", cfg.grpo.grpo.coeff_reference_steps);
    }
    if (j.contains("sampling")) {
        cfg.sampling.steps = j["sampling"].value("ode_steps", cfg.sampling.steps);
        cfg.guidance_scale = j["sampling"].value("guidance_scale", cfg.guidance_scale);
    }
    if (j.contains("logging")) {
        cfg.log_every = j["logging"].value("log_every", cfg.log_every);
        cfg.sample_every = j["logging"].value("sample_every", cfg.sample_every);
    }
    cfg.validate();
    return cfg;
}

void save_config(const PipelineConfig& cfg, const std::string& path) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["threads"] = cfg.threads;
    j["model"] = {{"vocab_size", cfg.model.vocab_size},   {"embed_dim", cfg.model.embed_dim},
                  {"num_heads", cfg.model.num_heads},     {"n_double", cfg.model.n_double},
                  {"n_single", cfg.model.n_single},       {"patch_size", cfg.model.patch_size},
                  {"max_seq_len", cfg.model.max_seq_len}, {"cond_dropout_prob", cfg.model.cond_dropout_prob},
                  {"ffn_mult", cfg.model.ffn_mult}};
    j["optim"] = {{"beta1", cfg.optim.beta1},
                  {"beta2", cfg.optim.beta2},
                  {"eps", cfg.optim.eps},
                  {"weight_decay", cfg.optim.weight_decay}};
    j["data"] = {{"pretrain_count", cfg.data.pretrain_count},
                 {"sft_count", cfg.data.sft_count},
                 {"dpo_prompt_count", cfg.data.dpo_prompt_count},
                 {"grpo_prompt_count", cfg.data.grpo_prompt_count},
                 {"eval_count", cfg.data.eval_count}};
    j["pretrain"] = fm_stage_to_json(cfg.pretrain);
    j["sft"] = fm_stage_to_json(cfg.sft);
    j["dpo"] = {{"steps", cfg.dpo.steps},
                {"lr", cfg.dpo.lr},
                {"batch_size", cfg.dpo.batch_size},
                {"pair_count", cfg.dpo.pair_count},
                {"beta", cfg.dpo.dpo.beta},
                {"mu", cfg.dpo.dpo.mu},
                {"eps_safe", cfg.dpo.dpo.eps_safe},
                {"lambda_min", cfg.dpo.dpo.lambda_min},
                {"lambda_max", cfg.dpo.dpo.lambda_max},
                {"shared_noise", cfg.dpo.dpo.shared_noise},
                {"per_batch_lambda", cfg.dpo.dpo.per_batch_lambda},
                {"pair_sample_steps", cfg.dpo.dpo.pair_sample_steps}};
    j["grpo"] = {{"steps", cfg.grpo.steps},
                 {"lr", cfg.grpo.lr},
                 {"prompt_count", cfg.grpo.prompt_count},
                 {"prompt_length", cfg.grpo.prompt_length},
                 {"prompts_per_step", cfg.grpo.prompts_per_step},
                 {"group_size", cfg.grpo.grpo.group_size},
                 {"rollout_steps", cfg.grpo.grpo.rollout_steps},
                 {"eps_clip", cfg.grpo.grpo.eps_clip},
                 {"beta_kl", cfg.grpo.grpo.beta_kl},
                 {"sigma_s", cfg.grpo.grpo.sigma_s},
                 {"window", cfg.grpo.grpo.window},
                 {"update_epochs", cfg.grpo.grpo.update_epochs},
                 {"coeff_preserving", cfg.grpo.grpo.coeff_preserving},
                 {"coeff_reference_steps", cfg.grpo.grpo.coeff_reference_steps}};
    j["sampling"] = {{"ode_steps", cfg.sampling.steps}, {"guidance_scale", cfg.guidance_scale}};
    j["logging"] = {{"log_every", cfg.log_every}, {"sample_every", cfg.sample_every}};

    std::ofstream out(path);
    if (!out) {
        fail("cannot open '" + path + "' for writing");
    }
    out << j.dump(2) << "\n";
}

std::vector<glyph::GlyphPrompt> grpo_prompt_set(const PipelineConfig& cfg) {
    glyph::Dataset pool = glyph::generate_dataset(glyph::Split::grpo_prompts,
                                                  cfg.data.grpo_prompt_count, cfg.seed);
    std::vector<glyph::GlyphPrompt> prompts;
    for (const auto& item : pool.items) {
        if (static_cast<int>(item.prompt.text.size()) == cfg.grpo.prompt_length) {
            prompts.push_back(item.prompt);
            if (static_cast<int>(prompts.size()) == cfg.grpo.prompt_count) {
                break;
            }
        }
    }
    if (static_cast<int>(prompts.size()) < cfg.grpo.prompt_count) {
        fail("grpo_prompts pool too small for the requested prompt set; raise data.grpo_prompt_count");
    }
    return prompts;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, Stage first, Stage last,
                            const std::optional<std::string>& resume) {
    cfg.validate();
    if (static_cast<int>(first) > static_cast<int>(last)) {
        fail("first stage comes after last stage");
    }
    fs::create_directories(cfg.out_dir);
    save_config(cfg, (fs::path(cfg.out_dir) / "config.json").string());

    core::ParamSet params;
    if (resume.has_value()) {
        LoadedCheckpoint loaded = load_checkpoint(*resume);
        if (!(loaded.meta.config == cfg.model)) {
            fail("resume checkpoint model config does not match the pipeline config");
        }
        params = std::move(loaded.params);
    } else if (first == Stage::pretrain) {
        params = model::init_model(cfg.model, cfg.seed);
    } else {
        fail("stage " + std::string(stage_name(first)) + " needs --resume with a prior checkpoint");
    }

    PipelineResult result;
    for (int s = static_cast<int>(first); s <= static_cast<int>(last); ++s) {
        const Stage stage = static_cast<Stage>(s);
        try {
            switch (stage) {
                case Stage::pretrain:
                case Stage::sft:
                    result.outcomes.push_back(run_fm_stage(params, cfg, stage));
                    break;
                case Stage::dpo:
                    result.outcomes.push_back(run_dpo_stage(params, cfg));
                    break;
                case Stage::grpo:
                    result.outcomes.push_back(
                        run_grpo_stage(params, cfg, result.grpo_pre_reward, result.grpo_post_reward));
                    break;
            }
        } catch (const std::exception& e) {
            fail("stage " + std::string(stage_name(stage)) + " halted: " + e.what());
        }
        result.final_checkpoint = result.outcomes.back().checkpoint_path;
    }
    return result;
}

} // namespace glyphflow::pipeline
