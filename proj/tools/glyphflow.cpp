// glyphflow command-line interface: data generation, staged training,
// sampling, evaluation, gradient checking, checkpoint inspection.

#include "CLI11.hpp"

#include "glyphflow/checkpoint.hpp"
#include "glyphflow/evalkit.hpp"
#include "glyphflow/glyphworld.hpp"
#include "glyphflow/pipeline.hpp"

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace glyphflow;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

pipeline::PipelineConfig load_or_default(const CommonOpts& opts) {
    pipeline::PipelineConfig cfg =
        opts.config_path.empty() ? pipeline::default_config() : pipeline::load_config(opts.config_path);
    if (opts.seed_set) {
        cfg.seed = opts.seed;
    }
    if (!opts.out.empty()) {
        cfg.out_dir = opts.out;
    }
    return cfg;
}

int cmd_gen_data(const CommonOpts& opts, const std::string& split_arg, int pgm_count) {
    pipeline::PipelineConfig cfg = load_or_default(opts);
    fs::create_directories(cfg.out_dir);
    std::vector<glyph::Split> splits;
    if (split_arg == "all") {
        splits = {glyph::Split::pretrain, glyph::Split::sft, glyph::Split::dpo_prompts,
                  glyph::Split::grpo_prompts, glyph::Split::eval};
    } else {
        splits = {glyph::split_from_name(split_arg)};
    }
    for (glyph::Split split : splits) {
        int count = 0;
        switch (split) {
            case glyph::Split::pretrain: count = cfg.data.pretrain_count; break;
            case glyph::Split::sft: count = cfg.data.sft_count; break;
            case glyph::Split::dpo_prompts: count = cfg.data.dpo_prompt_count; break;
            case glyph::Split::grpo_prompts: count = cfg.data.grpo_prompt_count; break;
            case glyph::Split::eval: count = cfg.data.eval_count; break;
        }
        glyph::Dataset data = glyph::generate_dataset(split, count, cfg.seed);
        const std::string path =
            (fs::path(cfg.out_dir) / (std::string(glyph::split_name(split)) + ".jsonl")).string();
        glyph::save_dataset_jsonl(data, path);
        std::cout << "wrote " << data.items.size() << " items to " << path << "\n";
        for (int i = 0; i < pgm_count && i < static_cast<int>(data.items.size()); ++i) {
            const std::string pgm = (fs::path(cfg.out_dir) / (std::string(glyph::split_name(split)) +
                                                              "_" + std::to_string(i) + ".pgm"))
                                        .string();
            glyph::write_pgm(data.items[static_cast<std::size_t>(i)].image, pgm);
        }
    }
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& stage_arg, const std::string& resume) {
    pipeline::PipelineConfig cfg = load_or_default(opts);
    pipeline::Stage first = pipeline::Stage::pretrain;
    pipeline::Stage last = pipeline::Stage::grpo;
    if (stage_arg != "all") {
        first = last = pipeline::stage_from_name(stage_arg);
    }
    std::optional<std::string> resume_opt;
    if (!resume.empty()) {
        resume_opt = resume;
    }
    pipeline::PipelineResult result = pipeline::run_pipeline(cfg, first, last, resume_opt);
    std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
    for (const auto& outcome : result.outcomes) {
        std::cout << "  " << pipeline::stage_name(outcome.stage) << ": " << outcome.steps_run
                  << " steps, final metric " << outcome.final_metric << "\n";
    }
    if (!result.outcomes.empty() && result.outcomes.back().stage == pipeline::Stage::grpo) {
        std::cout << "  grpo reward " << result.grpo_pre_reward << " -> " << result.grpo_post_reward
                  << "\n";
    }
    return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& text, int row, int col,
               const std::string& style, const std::string& res_name, int steps, double guidance,
               std::uint64_t seed, const std::string& out_path) {
    pipeline::LoadedCheckpoint loaded = pipeline::load_checkpoint(ckpt);
    glyph::GlyphPrompt prompt{text, row, col,
                              style == "inverted" ? glyph::Style::inverted : glyph::Style::normal};
    const glyph::Resolution res = glyph::resolution_from_name(res_name);
    glyph::validate_prompt(prompt, res);
    glyph::TokenSeq tokens = glyph::tokenize_prompt(prompt, loaded.meta.config.max_seq_len);
    flow::SamplerSchedule schedule;
    schedule.steps = steps;
    core::Tensor img = flow::sample_ode(loaded.params, loaded.meta.config, tokens, res, schedule,
                                        core::RngStream(seed), guidance);
    glyph::write_pgm(img, out_path);
    glyph::GlyphImage wrapped;
    wrapped.res = res;
    wrapped.pixels = img;
    std::cout << "wrote " << out_path << "\n";
    std::cout << "ocr decode: \"" << glyph::ocr_decode(wrapped).text << "\"\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt) {
    pipeline::PipelineConfig cfg = load_or_default(opts);
    pipeline::LoadedCheckpoint loaded = pipeline::load_checkpoint(ckpt);
    glyph::Dataset prompts = glyph::generate_dataset(glyph::Split::eval, cfg.data.eval_count, cfg.seed);
    evalkit::BenchmarkConfig bench;
    bench.schedule = cfg.sampling;
    bench.guidance_scale = cfg.guidance_scale;
    bench.seed = cfg.seed;
    bench.threads = cfg.threads;
    evalkit::EvalReport report = evalkit::run_benchmark(loaded.params, loaded.meta.config, prompts, bench);
    fs::create_directories(cfg.out_dir);
    evalkit::save_report_json(report, (fs::path(cfg.out_dir) / "report.json").string());
    evalkit::save_report_csv(report, (fs::path(cfg.out_dir) / "report.csv").string());
    std::cout << "prompts: " << report.records.size() << "\n";
    std::cout << "word_accuracy: " << report.overall_word_accuracy << "\n";
    std::cout << "ned: " << report.overall_ned << "\n";
    for (const auto& b : report.buckets) {
        std::cout << "  length " << b.bucket << " (" << b.count << "): word_accuracy "
                  << b.word_accuracy << ", ned " << b.ned << "\n";
    }
    return 0;
}

double max_rel_err(const core::Tensor& a, const core::Tensor& b) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) /
                                    std::max({std::abs(a[i]), std::abs(b[i]), 1e-3}));
    }
    return worst;
}

int cmd_gradcheck() {
    int failures = 0;
    auto report = [&](const std::string& name, double err, double tol) {
        const bool ok = err < tol;
        failures += ok ? 0 : 1;
        std::cout << (ok ? "  ok   " : "  FAIL ") << name << "  max rel err " << err << "\n";
    };

    // one micro-graph per op kind
    struct OpCase {
        const char* name;
        std::function<core::Val(core::Tape&, core::Val)> build;
        bool positive = false;
    };
    std::vector<OpCase> cases = {
        {"add", [](core::Tape& t, core::Val x) { return t.add(x, t.constant(core::RngStream(1).normal_tensor({3, 4}))); }},
        {"sub", [](core::Tape& t, core::Val x) { return t.sub(x, t.constant(core::RngStream(2).normal_tensor({3, 4}))); }},
        {"mul", [](core::Tape& t, core::Val x) { return t.mul(x, t.constant(core::RngStream(3).normal_tensor({3, 4}))); }},
        {"matmul", [](core::Tape& t, core::Val x) { return t.matmul(x, t.constant(core::RngStream(4).normal_tensor({4, 3}))); }},
        {"transpose", [](core::Tape& t, core::Val x) { return t.transpose(x); }},
        {"reshape", [](core::Tape& t, core::Val x) { return t.reshape(x, {4, 3}); }},
        {"concat", [](core::Tape& t, core::Val x) { return t.concat(x, t.constant(core::RngStream(5).normal_tensor({2, 4})), 0); }},
        {"slice", [](core::Tape& t, core::Val x) { return t.slice(x, 0, 1, 2); }},
        {"sum", [](core::Tape& t, core::Val x) { return t.sum(x); }},
        {"mean", [](core::Tape& t, core::Val x) { return t.mean(x); }},
        {"softmax", [](core::Tape& t, core::Val x) { return t.softmax(x); }},
        {"rms-norm", [](core::Tape& t, core::Val x) { return t.rms_norm(x); }},
        {"silu", [](core::Tape& t, core::Val x) { return t.silu(x); }},
        {"sigmoid", [](core::Tape& t, core::Val x) { return t.sigmoid(x); }},
        {"log", [](core::Tape& t, core::Val x) { return t.log(x); }, true},
        {"exp", [](core::Tape& t, core::Val x) { return t.exp(x); }},
        {"square", [](core::Tape& t, core::Val x) { return t.square(x); }},
        {"scalar-scale", [](core::Tape& t, core::Val x) { return t.scale(x, -1.7); }},
        {"embedding-gather", [](core::Tape& t, core::Val x) { return t.gather(x, {2, 0, 1, 1}); }},
        {"rotate-pairs", [](core::Tape& t, core::Val x) {
             core::Tensor c({3, 2}), s({3, 2});
             core::RngStream r(6);
             for (int i = 0; i < 6; ++i) {
                 const double a = r.uniform(0, 6.28);
                 c[i] = std::cos(a);
                 s[i] = std::sin(a);
             }
             return t.rotate_pairs(x, c, s);
         }},
    };
    std::cout << "per-op adjoints vs central finite differences (h = 1e-5):\n";
    for (const auto& c : cases) {
        core::RngStream rng(42);
        core::Tensor x0 = c.positive ? rng.uniform_tensor({3, 4}, 0.5, 2.0) : rng.normal_tensor({3, 4});
        core::Tape tape;
        core::Val x = tape.input("x", x0);
        core::Val y = c.build(tape, x);
        core::Val loss = tape.sum(tape.mul(y, tape.constant(rng.normal_tensor(tape.value(y).shape()))));
        auto grads = tape.backward(loss);
        core::Tensor fd = core::finite_diff_grad(tape, loss, "x", 1e-5);
        report(c.name, max_rel_err(grads.at("x"), fd), 1e-5);
    }

    std::cout << "full tiny-model gradient check:\n";
    model::ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.n_double = 1;
    cfg.n_single = 1;
    cfg.max_seq_len = 8;
    core::ParamSet params = model::init_model(cfg, 7);
    glyph::TokenSeq tokens = glyph::tokenize_prompt({"AB", 1, 0, glyph::Style::normal}, cfg.max_seq_len);
    core::RngStream rng(11);
    core::Tape tape;
    model::TapeParams p = model::bind_params(tape, params, true);
    core::Val x = tape.constant(rng.normal_tensor({8, 8}));
    core::Val v = model::build_velocity(tape, p, cfg, tokens, x, 0.4, model::CondMode::tokens);
    core::Val loss = tape.mean(tape.square(tape.sub(v, tape.constant(rng.normal_tensor({8, 8})))));
    auto grads = tape.backward(loss);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = params.entry(i);
        if (entry.frozen) {
            continue;
        }
        worst = std::max(worst, max_rel_err(grads.at(entry.name),
                                            core::finite_diff_grad(tape, loss, entry.name, 1e-5)));
    }
    report("model (" + std::to_string(params.trainable_elements()) + " params)", worst, 1e-4);

    std::cout << (failures == 0 ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return failures == 0 ? 0 : 1;
}

int cmd_inspect(const std::string& ckpt) {
    std::cout << pipeline::checkpoint_header_json(ckpt) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"glyphflow: a desk-scale flow-matching text-rendering trainer"};
    app.require_subcommand(1);

    CommonOpts common;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "pipeline config JSON");
        cmd->add_option("--out", common.out, "output directory override");
        cmd->add_option("--seed", common.seed, "seed override")->each([&](const std::string&) {
            common.seed_set = true;
        });
    };

    // gen-data
    std::string split_arg = "all";
    int pgm_count = 0;
    CLI::App* gen = app.add_subcommand("gen-data", "generate datasets as jsonl (and optional pgm dumps)");
    add_common(gen);
    gen->add_option("--split", split_arg, "pretrain|sft|dpo_prompts|grpo_prompts|eval|all");
    gen->add_option("--pgm", pgm_count, "dump the first N images per split as P2 graymaps");

    // train
    std::string stage_arg = "all";
    std::string resume;
    CLI::App* train = app.add_subcommand("train", "run training stages");
    add_common(train);
    train->add_option("--stage", stage_arg, "pretrain|sft|dpo|grpo|all");
    train->add_option("--resume", resume, "checkpoint to initialize from");

    // sample
    std::string ckpt, text = "A", style = "normal", res_name = "r16", out_path = "sample.pgm";
    int row = 0, col = 0, steps = 50;
    double guidance = 1.0;
    std::uint64_t sample_seed = 0;
    CLI::App* sample = app.add_subcommand("sample", "ODE-sample an image for a prompt");
    sample->add_option("--ckpt", ckpt, "checkpoint path")->required();
    sample->add_option("--text", text, "prompt text (A-Z, 0-9, interior spaces)");
    sample->add_option("--row", row, "grid row");
    sample->add_option("--col", col, "grid column");
    sample->add_option("--style", style, "normal|inverted");
    sample->add_option("--res", res_name, "r8|r16");
    sample->add_option("--steps", steps, "ODE steps");
    sample->add_option("--guidance", guidance, "classifier-free guidance scale");
    sample->add_option("--seed", sample_seed, "sampling seed");
    sample->add_option("--out", out_path, "output pgm path");

    // eval
    std::string eval_ckpt;
    CLI::App* eval_cmd = app.add_subcommand("eval", "run the text-rendering benchmark");
    add_common(eval_cmd);
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();

    // gradcheck
    app.add_subcommand("gradcheck", "verify adjoints against finite differences");

    // inspect-ckpt
    std::string inspect_path;
    CLI::App* inspect = app.add_subcommand("inspect-ckpt", "print a checkpoint header");
    inspect->add_option("--ckpt", inspect_path, "checkpoint path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return cmd_gen_data(common, split_arg, pgm_count);
        }
        if (train->parsed()) {
            return cmd_train(common, stage_arg, resume);
        }
        if (sample->parsed()) {
            return cmd_sample(ckpt, text, row, col, style, res_name, steps, guidance, sample_seed,
                              out_path);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(common, eval_ckpt);
        }
        if (app.get_subcommand("gradcheck")->parsed()) {
            return cmd_gradcheck();
        }
        if (inspect->parsed()) {
            return cmd_inspect(inspect_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
