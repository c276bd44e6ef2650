#include "glyphflow/model.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace glyphflow::model {

using core::ParamSet;
using core::RngStream;
using core::Tape;
using core::Tensor;
using core::Val;

namespace {

// The frozen encoder is not derived from the training seed.
constexpr std::uint64_t kFrozenEncoderSeed = 0x0F15F0E5ULL;
constexpr double kRopeBase = 100.0;
constexpr double kMaskValue = -1e30;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("model: " + msg); }

Tensor scaled_normal(RngStream& rng, core::Shape shape, int fan_in) {
    Tensor t = rng.normal_tensor(std::move(shape));
    const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] *= std;
    }
    return t;
}

void add_linear(ParamSet& params, RngStream& rng, const std::string& prefix, int in, int out,
                bool frozen = false) {
    params.add(prefix + ".w", scaled_normal(rng, {in, out}, in), frozen);
    params.add(prefix + ".b", Tensor::zeros({1, out}), frozen);
}

void add_stream_block(ParamSet& params, RngStream& rng, const std::string& prefix, const ModelConfig& cfg) {
    const int d = cfg.embed_dim;
    const int h = cfg.ffn_mult * d;
    add_linear(params, rng, prefix + ".mod.scale", d, d);
    add_linear(params, rng, prefix + ".mod.shift", d, d);
    add_linear(params, rng, prefix + ".attn.q", d, d);
    add_linear(params, rng, prefix + ".attn.k", d, d);
    add_linear(params, rng, prefix + ".attn.v", d, d);
    add_linear(params, rng, prefix + ".attn.o", d, d);
    add_linear(params, rng, prefix + ".ffn.a", d, h);
    add_linear(params, rng, prefix + ".ffn.b", d, h);
    add_linear(params, rng, prefix + ".ffn.down", h, d);
}

} // namespace

void ModelConfig::validate() const {
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
        fail("embed_dim must be a positive multiple of num_heads");
    }
    if (head_dim() % 2 != 0) {
        fail("head_dim must be even for pairwise rotations");
    }
    if (n_double < 1 || n_single < 0) {
        fail("need n_double >= 1 and n_single >= 0");
    }
    if (patch_size <= 0 || max_seq_len < 5 || ffn_mult < 1) {
        fail("invalid patch_size / max_seq_len / ffn_mult");
    }
    if (vocab_size < glyph::kVocabSize) {
        fail("vocab_size must cover the glyph tokenizer (" + std::to_string(glyph::kVocabSize) + ")");
    }
    if (cond_dropout_prob < 0.0 || cond_dropout_prob > 1.0) {
        fail("cond_dropout_prob must be in [0, 1]");
    }
}

core::ParamSet init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int d = cfg.embed_dim;

    ParamSet params;

    // Frozen encoder from its own fixed stream.
    RngStream frozen(kFrozenEncoderSeed);
    params.add("enc.tok_embed", scaled_normal(frozen, {cfg.vocab_size, d}, d), true);
    params.add("enc.pos_embed", scaled_normal(frozen, {cfg.max_seq_len, d}, d), true);
    add_linear(params, frozen, "enc.mix1", d, d, true);
    add_linear(params, frozen, "enc.mix2", d, d, true);

    RngStream rng(seed, 0x90DE1ULL);
    params.add("null_cond", scaled_normal(rng, {cfg.max_seq_len, d}, d));
    add_linear(params, rng, "patch", cfg.patch_size * cfg.patch_size, d);
    add_linear(params, rng, "temb.l1", d, d);
    add_linear(params, rng, "temb.l2", d, d);

    for (int i = 0; i < cfg.n_double; ++i) {
        add_stream_block(params, rng, "d" + std::to_string(i) + ".txt", cfg);
        add_stream_block(params, rng, "d" + std::to_string(i) + ".img", cfg);
    }
    for (int i = 0; i < cfg.n_single; ++i) {
        add_stream_block(params, rng, "s" + std::to_string(i), cfg);
    }

    add_linear(params, rng, "head.mod.scale", d, d);
    add_linear(params, rng, "head.mod.shift", d, d);
    add_linear(params, rng, "head.out", d, cfg.patch_size * cfg.patch_size);
    return params;
}

core::Tensor timestep_embed(double t, int dim) {
    if (dim % 2 != 0) {
        fail("timestep_embed dim must be even");
    }
    Tensor out({1, dim});
    const int half = dim / 2;
    const double s = 1000.0 * t;
    for (int k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / static_cast<double>(dim));
        out[k] = std::sin(s * freq);
        out[half + k] = std::cos(s * freq);
    }
    return out;
}

Val swiglu(Tape& tape, Val a, Val b) { return tape.mul(tape.silu(a), b); }

void build_rope_tables(const std::vector<std::pair<int, int>>& image_positions, int text_rows,
                       int head_dim, Tensor& cos_out, Tensor& sin_out) {
    if (head_dim % 2 != 0) {
        fail("rope requires even head_dim");
    }
    const int pairs = head_dim / 2;
    const int row_pairs = pairs / 2;
    const int total = text_rows + static_cast<int>(image_positions.size());
    cos_out = Tensor({total, pairs});
    sin_out = Tensor({total, pairs});
    for (int r = 0; r < text_rows; ++r) {
        for (int p = 0; p < pairs; ++p) {
            cos_out.at(r, p) = 1.0;
            sin_out.at(r, p) = 0.0;
        }
    }
    for (std::size_t i = 0; i < image_positions.size(); ++i) {
        const int r = text_rows + static_cast<int>(i);
        for (int p = 0; p < pairs; ++p) {
            const bool row_half = p < row_pairs;
            const int denom = row_half ? std::max(row_pairs, 1) : std::max(pairs - row_pairs, 1);
            const int k = row_half ? p : p - row_pairs;
            const double freq = std::pow(kRopeBase, -static_cast<double>(k) / denom);
            const double pos = row_half ? image_positions[i].first : image_positions[i].second;
            const double angle = pos * freq;
            cos_out.at(r, p) = std::cos(angle);
            sin_out.at(r, p) = std::sin(angle);
        }
    }
}

Val TapeParams::at(const std::string& name) const {
    auto it = vals.find(name);
    if (it == vals.end()) {
        fail("parameter '" + name + "' not bound on tape");
    }
    return it->second;
}

TapeParams bind_params(Tape& tape, const ParamSet& params, bool with_grads) {
    TapeParams bound;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = params.entry(i);
        bound.vals[entry.name] = tape.input(entry.name, entry.value, with_grads && !entry.frozen);
    }
    return bound;
}

namespace {

struct ForwardCtx {
    Tape* tape;
    const TapeParams* p;
    const ModelConfig* cfg;
    Val ones_cond; // [S, 1]
    Val ones_img;  // [N, 1]
    Val ones_all;  // [S+N, 1]
    Val temb;      // [1, d]
};

// x + broadcast bias row
Val add_bias(Tape& t, Val x, Val bias, Val ones_col) { return t.add(x, t.matmul(ones_col, bias)); }

Val linear(ForwardCtx& ctx, const std::string& prefix, Val x, Val ones_col) {
    Tape& t = *ctx.tape;
    return add_bias(t, t.matmul(x, ctx.p->at(prefix + ".w")), ctx.p->at(prefix + ".b"), ones_col);
}

// rms_norm(x) * (1 + scale) + shift, scale/shift rows from the timestep embedding
Val modulate(ForwardCtx& ctx, const std::string& block_prefix, Val x, Val ones_col) {
    Tape& t = *ctx.tape;
    Val ones_1 = t.constant(Tensor::full({1, 1}, 1.0));
    Val scale = linear(ctx, block_prefix + ".mod.scale", ctx.temb, ones_1);
    Val shift = linear(ctx, block_prefix + ".mod.shift", ctx.temb, ones_1);
    Val one_plus = t.add(scale, t.constant(Tensor::full(t.value(scale).shape(), 1.0)));
    Val normed = t.rms_norm(x);
    return t.add(t.mul(normed, t.matmul(ones_col, one_plus)), t.matmul(ones_col, shift));
}

struct AttnInputs {
    Val q;
    Val k;
    Val v;
};

// Joint attention over rows of q/k/v [T, d]: per head, RoPE rotation, scaled
// scores, additive key mask, softmax, weighted values. Returns [T, d].
Val attention(ForwardCtx& ctx, const AttnInputs& in, const Tensor& cos_tab, const Tensor& sin_tab,
              const Tensor& key_mask_row) {
    Tape& t = *ctx.tape;
    const int heads = ctx.cfg->num_heads;
    const int dh = ctx.cfg->head_dim();
    const int total = t.value(in.q).rows();

    // additive mask matrix: same masked row applied to every query
    Tensor mask({total, total});
    for (int i = 0; i < total; ++i) {
        for (int j = 0; j < total; ++j) {
            mask.at(i, j) = key_mask_row[j];
        }
    }
    Val mask_v = t.constant(std::move(mask));

    Val out{};
    for (int h = 0; h < heads; ++h) {
        Val qh = t.slice(in.q, 1, h * dh, dh);
        Val kh = t.slice(in.k, 1, h * dh, dh);
        Val vh = t.slice(in.v, 1, h * dh, dh);
        qh = t.rotate_pairs(qh, cos_tab, sin_tab);
        kh = t.rotate_pairs(kh, cos_tab, sin_tab);
        Val scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Val weights = t.softmax(t.add(scores, mask_v));
        Val oh = t.matmul(weights, vh);
        out = h == 0 ? oh : t.concat(out, oh, 1);
    }
    return out;
}

Val ffn(ForwardCtx& ctx, const std::string& prefix, Val x, Val ones_col) {
    Tape& t = *ctx.tape;
    Val a = linear(ctx, prefix + ".ffn.a", x, ones_col);
    Val b = linear(ctx, prefix + ".ffn.b", x, ones_col);
    return add_bias(t, t.matmul(swiglu(t, a, b), ctx.p->at(prefix + ".ffn.down.w")),
                    ctx.p->at(prefix + ".ffn.down.b"), ones_col);
}

} // namespace

Val build_velocity(Tape& tape, const TapeParams& p, const ModelConfig& cfg,
                   const glyph::TokenSeq& tokens, Val x_t, double t, CondMode mode) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const int S = cfg.max_seq_len;
    const Tensor& x_val = tape.value(x_t);
    if (x_val.shape().size() != 2 || x_val.rows() != x_val.cols()) {
        fail("x_t must be a square 2-D image");
    }
    const int H = x_val.rows();
    if (H % cfg.patch_size != 0) {
        fail("image size not divisible by patch_size");
    }
    if (static_cast<int>(tokens.ids.size()) != S) {
        fail("token sequence length does not match max_seq_len");
    }
    if (t < 0.0 || t > 1.0) {
        fail("timestep outside [0, 1]");
    }
    const int side = H / cfg.patch_size;
    const int N = side * side;

    ForwardCtx ctx;
    ctx.tape = &tape;
    ctx.p = &p;
    ctx.cfg = &cfg;
    ctx.ones_cond = tape.constant(Tensor::full({S, 1}, 1.0));
    ctx.ones_img = tape.constant(Tensor::full({N, 1}, 1.0));
    ctx.ones_all = tape.constant(Tensor::full({S + N, 1}, 1.0));

    // timestep embedding -> small mlp
    Val ones_1 = tape.constant(Tensor::full({1, 1}, 1.0));
    Val sinfeat = tape.constant(timestep_embed(t, d));
    Val temb_h = tape.silu(add_bias(tape, tape.matmul(sinfeat, p.at("temb.l1.w")), p.at("temb.l1.b"), ones_1));
    ctx.temb = add_bias(tape, tape.matmul(temb_h, p.at("temb.l2.w")), p.at("temb.l2.b"), ones_1);

    // conditioning stream: frozen encoder or the learned null sequence
    Val cond;
    if (mode == CondMode::null_cond) {
        cond = p.at("null_cond");
    } else {
        std::vector<std::int64_t> ids(tokens.ids.begin(), tokens.ids.end());
        Val tok = tape.gather(p.at("enc.tok_embed"), ids);
        Val h0 = tape.add(tok, p.at("enc.pos_embed"));
        Val mix = tape.silu(add_bias(tape, tape.matmul(h0, p.at("enc.mix1.w")), p.at("enc.mix1.b"), ctx.ones_cond));
        cond = tape.add(h0, add_bias(tape, tape.matmul(mix, p.at("enc.mix2.w")), p.at("enc.mix2.b"), ctx.ones_cond));
    }

    // patchify through a gather permutation
    std::vector<std::int64_t> patch_perm;
    patch_perm.reserve(static_cast<std::size_t>(N) * cfg.patch_size * cfg.patch_size);
    std::vector<std::pair<int, int>> positions;
    positions.reserve(static_cast<std::size_t>(N));
    for (int pr = 0; pr < side; ++pr) {
        for (int pc = 0; pc < side; ++pc) {
            positions.emplace_back(pr, pc);
            for (int i = 0; i < cfg.patch_size; ++i) {
                for (int j = 0; j < cfg.patch_size; ++j) {
                    patch_perm.push_back(static_cast<std::int64_t>(pr * cfg.patch_size + i) * H +
                                         pc * cfg.patch_size + j);
                }
            }
        }
    }
    Val flat = tape.reshape(x_t, {H * H, 1});
    Val patches = tape.reshape(tape.gather(flat, patch_perm), {N, cfg.patch_size * cfg.patch_size});
    Val img = add_bias(tape, tape.matmul(patches, p.at("patch.w")), p.at("patch.b"), ctx.ones_img);

    // key mask row over the merged sequence: padding text positions out
    Tensor key_mask({S + N});
    if (mode == CondMode::tokens) {
        for (int i = tokens.length; i < S; ++i) {
            key_mask[i] = kMaskValue;
        }
    }

    Tensor cos_tab, sin_tab;
    build_rope_tables(positions, S, cfg.head_dim(), cos_tab, sin_tab);

    // double-stream blocks: separate weights, joint attention
    Val txt = cond;
    for (int blk = 0; blk < cfg.n_double; ++blk) {
        const std::string bt = "d" + std::to_string(blk) + ".txt";
        const std::string bi = "d" + std::to_string(blk) + ".img";
        Val txt_in = modulate(ctx, bt, txt, ctx.ones_cond);
        Val img_in = modulate(ctx, bi, img, ctx.ones_img);

        AttnInputs in;
        in.q = tape.concat(linear(ctx, bt + ".attn.q", txt_in, ctx.ones_cond),
                           linear(ctx, bi + ".attn.q", img_in, ctx.ones_img), 0);
        in.k = tape.concat(linear(ctx, bt + ".attn.k", txt_in, ctx.ones_cond),
                           linear(ctx, bi + ".attn.k", img_in, ctx.ones_img), 0);
        in.v = tape.concat(linear(ctx, bt + ".attn.v", txt_in, ctx.ones_cond),
                           linear(ctx, bi + ".attn.v", img_in, ctx.ones_img), 0);
        Val joint = attention(ctx, in, cos_tab, sin_tab, key_mask);

        Val attn_txt = linear(ctx, bt + ".attn.o", tape.slice(joint, 0, 0, S), ctx.ones_cond);
        Val attn_img = linear(ctx, bi + ".attn.o", tape.slice(joint, 0, S, N), ctx.ones_img);
        txt = tape.add(txt, attn_txt);
        img = tape.add(img, attn_img);

        txt = tape.add(txt, ffn(ctx, bt, modulate(ctx, bt, txt, ctx.ones_cond), ctx.ones_cond));
        img = tape.add(img, ffn(ctx, bi, modulate(ctx, bi, img, ctx.ones_img), ctx.ones_img));
    }

    // single-stream blocks over the concatenated sequence
    Val merged = tape.concat(txt, img, 0);
    for (int blk = 0; blk < cfg.n_single; ++blk) {
        const std::string bs = "s" + std::to_string(blk);
        Val h_in = modulate(ctx, bs, merged, ctx.ones_all);
        AttnInputs in;
        in.q = linear(ctx, bs + ".attn.q", h_in, ctx.ones_all);
        in.k = linear(ctx, bs + ".attn.k", h_in, ctx.ones_all);
        in.v = linear(ctx, bs + ".attn.v", h_in, ctx.ones_all);
        Val joint = attention(ctx, in, cos_tab, sin_tab, key_mask);
        merged = tape.add(merged, linear(ctx, bs + ".attn.o", joint, ctx.ones_all));
        merged = tape.add(merged, ffn(ctx, bs, modulate(ctx, bs, merged, ctx.ones_all), ctx.ones_all));
    }

    // output head on the image positions
    Val img_out = tape.slice(merged, 0, S, N);
    Val head_in = modulate(ctx, "head", img_out, ctx.ones_img);
    Val out = add_bias(tape, tape.matmul(head_in, p.at("head.out.w")), p.at("head.out.b"), ctx.ones_img);

    // unpatchify via the inverse permutation
    std::vector<std::int64_t> inverse(patch_perm.size());
    for (std::size_t i = 0; i < patch_perm.size(); ++i) {
        inverse[static_cast<std::size_t>(patch_perm[i])] = static_cast<std::int64_t>(i);
    }
    Val out_flat = tape.reshape(out, {H * H, 1});
    return tape.reshape(tape.gather(out_flat, inverse), {H, H});
}

core::Tensor forward_velocity(const ParamSet& params, const ModelConfig& cfg,
                              const glyph::TokenSeq& tokens, const Tensor& x_t, double t, CondMode mode) {
    Tape tape;
    TapeParams p = bind_params(tape, params, false);
    Val x = tape.constant(x_t);
    Val v = build_velocity(tape, p, cfg, tokens, x, t, mode);
    return tape.value(v);
}

} // namespace glyphflow::model
