#pragma once

#include "glyphflow/glyphworld.hpp"
#include "glyphflow/params.hpp"
#include "glyphflow/rng.hpp"
#include "glyphflow/tape.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace glyphflow::model {

struct ModelConfig {
    int vocab_size = 48;
    int embed_dim = 64;
    int num_heads = 4;
    int n_double = 2;
    int n_single = 3;
    int patch_size = 2;
    int max_seq_len = 24;
    double cond_dropout_prob = 0.1;
    int ffn_mult = 2; // ffn hidden width = ffn_mult * embed_dim

    int head_dim() const { return embed_dim / num_heads; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// How the text branch is conditioned: on the prompt tokens, or on the
/// learned null sequence (conditioning dropout / classifier-free guidance).
enum class CondMode : std::uint8_t { tokens, null_cond };

/// Random init per config. Trainable weights are normal with std 1/sqrt(fan_in);
/// the frozen text encoder (token/position embeddings plus one mixing layer)
/// is drawn from a dedicated fixed-seed stream so it is identical across
/// stages and runs regardless of the training seed.
core::ParamSet init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Sinusoidal timestep features of even length `dim` at s = 1000*t:
/// [sin(s*f_k)..., cos(s*f_k)...], f_k = 10000^(-2k/dim).
core::Tensor timestep_embed(double t, int dim);

/// silu(a) * b on the tape.
core::Val swiglu(core::Tape& tape, core::Val a, core::Val b);

/// Pairwise-rotation tables for a merged text+image sequence: text rows get
/// the identity rotation, image rows rotate the first half of the pairs by a
/// row angle and the second half by a column angle.
void build_rope_tables(const std::vector<std::pair<int, int>>& image_positions, int text_rows,
                       int head_dim, core::Tensor& cos_out, core::Tensor& sin_out);

/// Parameter values bound onto a tape, keyed by parameter name.
struct TapeParams {
    std::map<std::string, core::Val> vals;
    core::Val at(const std::string& name) const;
};

/// Bind every parameter as a tape input; trainable entries track gradients
/// when with_grads is set, frozen entries never do.
TapeParams bind_params(core::Tape& tape, const core::ParamSet& params, bool with_grads);

/// The MMDiT velocity network: frozen-encoded tokens and patchified image
/// run through n_double double-stream blocks (separate weights, one joint
/// attention per block), the streams are concatenated through n_single
/// single-stream blocks, and the image positions are unpatchified through
/// the output head. Timestep modulation is one adaptive scale/shift pair per
/// block per stream; padding text positions are masked out of attention.
/// Returns the velocity field with the shape of x_t.
core::Val build_velocity(core::Tape& tape, const TapeParams& p, const ModelConfig& cfg,
                         const glyph::TokenSeq& tokens, core::Val x_t, double t, CondMode mode);

/// Evaluation-only forward; no gradients are tracked.
core::Tensor forward_velocity(const core::ParamSet& params, const ModelConfig& cfg,
                              const glyph::TokenSeq& tokens, const core::Tensor& x_t, double t,
                              CondMode mode = CondMode::tokens);

} // namespace glyphflow::model
