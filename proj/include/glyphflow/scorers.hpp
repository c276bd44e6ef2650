#pragma once

#include "glyphflow/glyphworld.hpp"

#include <string>
#include <vector>

namespace glyphflow::align {

enum class ScorerId : std::uint8_t { glyph_ocr, smoothness, contrast };

const char* scorer_name(ScorerId id);
ScorerId scorer_from_name(const std::string& name);

/// Convex combination of programmatic scorers; weights are nonnegative and
/// sum to 1.
struct ScorerEnsemble {
    struct Entry {
        ScorerId id;
        double weight;
    };
    std::vector<Entry> entries;

    void validate() const;
    static ScorerEnsemble default_preference(); // ocr 0.8, smoothness 0.1, contrast 0.1
    static ScorerEnsemble ocr_only();           // ocr 1.0
};

struct ScoreReport {
    std::vector<std::pair<ScorerId, double>> values;
    double combined = 0.0;
};

/// OCR fidelity: normalized edit-distance similarity between the decoded
/// text and the prompt text, in [0, 1].
double score_glyph_ocr(const glyph::GlyphImage& image, const glyph::GlyphPrompt& prompt);

/// 1 - mean |high-frequency residual| (pixel minus 3x3 box blur), clamped.
double score_smoothness(const glyph::GlyphImage& image);

/// Pixel-value spread: min(1, 4 * std of pixels).
double score_contrast(const glyph::GlyphImage& image);

ScoreReport score_image(const ScorerEnsemble& ensemble, const glyph::GlyphImage& image,
                        const glyph::GlyphPrompt& prompt);

} // namespace glyphflow::align
