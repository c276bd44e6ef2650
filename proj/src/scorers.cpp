#include "glyphflow/scorers.hpp"

#include "glyphflow/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glyphflow::align {

const char* scorer_name(ScorerId id) {
    switch (id) {
        case ScorerId::glyph_ocr: return "glyph_ocr";
        case ScorerId::smoothness: return "smoothness";
        case ScorerId::contrast: return "contrast";
    }
    return "?";
}

ScorerId scorer_from_name(const std::string& name) {
    for (ScorerId id : {ScorerId::glyph_ocr, ScorerId::smoothness, ScorerId::contrast}) {
        if (name == scorer_name(id)) {
            return id;
        }
    }
    throw std::runtime_error("unknown scorer '" + name + "'");
}

void ScorerEnsemble::validate() const {
    if (entries.empty()) {
        throw std::runtime_error("scorer ensemble is empty");
    }
    double sum = 0.0;
    for (const Entry& e : entries) {
        if (e.weight < 0.0) {
            throw std::runtime_error("scorer weights must be nonnegative");
        }
        sum += e.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::runtime_error("scorer weights must sum to 1");
    }
}

ScorerEnsemble ScorerEnsemble::default_preference() {
    return ScorerEnsemble{{{ScorerId::glyph_ocr, 0.8}, {ScorerId::smoothness, 0.1}, {ScorerId::contrast, 0.1}}};
}

ScorerEnsemble ScorerEnsemble::ocr_only() { return ScorerEnsemble{{{ScorerId::glyph_ocr, 1.0}}}; }

double score_glyph_ocr(const glyph::GlyphImage& image, const glyph::GlyphPrompt& prompt) {
    return evalkit::ned(glyph::ocr_decode(image).text, prompt.text);
}

double score_smoothness(const glyph::GlyphImage& image) {
    const core::Tensor& px = image.pixels;
    const int n = px.rows();
    double acc = 0.0;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double sum = 0.0;
            int count = 0;
            for (int i = r - 1; i <= r + 1; ++i) {
                for (int j = c - 1; j <= c + 1; ++j) {
                    if (i >= 0 && i < n && j >= 0 && j < n) {
                        sum += px.at(i, j);
                        ++count;
                    }
                }
            }
            acc += std::abs(px.at(r, c) - sum / count);
        }
    }
    return 1.0 - std::min(1.0, acc / static_cast<double>(n) / n);
}

double score_contrast(const glyph::GlyphImage& image) {
    const core::Tensor& px = image.pixels;
    double mean = 0.0;
    for (std::int64_t i = 0; i < px.numel(); ++i) {
        mean += px[i];
    }
    mean /= static_cast<double>(px.numel());
    double var = 0.0;
    for (std::int64_t i = 0; i < px.numel(); ++i) {
        var += (px[i] - mean) * (px[i] - mean);
    }
    var /= static_cast<double>(px.numel());
    return std::min(1.0, 4.0 * std::sqrt(var));
}

ScoreReport score_image(const ScorerEnsemble& ensemble, const glyph::GlyphImage& image,
                        const glyph::GlyphPrompt& prompt) {
    ensemble.validate();
    ScoreReport report;
    for (const auto& entry : ensemble.entries) {
        double v = 0.0;
        switch (entry.id) {
            case ScorerId::glyph_ocr: v = score_glyph_ocr(image, prompt); break;
            case ScorerId::smoothness: v = score_smoothness(image); break;
            case ScorerId::contrast: v = score_contrast(image); break;
        }
        report.values.emplace_back(entry.id, v);
        report.combined += entry.weight * v;
    }
    return report;
}

} // namespace glyphflow::align
