#include "glyphflow/glyphworld.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace glyphflow::glyph {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("glyphworld: " + msg); }

// 3x5 bitmaps, 'A'-'Z' then '0'-'9', rows top to bottom. Pairwise
// distinctness (including across polarities) is asserted by the test suite;
// the decoder relies on it.
constexpr const char* kFontRows[36][5] = {
    {"010", "101", "111", "101", "101"}, // A
    {"110", "101", "110", "101", "110"}, // B
    {"011", "100", "100", "100", "011"}, // C
    {"110", "101", "101", "101", "110"}, // D
    {"111", "100", "110", "100", "111"}, // E
    {"111", "100", "110", "100", "100"}, // F
    {"011", "100", "101", "101", "011"}, // G
    {"101", "101", "111", "101", "101"}, // H
    {"111", "010", "010", "010", "111"}, // I
    {"001", "001", "001", "101", "010"}, // J
    {"101", "110", "100", "110", "101"}, // K
    {"100", "100", "100", "100", "111"}, // L
    {"101", "111", "101", "101", "101"}, // M
    {"110", "101", "101", "101", "101"}, // N
    {"010", "101", "101", "101", "010"}, // O
    {"110", "101", "110", "100", "100"}, // P
    {"010", "101", "101", "011", "001"}, // Q
    {"110", "101", "110", "110", "101"}, // R
    {"011", "100", "010", "001", "110"}, // S
    {"111", "010", "010", "010", "010"}, // T
    {"101", "101", "101", "101", "111"}, // U
    {"101", "101", "101", "101", "010"}, // V
    {"101", "101", "101", "111", "101"}, // W
    {"101", "101", "010", "101", "101"}, // X
    {"101", "101", "010", "010", "010"}, // Y
    {"111", "001", "010", "100", "111"}, // Z
    {"011", "101", "101", "101", "110"}, // 0
    {"010", "110", "010", "010", "111"}, // 1
    {"111", "001", "111", "100", "111"}, // 2
    {"111", "001", "111", "001", "111"}, // 3
    {"101", "101", "111", "001", "001"}, // 4
    {"111", "100", "111", "001", "111"}, // 5
    {"111", "100", "111", "101", "111"}, // 6
    {"111", "001", "001", "010", "010"}, // 7
    {"111", "101", "111", "101", "111"}, // 8
    {"111", "101", "111", "001", "111"}, // 9
};

std::array<std::array<std::uint8_t, 15>, 36> build_font() {
    std::array<std::array<std::uint8_t, 15>, 36> font{};
    for (int g = 0; g < 36; ++g) {
        for (int r = 0; r < kGlyphHeight; ++r) {
            for (int c = 0; c < kGlyphWidth; ++c) {
                font[g][r * kGlyphWidth + c] = kFontRows[g][r][c] == '1' ? 1 : 0;
            }
        }
    }
    return font;
}

const std::array<std::array<std::uint8_t, 15>, 36>& font_table() {
    static const auto table = build_font();
    return table;
}

} // namespace

int grid_size(Resolution res) { return res == Resolution::r8 ? 8 : 16; }

const char* resolution_name(Resolution res) { return res == Resolution::r8 ? "r8" : "r16"; }

Resolution resolution_from_name(const std::string& name) {
    if (name == "r8") {
        return Resolution::r8;
    }
    if (name == "r16") {
        return Resolution::r16;
    }
    fail("unknown resolution '" + name + "'");
}

bool is_glyph_char(char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); }

int glyph_index(char c) {
    if (c >= 'A' && c <= 'Z') {
        return c - 'A';
    }
    if (c >= '0' && c <= '9') {
        return 26 + (c - '0');
    }
    fail(std::string("no glyph for character '") + c + "'");
}

char glyph_char(int index) {
    if (index < 0 || index >= 36) {
        fail("glyph index out of range");
    }
    return index < 26 ? static_cast<char>('A' + index) : static_cast<char>('0' + index - 26);
}

const std::array<std::uint8_t, 15>& glyph_bitmap(int index) {
    if (index < 0 || index >= 36) {
        fail("glyph index out of range");
    }
    return font_table()[static_cast<std::size_t>(index)];
}

int text_pixel_width(int text_len) { return text_len > 0 ? kGlyphPitch * text_len - 1 : 0; }

int max_text_len(Resolution res, int col) {
    return (grid_size(res) - col + 1) / kGlyphPitch;
}

void validate_prompt(const GlyphPrompt& prompt, Resolution res) {
    const int n = grid_size(res);
    if (prompt.text.empty()) {
        fail("empty prompt text");
    }
    if (prompt.text.front() == ' ' || prompt.text.back() == ' ') {
        fail("prompt text must not start or end with a space");
    }
    for (char c : prompt.text) {
        if (c != ' ' && !is_glyph_char(c)) {
            fail(std::string("unknown character '") + c + "' in prompt text");
        }
    }
    if (prompt.row < 0 || prompt.row + kGlyphHeight > n) {
        fail("prompt row places glyphs outside the grid");
    }
    const int len = static_cast<int>(prompt.text.size());
    if (prompt.col < 0 || prompt.col + text_pixel_width(len) > n) {
        fail("prompt text does not fit the grid at the given column");
    }
}

GlyphImage render_text(const GlyphPrompt& prompt, Resolution res) {
    validate_prompt(prompt, res);
    const int n = grid_size(res);
    GlyphImage image;
    image.res = res;
    image.pixels = core::Tensor({n, n});
    for (std::size_t k = 0; k < prompt.text.size(); ++k) {
        const char c = prompt.text[k];
        if (c == ' ') {
            continue;
        }
        const auto& bitmap = glyph_bitmap(glyph_index(c));
        const int col0 = prompt.col + kGlyphPitch * static_cast<int>(k);
        for (int r = 0; r < kGlyphHeight; ++r) {
            for (int cc = 0; cc < kGlyphWidth; ++cc) {
                image.pixels.at(prompt.row + r, col0 + cc) = bitmap[r * kGlyphWidth + cc];
            }
        }
    }
    if (prompt.style == Style::inverted) {
        for (std::int64_t i = 0; i < image.pixels.numel(); ++i) {
            image.pixels[i] = 1.0 - image.pixels[i];
        }
    }
    return image;
}

int char_token(char c) {
    if (c == ' ') {
        return kTokCharBase;
    }
    if (c >= '0' && c <= '9') {
        return kTokCharBase + 1 + (c - '0');
    }
    if (c >= 'A' && c <= 'Z') {
        return kTokCharBase + 11 + (c - 'A');
    }
    fail(std::string("unknown character '") + c + "'");
}

char token_char(int id) {
    if (id == kTokCharBase) {
        return ' ';
    }
    if (id >= kTokCharBase + 1 && id <= kTokCharBase + 10) {
        return static_cast<char>('0' + id - kTokCharBase - 1);
    }
    if (id >= kTokCharBase + 11 && id <= kTokCharBase + 36) {
        return static_cast<char>('A' + id - kTokCharBase - 11);
    }
    fail("token id " + std::to_string(id) + " is not a character token");
}

TokenSeq tokenize_prompt(const GlyphPrompt& prompt, int max_seq_len) {
    const int needed = 4 + static_cast<int>(prompt.text.size());
    if (needed > max_seq_len) {
        fail("prompt text too long for token sequence");
    }
    TokenSeq seq;
    seq.ids.assign(static_cast<std::size_t>(max_seq_len), kTokPad);
    seq.ids[0] = kTokBos;
    seq.ids[1] = kTokCharBase + prompt.row;
    seq.ids[2] = kTokCharBase + prompt.col;
    seq.ids[3] = prompt.style == Style::normal ? kTokStyleNormal : kTokStyleInverted;
    for (std::size_t i = 0; i < prompt.text.size(); ++i) {
        seq.ids[4 + i] = char_token(prompt.text[i]);
    }
    seq.length = needed;
    return seq;
}

GlyphPrompt detokenize(const TokenSeq& seq) {
    if (seq.length < 5 || seq.ids.size() < static_cast<std::size_t>(seq.length)) {
        fail("token sequence too short to hold a prompt");
    }
    if (seq.ids[0] != kTokBos) {
        fail("token sequence does not start with BOS");
    }
    GlyphPrompt prompt;
    prompt.row = seq.ids[1] - kTokCharBase;
    prompt.col = seq.ids[2] - kTokCharBase;
    if (prompt.row < 0 || prompt.col < 0) {
        fail("malformed layout tokens");
    }
    if (seq.ids[3] == kTokStyleNormal) {
        prompt.style = Style::normal;
    } else if (seq.ids[3] == kTokStyleInverted) {
        prompt.style = Style::inverted;
    } else {
        fail("malformed style token");
    }
    for (int i = 4; i < seq.length; ++i) {
        prompt.text.push_back(token_char(seq.ids[static_cast<std::size_t>(i)]));
    }
    return prompt;
}

const char* split_name(Split split) {
    switch (split) {
        case Split::pretrain: return "pretrain";
        case Split::sft: return "sft";
        case Split::dpo_prompts: return "dpo_prompts";
        case Split::grpo_prompts: return "grpo_prompts";
        case Split::eval: return "eval";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    for (Split s : {Split::pretrain, Split::sft, Split::dpo_prompts, Split::grpo_prompts, Split::eval}) {
        if (name == split_name(s)) {
            return s;
        }
    }
    fail("unknown split '" + name + "'");
}

Resolution split_resolution(Split split) {
    return split == Split::pretrain ? Resolution::r8 : Resolution::r16;
}

Dataset generate_dataset(Split split, int count, std::uint64_t seed) {
    if (count < 1) {
        fail("dataset count must be >= 1");
    }
    const Resolution res = split_resolution(split);
    const int n = grid_size(res);

    int min_len = 1;
    int max_len = res == Resolution::r8 ? 2 : 4;
    if (split == Split::grpo_prompts) {
        min_len = 2;
    }

    core::RngStream rng(seed, 0x617453ULL + static_cast<std::uint64_t>(split));
    Dataset dataset;
    dataset.split = split;
    std::set<std::tuple<std::string, int, int, int>> seen;

    int attempts = 0;
    const int max_attempts = count * 1000;
    while (static_cast<int>(dataset.items.size()) < count) {
        if (++attempts > max_attempts) {
            fail("dataset universe exhausted for split " + std::string(split_name(split)));
        }
        const int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
        std::string text;
        for (int i = 0; i < len; ++i) {
            // occasional interior space on longer texts
            const bool interior = i > 0 && i + 1 < len;
            if (interior && text.back() != ' ' && rng.uniform01() < 0.12) {
                text.push_back(' ');
                continue;
            }
            const int g = static_cast<int>(rng.below(36));
            text.push_back(glyph_char(g));
        }
        const int max_row = n - kGlyphHeight;
        const int max_col = n - text_pixel_width(len);
        const int row = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_row + 1)));
        const int col = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_col + 1)));
        const Style style = rng.below(2) == 0 ? Style::normal : Style::inverted;

        auto key = std::make_tuple(text, row, col, static_cast<int>(style));
        if (!seen.insert(key).second) {
            continue;
        }
        GlyphPrompt prompt{text, row, col, style};
        dataset.items.push_back(DatasetItem{prompt, render_text(prompt, res)});
    }
    return dataset;
}

void save_dataset_jsonl(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        fail("cannot open '" + path + "' for writing");
    }
    for (const DatasetItem& item : dataset.items) {
        json rec;
        rec["text"] = item.prompt.text;
        rec["row"] = item.prompt.row;
        rec["col"] = item.prompt.col;
        rec["style"] = item.prompt.style == Style::normal ? "normal" : "inverted";
        rec["resolution"] = resolution_name(item.image.res);
        rec["pixels"] = item.image.pixels.vec();
        out << rec.dump() << "\n";
    }
}

Dataset load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail("cannot open '" + path + "'");
    }
    Dataset dataset;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json rec = json::parse(line);
        DatasetItem item;
        item.prompt.text = rec.at("text").get<std::string>();
        item.prompt.row = rec.at("row").get<int>();
        item.prompt.col = rec.at("col").get<int>();
        item.prompt.style = rec.at("style").get<std::string>() == "inverted" ? Style::inverted : Style::normal;
        item.image.res = resolution_from_name(rec.at("resolution").get<std::string>());
        const int n = grid_size(item.image.res);
        std::vector<double> pixels = rec.at("pixels").get<std::vector<double>>();
        item.image.pixels = core::Tensor({n, n}, std::move(pixels));
        dataset.items.push_back(std::move(item));
    }
    return dataset;
}

void write_pgm(const core::Tensor& pixels, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        fail("cannot open '" + path + "' for writing");
    }
    out << "P2\n" << pixels.cols() << " " << pixels.rows() << "\n255\n";
    for (int r = 0; r < pixels.rows(); ++r) {
        for (int c = 0; c < pixels.cols(); ++c) {
            const double v = std::clamp(pixels.at(r, c), 0.0, 1.0);
            out << static_cast<int>(std::lround(v * 255.0)) << (c + 1 == pixels.cols() ? "" : " ");
        }
        out << "\n";
    }
}

void write_pgm(const GlyphImage& image, const std::string& path) { write_pgm(image.pixels, path); }

namespace {

struct Candidate {
    double mse;
    double score; // mse plus background-ring inconsistency, ordering only
    int row;
    int col;
    int glyph;
    Style polarity;
};

// Mean squared deviation of the one-pixel ring around a glyph cell from the
// polarity's background level. A true glyph cell sits on clean background;
// a window shifted off the glyph lattice catches leftover ink here, which is
// what disambiguates exact-template ghost matches (some shifted windows
// reproduce another glyph's bitmap pixel for pixel).
double ring_penalty(const core::Tensor& px, int n, int r, int c, Style polarity) {
    const double bg = polarity == Style::normal ? 0.0 : 1.0;
    double acc = 0.0;
    int cells = 0;
    for (int i = r - 1; i <= r + kGlyphHeight; ++i) {
        for (int j = c - 1; j <= c + kGlyphWidth; ++j) {
            if (i < 0 || i >= n || j < 0 || j >= n) {
                continue;
            }
            const bool inside = i >= r && i < r + kGlyphHeight && j >= c && j < c + kGlyphWidth;
            if (inside) {
                continue;
            }
            const double d = px.at(i, j) - bg;
            acc += d * d;
            ++cells;
        }
    }
    return cells > 0 ? acc / cells : 0.0;
}

} // namespace

OcrResult ocr_decode(const GlyphImage& image, double threshold) {
    const int n = grid_size(image.res);
    const core::Tensor& px = image.pixels;

    std::vector<Candidate> candidates;
    for (int r = 0; r + kGlyphHeight <= n; ++r) {
        for (int c = 0; c + kGlyphWidth <= n; ++c) {
            double best = threshold;
            int best_glyph = -1;
            Style best_pol = Style::normal;
            for (int g = 0; g < 36; ++g) {
                const auto& bitmap = font_table()[static_cast<std::size_t>(g)];
                double d_norm = 0.0;
                double d_inv = 0.0;
                for (int i = 0; i < kGlyphHeight; ++i) {
                    for (int j = 0; j < kGlyphWidth; ++j) {
                        const double v = px.at(r + i, c + j);
                        const double t = bitmap[i * kGlyphWidth + j];
                        d_norm += (v - t) * (v - t);
                        d_inv += (v - (1.0 - t)) * (v - (1.0 - t));
                    }
                }
                d_norm /= kGlyphWidth * kGlyphHeight;
                d_inv /= kGlyphWidth * kGlyphHeight;
                if (d_norm < best) {
                    best = d_norm;
                    best_glyph = g;
                    best_pol = Style::normal;
                }
                if (d_inv < best) {
                    best = d_inv;
                    best_glyph = g;
                    best_pol = Style::inverted;
                }
            }
            if (best_glyph >= 0) {
                const double score = best + ring_penalty(px, n, r, c, best_pol);
                candidates.push_back(Candidate{best, score, r, c, best_glyph, best_pol});
            }
        }
    }

    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });

    // Greedy non-overlapping acceptance: true glyph cells have the lowest
    // distances and consume their pixels first, which suppresses shifted
    // partial matches.
    std::vector<std::uint8_t> consumed(static_cast<std::size_t>(n) * n, 0);
    std::vector<OcrGlyph> accepted;
    for (const Candidate& cand : candidates) {
        bool free = true;
        for (int i = 0; free && i < kGlyphHeight; ++i) {
            for (int j = 0; j < kGlyphWidth; ++j) {
                if (consumed[static_cast<std::size_t>(cand.row + i) * n + cand.col + j] != 0) {
                    free = false;
                    break;
                }
            }
        }
        if (!free) {
            continue;
        }
        for (int i = 0; i < kGlyphHeight; ++i) {
            for (int j = 0; j < kGlyphWidth; ++j) {
                consumed[static_cast<std::size_t>(cand.row + i) * n + cand.col + j] = 1;
            }
        }
        accepted.push_back(OcrGlyph{cand.row, cand.col, glyph_char(cand.glyph), cand.polarity, cand.mse,
                                    1.0 - cand.mse / threshold});
    }

    std::sort(accepted.begin(), accepted.end(), [](const OcrGlyph& a, const OcrGlyph& b) {
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });

    // Row-major assembly; 4-column pitch gaps inside a row become spaces,
    // anything else starts a new run joined with a single space.
    OcrResult result;
    result.glyphs = accepted;
    std::string text;
    for (std::size_t i = 0; i < accepted.size(); ++i) {
        if (i > 0) {
            const OcrGlyph& prev = accepted[i - 1];
            const OcrGlyph& cur = accepted[i];
            if (cur.row == prev.row && cur.col > prev.col) {
                const int gap = cur.col - prev.col;
                if (gap % kGlyphPitch == 0) {
                    for (int s = 0; s < gap / kGlyphPitch - 1; ++s) {
                        text.push_back(' ');
                    }
                } else {
                    text.push_back(' ');
                }
            } else {
                text.push_back(' ');
            }
        }
        text.push_back(accepted[i].ch);
    }
    result.text = std::move(text);
    return result;
}

} // namespace glyphflow::glyph
