#pragma once

#include "glyphflow/rng.hpp"
#include "glyphflow/tensor.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace glyphflow::glyph {

// ---------------------------------------------------------------------------
// Geometry and alphabet
// ---------------------------------------------------------------------------

inline constexpr int kGlyphWidth = 3;
inline constexpr int kGlyphHeight = 5;
inline constexpr int kGlyphPitch = kGlyphWidth + 1; // 1-pixel inter-glyph spacing

enum class Resolution : std::uint8_t { r8, r16 };

int grid_size(Resolution res); // grids are square
const char* resolution_name(Resolution res);
Resolution resolution_from_name(const std::string& name);

enum class Style : std::uint8_t { normal, inverted };

/// 36-symbol alphabet 'A'-'Z','0'-'9' plus interior spaces.
bool is_glyph_char(char c);
/// Index into the font table, 0..35. Space has no bitmap.
int glyph_index(char c);
char glyph_char(int index);
/// 3x5 bitmap of a glyph as 15 row-major bits.
const std::array<std::uint8_t, 15>& glyph_bitmap(int index);

// ---------------------------------------------------------------------------
// Prompts and images
// ---------------------------------------------------------------------------

struct GlyphPrompt {
    std::string text;
    int row = 0;
    int col = 0;
    Style style = Style::normal;

    bool operator==(const GlyphPrompt&) const = default;
};

struct GlyphImage {
    core::Tensor pixels; // [H, W], values in [0, 1]
    Resolution res = Resolution::r8;
};

/// Throws with a reason when the prompt does not satisfy its invariants at
/// the given resolution (unknown character, empty text, leading/trailing
/// space, glyph cells out of grid bounds).
void validate_prompt(const GlyphPrompt& prompt, Resolution res);

/// Number of characters a text occupies horizontally: 4 columns per glyph
/// cell minus the trailing spacing column.
int text_pixel_width(int text_len);
/// Longest text that fits at the given column.
int max_text_len(Resolution res, int col);

/// Deterministic bitmap render: background 0, foreground 1, swapped for the
/// inverted style. Glyph k of the text sits at (row, col + 4k); spaces leave
/// their cell at background.
GlyphImage render_text(const GlyphPrompt& prompt, Resolution res);

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

// Token ids. Coordinates reuse the char-id range (position in the sequence
// disambiguates): position 0 is BOS, 1 row, 2 col, 3 style, 4+ text.
inline constexpr int kTokPad = 0;
inline constexpr int kTokBos = 1;
inline constexpr int kTokStyleNormal = 2;
inline constexpr int kTokStyleInverted = 3;
inline constexpr int kTokCharBase = 11; // space; digits 12..21; letters 22..47
inline constexpr int kVocabSize = 48;
inline constexpr int kDefaultMaxSeqLen = 24;

int char_token(char c);
char token_char(int id);

struct TokenSeq {
    std::vector<int> ids; // padded to fixed length
    int length = 0;       // positions before padding

    bool operator==(const TokenSeq&) const = default;
};

TokenSeq tokenize_prompt(const GlyphPrompt& prompt, int max_seq_len = kDefaultMaxSeqLen);
GlyphPrompt detokenize(const TokenSeq& seq);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { pretrain, sft, dpo_prompts, grpo_prompts, eval };

const char* split_name(Split split);
Split split_from_name(const std::string& name);
Resolution split_resolution(Split split);

struct DatasetItem {
    GlyphPrompt prompt;
    GlyphImage image;
};

struct Dataset {
    Split split = Split::pretrain;
    std::vector<DatasetItem> items;
};

/// Deterministic in (split, count, seed). Items are unique in
/// (text, row, col, style). The pretrain split covers lengths 1-2 at R8
/// (the grid fits at most two glyph cells); R16 splits cover lengths 1-4,
/// with the grpo_prompts split restricted to lengths 2-4.
Dataset generate_dataset(Split split, int count, std::uint64_t seed);

void save_dataset_jsonl(const Dataset& dataset, const std::string& path);
Dataset load_dataset_jsonl(const std::string& path);

/// Portable graymap (P2) dump for visual inspection.
void write_pgm(const GlyphImage& image, const std::string& path);
void write_pgm(const core::Tensor& pixels, const std::string& path);

// ---------------------------------------------------------------------------
// OCR
// ---------------------------------------------------------------------------

inline constexpr double kOcrThreshold = 0.1; // mean squared distance

struct OcrGlyph {
    int row = 0;
    int col = 0;
    char ch = '?';
    Style polarity = Style::normal;
    double mse = 0.0;
    double confidence = 0.0; // 1 - mse / threshold
};

struct OcrResult {
    std::string text;
    std::vector<OcrGlyph> glyphs;
};

/// Template-matching decoder. Scans every glyph anchor position, matching
/// all 36 bitmaps in both polarities by mean squared pixel distance.
/// Matches under the threshold are accepted greedily by ascending distance
/// with non-overlapping cells, then assembled row-major; interior spaces are
/// recovered from 4-column pitch gaps. Unreadable images decode to "".
OcrResult ocr_decode(const GlyphImage& image, double threshold = kOcrThreshold);

} // namespace glyphflow::glyph
