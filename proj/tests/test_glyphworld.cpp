#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "glyphflow/glyphworld.hpp"
#include "glyphflow/rng.hpp"

#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

using namespace glyphflow;
using namespace glyphflow::glyph;

namespace {

// Independent compositor: paints expected pixels straight from the public
// font accessor, with its own arithmetic for glyph placement.
core::Tensor compose_expected(const GlyphPrompt& p, Resolution res) {
    const int n = grid_size(res);
    core::Tensor img({n, n});
    int cursor = p.col;
    for (char c : p.text) {
        if (c != ' ') {
            const auto& bm = glyph_bitmap(glyph_index(c));
            for (int r = 0; r < 5; ++r) {
                for (int cc = 0; cc < 3; ++cc) {
                    img.at(p.row + r, cursor + cc) = bm[r * 3 + cc];
                }
            }
        }
        cursor += 4;
    }
    if (p.style == Style::inverted) {
        for (std::int64_t i = 0; i < img.numel(); ++i) {
            img[i] = 1.0 - img[i];
        }
    }
    return img;
}

} // namespace

TEST_CASE("font bitmaps are pairwise distinct, ink-heavy, and not complements") {
    for (int a = 0; a < 36; ++a) {
        int ink = 0;
        for (int i = 0; i < 15; ++i) {
            ink += glyph_bitmap(a)[i];
        }
        CHECK(ink >= 4); // background windows can never match a glyph
        for (int b = a + 1; b < 36; ++b) {
            int hamming = 0;
            for (int i = 0; i < 15; ++i) {
                hamming += glyph_bitmap(a)[i] != glyph_bitmap(b)[i];
            }
            CAPTURE(glyph_char(a));
            CAPTURE(glyph_char(b));
            CHECK(hamming >= 1);
            CHECK(hamming <= 14); // no complement pairs across polarities
        }
    }
}

TEST_CASE("render_text basic examples") {
    GlyphPrompt a{"A", 0, 0, Style::normal};
    GlyphImage img = render_text(a, Resolution::r8);
    const auto& bm = glyph_bitmap(glyph_index('A'));
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
            const double expect = (r < 5 && c < 3) ? bm[r * 3 + c] : 0.0;
            CHECK(img.pixels.at(r, c) == expect);
        }
    }

    GlyphPrompt ainv = a;
    ainv.style = Style::inverted;
    GlyphImage inv = render_text(ainv, Resolution::r8);
    for (std::int64_t i = 0; i < inv.pixels.numel(); ++i) {
        CHECK(inv.pixels[i] == 1.0 - img.pixels[i]);
    }

    GlyphPrompt ab{"AB", 1, 0, Style::normal};
    GlyphImage img2 = render_text(ab, Resolution::r16);
    core::Tensor expect = compose_expected(ab, Resolution::r16);
    for (std::int64_t i = 0; i < expect.numel(); ++i) {
        CHECK(img2.pixels[i] == expect[i]);
    }
}

TEST_CASE("render_text rejects malformed prompts") {
    CHECK_THROWS(render_text(GlyphPrompt{"", 0, 0, Style::normal}, Resolution::r8));
    CHECK_THROWS(render_text(GlyphPrompt{"ABC", 0, 0, Style::normal}, Resolution::r8)); // 11 px > 8
    CHECK_THROWS(render_text(GlyphPrompt{"A", 4, 0, Style::normal}, Resolution::r8));   // row 4 + 5 > 8
    CHECK_THROWS(render_text(GlyphPrompt{"A", 0, 6, Style::normal}, Resolution::r8));   // col 6 + 3 > 8
    CHECK_THROWS(render_text(GlyphPrompt{"a", 0, 0, Style::normal}, Resolution::r8));   // lowercase
    CHECK_THROWS(render_text(GlyphPrompt{" A", 0, 0, Style::normal}, Resolution::r16)); // leading space
    CHECK_NOTHROW(render_text(GlyphPrompt{"A B", 0, 0, Style::normal}, Resolution::r16));
}

TEST_CASE("tokenize schema and round-trip") {
    GlyphPrompt p{"A", 0, 0, Style::normal};
    TokenSeq seq = tokenize_prompt(p);
    CHECK(seq.ids[0] == kTokBos);
    CHECK(seq.ids[1] == kTokCharBase + 0);
    CHECK(seq.ids[2] == kTokCharBase + 0);
    CHECK(seq.ids[3] == kTokStyleNormal);
    CHECK(seq.ids[4] == char_token('A'));
    for (std::size_t i = 5; i < seq.ids.size(); ++i) {
        CHECK(seq.ids[i] == kTokPad);
    }
    for (int id : seq.ids) {
        CHECK(id < kVocabSize);
    }

    // style-only difference shows up exactly at position 3
    GlyphPrompt q = p;
    q.style = Style::inverted;
    TokenSeq seq2 = tokenize_prompt(q);
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (i == 3) {
            CHECK(seq.ids[i] != seq2.ids[i]);
        } else {
            CHECK(seq.ids[i] == seq2.ids[i]);
        }
    }

    // round-trip over 1000 random valid prompts
    core::RngStream rng(99);
    for (int it = 0; it < 1000; ++it) {
        const Resolution res = rng.below(2) == 0 ? Resolution::r8 : Resolution::r16;
        const int n = grid_size(res);
        const int maxlen = res == Resolution::r8 ? 2 : 4;
        const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(maxlen)));
        std::string text;
        for (int i = 0; i < len; ++i) {
            const bool interior = i > 0 && i + 1 < len;
            if (interior && text.back() != ' ' && rng.uniform01() < 0.15) {
                text.push_back(' ');
            } else {
                text.push_back(glyph_char(static_cast<int>(rng.below(36))));
            }
        }
        const int row = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 4)));
        const int col = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - text_pixel_width(len) + 1)));
        GlyphPrompt prompt{text, row, col, rng.below(2) == 0 ? Style::normal : Style::inverted};
        CHECK(detokenize(tokenize_prompt(prompt)) == prompt);
    }

    CHECK_THROWS(tokenize_prompt(GlyphPrompt{"A#B", 0, 0, Style::normal}));
}

TEST_CASE("generate_dataset determinism and self-consistency") {
    Dataset d1 = generate_dataset(Split::pretrain, 100, 7);
    Dataset d2 = generate_dataset(Split::pretrain, 100, 7);
    REQUIRE(d1.items.size() == 100);
    REQUIRE(d2.items.size() == 100);
    for (std::size_t i = 0; i < d1.items.size(); ++i) {
        CHECK(d1.items[i].prompt == d2.items[i].prompt);
        for (std::int64_t k = 0; k < d1.items[i].image.pixels.numel(); ++k) {
            CHECK(d1.items[i].image.pixels[k] == d2.items[i].image.pixels[k]);
        }
    }

    // stored image equals the deterministic render; keys unique
    std::set<std::tuple<std::string, int, int, int>> keys;
    for (const auto& item : d1.items) {
        GlyphImage r = render_text(item.prompt, item.image.res);
        for (std::int64_t k = 0; k < r.pixels.numel(); ++k) {
            CHECK(r.pixels[k] == item.image.pixels[k]);
        }
        CHECK(keys.insert({item.prompt.text, item.prompt.row, item.prompt.col,
                           static_cast<int>(item.prompt.style)})
                  .second);
    }

    // different seed, different content
    Dataset d3 = generate_dataset(Split::pretrain, 100, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < d1.items.size(); ++i) {
        any_diff = any_diff || !(d1.items[i].prompt == d3.items[i].prompt);
    }
    CHECK(any_diff);
}

TEST_CASE("grpo_prompts split emphasizes longer texts") {
    Dataset d = generate_dataset(Split::grpo_prompts, 200, 1);
    int long_enough = 0;
    for (const auto& item : d.items) {
        if (item.prompt.text.size() >= 2) {
            ++long_enough;
        }
    }
    CHECK(long_enough >= 190); // >= 95%
}

TEST_CASE("ocr round-trip is exact on every clean R8 render of lengths 1-2") {
    // full prompt grid, both styles
    int checked = 0;
    for (int len = 1; len <= 2; ++len) {
        const int max_col = 8 - text_pixel_width(len);
        for (int row = 0; row <= 3; ++row) {
            for (int col = 0; col <= max_col; ++col) {
                for (Style style : {Style::normal, Style::inverted}) {
                    if (len == 1) {
                        for (int g = 0; g < 36; ++g) {
                            GlyphPrompt p{std::string(1, glyph_char(g)), row, col, style};
                            OcrResult r = ocr_decode(render_text(p, Resolution::r8));
                            CAPTURE(p.text);
                            CAPTURE(row);
                            CAPTURE(col);
                            REQUIRE(r.text == p.text);
                            ++checked;
                        }
                    } else {
                        for (int g1 = 0; g1 < 36; ++g1) {
                            for (int g2 = 0; g2 < 36; ++g2) {
                                GlyphPrompt p{{glyph_char(g1), glyph_char(g2)}, row, col, style};
                                OcrResult r = ocr_decode(render_text(p, Resolution::r8));
                                CAPTURE(p.text);
                                CAPTURE(row);
                                CAPTURE(col);
                                REQUIRE(r.text == p.text);
                                ++checked;
                            }
                        }
                    }
                }
            }
        }
    }
    CHECK(checked > 20000);
}

TEST_CASE("ocr round-trip on sampled R16 renders with spaces") {
    core::RngStream rng(123);
    Dataset d = generate_dataset(Split::sft, 300, 55);
    for (const auto& item : d.items) {
        OcrResult r = ocr_decode(item.image);
        CAPTURE(item.prompt.text);
        CHECK(r.text == item.prompt.text);
    }
    (void)rng;
}

TEST_CASE("ocr edge cases and confidence") {
    GlyphImage blank;
    blank.res = Resolution::r8;
    blank.pixels = core::Tensor({8, 8});
    CHECK(ocr_decode(blank).text.empty());

    GlyphImage gray;
    gray.res = Resolution::r8;
    gray.pixels = core::Tensor::full({8, 8}, 0.5);
    CHECK(ocr_decode(gray).text.empty());

    GlyphPrompt p{"AB", 1, 0, Style::normal};
    OcrResult clean = ocr_decode(render_text(p, Resolution::r16));
    REQUIRE(clean.glyphs.size() == 2);
    CHECK(clean.glyphs[0].mse == 0.0);
    CHECK(clean.glyphs[0].confidence == 1.0);
}

TEST_CASE("ocr is robust to additive uniform noise of amplitude 0.05") {
    core::RngStream rng(4242);
    for (int trial = 0; trial < 50; ++trial) {
        GlyphPrompt p{"AB", static_cast<int>(rng.below(4)), static_cast<int>(rng.below(2)),
                      trial % 2 == 0 ? Style::normal : Style::inverted};
        GlyphImage img = render_text(p, Resolution::r8);
        for (std::int64_t i = 0; i < img.pixels.numel(); ++i) {
            img.pixels[i] += rng.uniform(-0.05, 0.05);
        }
        CHECK(ocr_decode(img).text == "AB");
    }
}

TEST_CASE("dataset jsonl round-trip and pgm dump") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "glyphflow_test_io";
    fs::create_directories(dir);

    Dataset d = generate_dataset(Split::sft, 25, 3);
    const std::string jsonl = (dir / "sft.jsonl").string();
    save_dataset_jsonl(d, jsonl);
    Dataset back = load_dataset_jsonl(jsonl);
    REQUIRE(back.items.size() == d.items.size());
    for (std::size_t i = 0; i < d.items.size(); ++i) {
        CHECK(back.items[i].prompt == d.items[i].prompt);
        for (std::int64_t k = 0; k < d.items[i].image.pixels.numel(); ++k) {
            CHECK(back.items[i].image.pixels[k] == d.items[i].image.pixels[k]);
        }
    }

    const std::string pgm = (dir / "img.pgm").string();
    write_pgm(d.items[0].image, pgm);
    std::ifstream in(pgm);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    CHECK(magic == "P2");
    CHECK(w == 16);
    CHECK(h == 16);
    CHECK(maxv == 255);
    fs::remove_all(dir);
}
