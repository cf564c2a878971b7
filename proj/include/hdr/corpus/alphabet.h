#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdr/image.h"
#include "hdr/random.h"

namespace hdr::corpus {

// A point in the unit glyph square; (0,0) is the top-left corner of the glyph box.
struct GlyphPoint {
    double x = 0.0;
    double y = 0.0;
};

struct Stroke {
    GlyphPoint a;
    GlyphPoint b;
};

// Rendering parameters for one writing style. Canonical rendering uses `GlyphStyle::canonical()`.
struct GlyphStyle {
    double stroke_fraction = 0.12;  // stroke width relative to min(box width, box height)
    double slant = 0.0;             // horizontal shear applied around the box centre
    double font_jitter = 0.0;       // per-glyph lattice displacement shared across the style
    double char_jitter = 0.0;       // per-occurrence displacement
    std::array<float, 3> ink{0.0f, 0.0f, 0.0f};
    std::uint64_t seed = 0;

    static GlyphStyle canonical() { return {}; }
};

// Registry of procedurally drawn glyphs. Glyph i is labelled by the single code point
// U+4E00 + i so multi-character strings can be split into glyph labels.
class Alphabet {
public:
    static constexpr char32_t kFirstCodepoint = 0x4E00;
    static constexpr int kMaxSize = 200;

    explicit Alphabet(int size);

    int size() const { return static_cast<int>(glyphs_.size()); }
    const std::vector<Stroke>& strokes(int index) const { return glyphs_.at(static_cast<std::size_t>(index)); }

    std::string label(int index) const;
    std::optional<int> index_of(std::string_view label) const;
    bool contains(std::string_view label) const { return index_of(label).has_value(); }
    std::vector<std::string> labels() const;

    // Draws glyph `index` into `image` inside `box`, blending towards `style.ink`. The glyph lattice
    // spans the inner 80% of the box (10% padding per side). `occurrence` seeds per-character jitter.
    void draw(Image& image, int index, const Box& box, const GlyphStyle& style,
              std::uint64_t occurrence = 0) const;

private:
    std::vector<std::vector<Stroke>> glyphs_;
};

// Split a UTF-8 string into one string per code point. Throws ParseError on invalid UTF-8.
std::vector<std::string> split_codepoints(std::string_view utf8);
std::string encode_utf8(char32_t cp);

}  // namespace hdr::corpus
