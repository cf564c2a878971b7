#include "hdr/corpus/alphabet.h"

#include <algorithm>
#include <bit>
#include <cmath>

#include "hdr/error.h"

namespace hdr::corpus {

namespace {

constexpr std::uint64_t kRegistrySeed = 0x4844523238ULL;
constexpr double kLattice[3] = {0.1, 0.5, 0.9};

struct Segment {
    int a;  // lattice node index, row-major over the 3x3 grid
    int b;
};

// The 20 segments joining 8-connected lattice neighbours.
std::vector<Segment> lattice_segments() {
    std::vector<Segment> segs;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            int n = r * 3 + c;
            if (c < 2) segs.push_back({n, n + 1});
            if (r < 2) segs.push_back({n, n + 3});
            if (r < 2 && c < 2) segs.push_back({n, n + 4});
            if (r < 2 && c > 0) segs.push_back({n, n + 2});
        }
    return segs;
}

bool connected(std::uint32_t bits, const std::vector<Segment>& segs) {
    std::uint32_t nodes = 0;
    for (std::size_t i = 0; i < segs.size(); ++i)
        if (bits >> i & 1U) nodes |= (1U << segs[i].a) | (1U << segs[i].b);
    std::uint32_t reached = 1U << std::countr_zero(nodes);
    for (bool grew = true; grew;) {
        grew = false;
        for (std::size_t i = 0; i < segs.size(); ++i) {
            if (!(bits >> i & 1U)) continue;
            bool ia = reached >> segs[i].a & 1U, ib = reached >> segs[i].b & 1U;
            if (ia != ib) {
                reached |= (1U << segs[i].a) | (1U << segs[i].b);
                grew = true;
            }
        }
    }
    return reached == nodes;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0) : 0.0;
    double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Alphabet::Alphabet(int size) {
    if (size < 2 || size > kMaxSize)
        throw ConfigError("alphabet size must lie in [2, " + std::to_string(kMaxSize) + "]");

    // Glyphs are connected sets of 3-5 lattice segments; any two glyphs differ in at least
    // three segments so the classes stay visually separable.
    const auto segs = lattice_segments();
    Rng rng(kRegistrySeed);
    std::vector<std::uint32_t> chosen;
    int min_distance = 3;
    int attempts = 0;
    while (static_cast<int>(chosen.size()) < size) {
        if (++attempts > 200000) {
            min_distance = std::max(1, min_distance - 1);
            attempts = 0;
        }
        int count = uniform_int(rng, 3, 5);
        std::uint32_t bits = 0;
        while (std::popcount(bits) < count)
            bits |= 1U << uniform_int(rng, 0, static_cast<int>(segs.size()) - 1);
        if (!connected(bits, segs)) continue;
        bool far = std::all_of(chosen.begin(), chosen.end(), [&](std::uint32_t o) {
            return std::popcount(o ^ bits) >= min_distance;
        });
        if (!far) continue;
        chosen.push_back(bits);
    }

    glyphs_.reserve(chosen.size());
    for (std::uint32_t bits : chosen) {
        std::vector<Stroke> strokes;
        for (std::size_t i = 0; i < segs.size(); ++i) {
            if (!(bits >> i & 1U)) continue;
            auto node = [](int n) { return GlyphPoint{kLattice[n % 3], kLattice[n / 3]}; };
            strokes.push_back({node(segs[i].a), node(segs[i].b)});
        }
        glyphs_.push_back(std::move(strokes));
    }
}

std::string Alphabet::label(int index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("glyph index out of range");
    return encode_utf8(kFirstCodepoint + static_cast<char32_t>(index));
}

std::optional<int> Alphabet::index_of(std::string_view label) const {
    for (int i = 0; i < size(); ++i)
        if (this->label(i) == label) return i;
    return std::nullopt;
}

std::vector<std::string> Alphabet::labels() const {
    std::vector<std::string> out;
    for (int i = 0; i < size(); ++i) out.push_back(label(i));
    return out;
}

void Alphabet::draw(Image& image, int index, const Box& box, const GlyphStyle& style,
                    std::uint64_t occurrence) const {
    if (!box.valid()) return;
    const auto& strokes = this->strokes(index);

    Rng char_rng = make_rng(style.seed ^ 0xC3A5C85C97CB3127ULL, occurrence);
    // Lattice nodes move consistently for a given (style, glyph), so stroke ends shared by two
    // strokes stay joined.
    const std::uint64_t font_seed = mix_seed(style.seed, static_cast<std::uint64_t>(index));
    auto displace = [&](GlyphPoint p) {
        auto node_id = static_cast<std::uint64_t>(std::lround(p.x * 10) * 16 + std::lround(p.y * 10));
        Rng node_rng = make_rng(font_seed, node_id);
        double fx = style.font_jitter * uniform(node_rng, -1.0, 1.0);
        double fy = style.font_jitter * uniform(node_rng, -1.0, 1.0);
        return GlyphPoint{p.x + fx, p.y + fy};
    };
    double cx_jit = style.char_jitter * uniform(char_rng, -1.0, 1.0);
    double cy_jit = style.char_jitter * uniform(char_rng, -1.0, 1.0);

    const double w = box.width(), h = box.height();
    auto to_pixel = [&](GlyphPoint p) {
        double u = p.x + cx_jit + style.slant * (0.5 - p.y);
        double v = p.y + cy_jit;
        return GlyphPoint{box.x0 + u * w, box.y0 + v * h};
    };

    std::vector<std::pair<GlyphPoint, GlyphPoint>> px_strokes;
    px_strokes.reserve(strokes.size());
    for (const auto& s : strokes) {
        px_strokes.emplace_back(to_pixel(displace(s.a)), to_pixel(displace(s.b)));
    }

    const double half = 0.5 * std::max(1.0, style.stroke_fraction * std::min(w, h));
    for (int y = std::max(0, box.y0); y < std::min(image.height(), box.y1); ++y)
        for (int x = std::max(0, box.x0); x < std::min(image.width(), box.x1); ++x) {
            double px = x + 0.5, py = y + 0.5;
            double d = 1e9;
            for (const auto& [a, b] : px_strokes) d = std::min(d, segment_distance(px, py, a.x, a.y, b.x, b.y));
            double cover = std::clamp(half + 0.5 - d, 0.0, 1.0);
            if (cover <= 0.0) continue;
            for (int c = 0; c < image.channels(); ++c) {
                float ink = style.ink[static_cast<std::size_t>(std::min(c, 2))];
                float& v = image.at(y, x, c);
                v = static_cast<float>(v * (1.0 - cover) + ink * cover);
            }
        }
}

std::string encode_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

std::vector<std::string> split_codepoints(std::string_view utf8) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < utf8.size()) {
        auto lead = static_cast<unsigned char>(utf8[i]);
        std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 0;
        if (len == 0 || i + len > utf8.size()) throw ParseError("invalid UTF-8 sequence");
        for (std::size_t k = 1; k < len; ++k)
            if ((static_cast<unsigned char>(utf8[i + k]) & 0xC0) != 0x80)
                throw ParseError("invalid UTF-8 continuation byte");
        out.emplace_back(utf8.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace hdr::corpus
