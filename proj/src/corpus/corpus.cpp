#include "hdr/corpus/corpus.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "hdr/error.h"
#include "hdr/image_io.h"

namespace hdr::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string zero_pad(long value, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << value;
    return os.str();
}

// Light paper: palette colour, low-frequency mottling and fine grain.
void paint_background(Image& page, const std::array<float, 3>& base, Rng& rng) {
    constexpr int kCell = 16;
    const int gh = page.height() / kCell + 2, gw = page.width() / kCell + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
    for (auto& g : grid) g = uniform(rng, -0.035, 0.035);
    std::normal_distribution<double> grain(0.0, 0.012);

    for (int y = 0; y < page.height(); ++y)
        for (int x = 0; x < page.width(); ++x) {
            double fy = static_cast<double>(y) / kCell, fx = static_cast<double>(x) / kCell;
            int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
            double ty = fy - iy, tx = fx - ix;
            auto g = [&](int r, int c) { return grid[static_cast<std::size_t>(r) * gw + c]; };
            double low = (1 - ty) * ((1 - tx) * g(iy, ix) + tx * g(iy, ix + 1)) +
                         ty * ((1 - tx) * g(iy + 1, ix) + tx * g(iy + 1, ix + 1));
            double n = grain(rng);
            for (int c = 0; c < 3; ++c)
                page.at(y, x, c) = static_cast<float>(std::clamp(base[static_cast<std::size_t>(c)] + low + n, 0.55, 0.97));
        }
}

Page generate_page(const ToyCorpusConfig& cfg, const Alphabet& alphabet, int page_index, int attempt) {
    const int P = cfg.patch_size;
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.patches_per_page))));
    const int rows = (cfg.patches_per_page + cols - 1) / cols;
    Rng rng = make_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(page_index)), static_cast<std::uint64_t>(attempt));

    Page page;
    page.source_id = "page" + zero_pad(page_index, 6);
    page.image = Image(rows * P, cols * P, 3);
    const auto& base = cfg.background_palette[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<int>(cfg.background_palette.size()) - 1))];
    paint_background(page.image, base, rng);

    const GlyphStyle style = make_style(cfg.seed, uniform_int(rng, 0, cfg.glyph_styles - 1));
    const bool vertical = coin(rng, 0.6);
    std::uint64_t occurrence = rng();

    for (int pr = 0; pr < rows; ++pr)
        for (int pc = 0; pc < cols; ++pc) {
            const int lines = uniform_int(rng, cfg.lines_per_patch.min, cfg.lines_per_patch.max);
            const int slots = uniform_int(rng, cfg.cells_per_line.min, cfg.cells_per_line.max);
            const double line_pitch = static_cast<double>(P) / lines;
            const double slot_pitch = static_cast<double>(P) / slots;
            for (int l = 0; l < lines; ++l) {
                const int length = uniform_int(rng, (slots + 1) / 2, slots);
                for (int s = 0; s < length; ++s) {
                    double cell_w = vertical ? line_pitch : slot_pitch;
                    double cell_h = vertical ? slot_pitch : line_pitch;
                    double cx = (vertical ? l : s) * cell_w + cell_w / 2;
                    double cy = (vertical ? s : l) * cell_h + cell_h / 2;
                    double size = std::min(cell_w, cell_h) * uniform(rng, 0.72, 0.9);
                    cx += uniform(rng, -0.05, 0.05) * cell_w;
                    cy += uniform(rng, -0.05, 0.05) * cell_h;
                    Box box{static_cast<int>(std::lround(cx - size / 2)), static_cast<int>(std::lround(cy - size / 2)),
                            static_cast<int>(std::lround(cx + size / 2)), static_cast<int>(std::lround(cy + size / 2))};
                    box = box.clipped(P, P);
                    if (box.width() < 4 || box.height() < 4) continue;
                    box = box.translated(pc * P, pr * P);
                    const int glyph = uniform_int(rng, 0, alphabet.size() - 1);
                    alphabet.draw(page.image, glyph, box, style, occurrence++);
                    page.annotations.push_back({box, alphabet.label(glyph)});
                }
            }
        }
    page.image.quantize8();
    return page;
}

}  // namespace

void ToyCorpusConfig::validate() const {
    if (alphabet_size < 2) throw ConfigError("alphabet_size must be >= 2");
    if (alphabet_size > Alphabet::kMaxSize) throw ConfigError("alphabet_size too large");
    if (patch_size < 32 || patch_size % 8 != 0)
        throw ConfigError("patch_size must be >= 32 and divisible by 8");
    if (glyph_styles < 1) throw ConfigError("glyph_styles must be positive");
    if (patches_per_page < 1) throw ConfigError("patches_per_page must be positive");
    if (pages < 0) throw ConfigError("pages must be non-negative");
    if (background_palette.empty()) throw ConfigError("background_palette must not be empty");
    auto check = [](IntRange r, const char* name) {
        if (r.min < 1 || r.max < r.min) throw ConfigError(std::string("invalid range for ") + name);
    };
    check(lines_per_patch, "lines_per_patch");
    check(cells_per_line, "cells_per_line");
}

GlyphStyle make_style(std::uint64_t corpus_seed, int style_index) {
    Rng rng = make_rng(corpus_seed ^ 0x5354594C45ULL, static_cast<std::uint64_t>(style_index));
    GlyphStyle style;
    style.stroke_fraction = uniform(rng, 0.10, 0.16);
    style.slant = uniform(rng, -0.12, 0.12);
    style.font_jitter = uniform(rng, 0.02, 0.06);
    style.char_jitter = 0.02;
    float r = static_cast<float>(uniform(rng, 0.04, 0.20));
    float g = r * static_cast<float>(uniform(rng, 0.75, 1.0));
    float b = g * static_cast<float>(uniform(rng, 0.65, 1.0));
    style.ink = {r, g, b};
    style.seed = rng();
    return style;
}

std::vector<Page> generate_toy_pages(const ToyCorpusConfig& config) {
    config.validate();
    Alphabet alphabet(config.alphabet_size);
    std::vector<Page> pages;
    pages.reserve(static_cast<std::size_t>(config.pages));
    for (int p = 0; p < config.pages; ++p) pages.push_back(generate_page(config, alphabet, p, 0));
    return pages;
}

std::vector<PatchSample> generate_toy_corpus(const ToyCorpusConfig& config) {
    config.validate();
    Alphabet alphabet(config.alphabet_size);
    std::vector<PatchSample> out;
    out.reserve(static_cast<std::size_t>(config.pages) * config.patches_per_page);
    for (int p = 0; p < config.pages; ++p) {
        // Layout guarantees enough characters per window; regenerate the rare page whose
        // windows fail the text filter so the patch count stays exact.
        for (int attempt = 0;; ++attempt) {
            Page page = generate_page(config, alphabet, p, attempt);
            auto patches = crop_patches(page, config.patch_size, config.patch_size);
            if (static_cast<int>(patches.size()) >= config.patches_per_page) {
                patches.resize(static_cast<std::size_t>(config.patches_per_page));
                for (auto& patch : patches) out.push_back(std::move(patch));
                break;
            }
            if (attempt > 100) throw ConfigError("toy layout cannot satisfy the patch text filter");
        }
    }
    return out;
}

std::vector<CharAnnotation> parse_annotations(const std::string& json_text, int page_width,
                                              int page_height, const std::string& source) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(source + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("chars") || !doc["chars"].is_array())
        throw ParseError(source + ": expected an object with a \"chars\" array");

    std::vector<CharAnnotation> out;
    const auto& chars = doc["chars"];
    for (std::size_t i = 0; i < chars.size(); ++i) {
        const auto& rec = chars[i];
        const long idx = static_cast<long>(i);
        auto fail = [&](const std::string& why) {
            return ParseError(source + ": record " + std::to_string(i) + ": " + why, idx);
        };
        if (!rec.is_object() || !rec.contains("bbox") || !rec.contains("label")) throw fail("missing bbox or label");
        const auto& bb = rec["bbox"];
        if (!bb.is_array() || bb.size() != 4) throw fail("bbox must be [x0, y0, x1, y1]");
        for (const auto& v : bb)
            if (!v.is_number_integer()) throw fail("bbox coordinates must be integers");
        if (!rec["label"].is_string() || rec["label"].get<std::string>().empty()) throw fail("label must be a non-empty string");

        Box box{bb[0].get<int>(), bb[1].get<int>(), bb[2].get<int>(), bb[3].get<int>()};
        if (box.x1 <= box.x0 || box.y1 <= box.y0) throw fail("degenerate bbox (x1 <= x0 or y1 <= y0)");

        Box clipped = box.clipped(page_width, page_height);
        if (clipped.empty()) {
            spdlog::warn("{}: record {} lies outside the page, rejected", source, i);
            continue;
        }
        if (clipped != box) spdlog::warn("{}: record {} clipped to page bounds", source, i);
        out.push_back({clipped, rec["label"].get<std::string>()});
    }
    if (out.empty()) spdlog::warn("{}: page has no annotations", source);
    return out;
}

std::vector<Page> load_annotated_pages(const fs::path& root, AnnotationFormat format) {
    if (format != AnnotationFormat::Json) throw ConfigError("unsupported annotation format");
    if (!fs::is_directory(root)) throw IoError("annotation directory not found: " + root.string());

    fs::path ann_dir = fs::is_directory(root / "annotations") ? root / "annotations" : root;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(ann_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::vector<Page> pages;
    for (const auto& file : files) {
        std::ifstream in(file);
        if (!in) throw IoError("cannot open " + file.string());
        std::stringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();

        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(file.string() + ": invalid JSON: " + e.what());
        }
        if (!doc.contains("image") || !doc["image"].is_string())
            throw ParseError(file.string() + ": missing \"image\" path");
        fs::path image_path = root / doc["image"].get<std::string>();
        if (!fs::exists(image_path)) throw IoError("page image not found: " + image_path.string());

        Page page;
        page.image = io::read_png(image_path, 3);
        page.source_id = file.stem().string();
        page.annotations = parse_annotations(text, page.image.width(), page.image.height(), file.string());
        pages.push_back(std::move(page));
    }
    return pages;
}

void write_corpus(const fs::path& root, const std::vector<Page>& pages) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "annotations");
    for (std::size_t i = 0; i < pages.size(); ++i) {
        const std::string stem = zero_pad(static_cast<long>(i), 6);
        io::write_png(root / "images" / (stem + ".png"), pages[i].image);
        json doc;
        doc["image"] = "images/" + stem + ".png";
        doc["chars"] = json::array();
        for (const auto& a : pages[i].annotations)
            doc["chars"].push_back({{"bbox", {a.bbox.x0, a.bbox.y0, a.bbox.x1, a.bbox.y1}}, {"label", a.label}});
        std::ofstream out(root / "annotations" / (stem + ".json"));
        if (!out) throw IoError("cannot write annotations for page " + stem);
        out << doc.dump() << '\n';
    }
}

double ink_fraction(const Image& image, const Box& region) {
    Box r = region.clipped(image.width(), image.height());
    if (r.empty()) return 0.0;
    long ink = 0;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) ink += image.luminance(y, x) < kInkThreshold;
    return static_cast<double>(ink) / static_cast<double>(r.area());
}

double ink_fraction(const Image& image) { return ink_fraction(image, Box{0, 0, image.width(), image.height()}); }

bool filter_patch(const PatchSample& patch, int min_chars, double min_ink_fraction) {
    if (static_cast<int>(patch.annotations.size()) < min_chars) return false;
    return ink_fraction(patch.image) >= min_ink_fraction;
}

std::vector<PatchSample> crop_patches(const Page& page, int patch_size, int stride, const FilterOptions& filter) {
    if (patch_size <= 0) throw ConfigError("patch_size must be positive");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    const int H = page.image.height(), W = page.image.width();
    if (H < patch_size || W < patch_size) {
        spdlog::warn("{}: page {}x{} is smaller than patch size {}, no patches", page.source_id, W, H, patch_size);
        return {};
    }

    std::vector<PatchSample> out;
    const std::uint64_t page_hash = fnv1a(page.source_id);
    std::uint64_t window = 0;
    for (int y = 0; y + patch_size <= H; y += stride)
        for (int x = 0; x + patch_size <= W; x += stride, ++window) {
            const Box win{x, y, x + patch_size, y + patch_size};
            PatchSample patch;
            for (const auto& a : page.annotations)
                if (win.contains(a.bbox)) patch.annotations.push_back({a.bbox.translated(-x, -y), a.label});
            if (static_cast<int>(patch.annotations.size()) < filter.min_chars) continue;
            patch.image = page.image.crop(win);
            if (!filter_patch(patch, filter.min_chars, filter.min_ink_fraction)) continue;
            patch.source_id = page.source_id + "@" + std::to_string(x) + "," + std::to_string(y);
            patch.seed = mix_seed(page_hash, window);
            out.push_back(std::move(patch));
        }
    return out;
}

}  // namespace hdr::corpus
