#include "hdr/degrade/degrade.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "hdr/error.h"
#include "hdr/image_io.h"

namespace hdr::degrade {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(DegradationKind kind) {
    switch (kind) {
        case DegradationKind::CharacterMissing: return "character_missing";
        case DegradationKind::PaperDamage: return "paper_damage";
        case DegradationKind::InkErosion: return "ink_erosion";
    }
    return "unknown";
}

std::string_view to_string(MaskLevel level) { return level == MaskLevel::Character ? "character" : "block"; }
std::string_view to_string(MaskShape shape) { return shape == MaskShape::Rect ? "rect" : "irregular"; }

DegradationKind parse_kind(std::string_view name) {
    for (auto k : {DegradationKind::CharacterMissing, DegradationKind::PaperDamage, DegradationKind::InkErosion})
        if (to_string(k) == name) return k;
    throw ParseError("unknown degradation kind: " + std::string(name));
}

MaskLevel parse_level(std::string_view name) {
    if (name == "character") return MaskLevel::Character;
    if (name == "block") return MaskLevel::Block;
    throw ParseError("unknown mask level: " + std::string(name));
}

MaskShape parse_shape(std::string_view name) {
    if (name == "rect") return MaskShape::Rect;
    if (name == "irregular") return MaskShape::Irregular;
    throw ParseError("unknown mask shape: " + std::string(name));
}

void MixRatios::validate() const {
    for (double p : {character_missing, paper_damage, ink_erosion})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mix ratios must lie in [0, 1]");
    if (std::abs(character_missing + paper_damage + ink_erosion - 1.0) > 1e-9)
        throw ConfigError("mix ratios must sum to 1");
}

std::pair<long, long> block_area_bounds(long area) {
    auto lo = static_cast<long>(std::ceil(kBlockAreaMin * static_cast<double>(area)));
    auto hi = static_cast<long>(std::floor(kBlockAreaMax * static_cast<double>(area)));
    return {std::max(1L, lo), std::max(1L, hi)};
}

namespace {

// Rectangle of area within the block bounds, aspect ratio in [1/3, 3], uniformly placed.
Box sample_block_rect(int H, int W, Rng& rng) {
    const auto [amin, amax] = block_area_bounds(static_cast<long>(H) * W);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        double area = uniform(rng, static_cast<double>(amin), static_cast<double>(amax));
        double aspect = std::exp(uniform(rng, std::log(1.0 / 3.0), std::log(3.0)));
        int w = static_cast<int>(std::lround(std::sqrt(area * aspect)));
        int h = static_cast<int>(std::lround(area / std::max(1, w)));
        if (w < 1 || h < 1 || w > W || h > H) continue;
        long a = static_cast<long>(w) * h;
        if (a < amin || a > amax) continue;
        int x0 = uniform_int(rng, 0, W - w), y0 = uniform_int(rng, 0, H - h);
        return {x0, y0, x0 + w, y0 + h};
    }
    int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(amin))));
    return {0, 0, std::min(side, W), std::min(side, H)};
}

// Random-walk brush blob confined to `rect`, painted until it covers half of the rectangle.
void paint_blob(Mask& mask, const Box& rect, Rng& rng) {
    const int radius = std::max(1, std::min(rect.width(), rect.height()) / 5);
    const long goal = std::max(1L, rect.area() / 2);
    int cx = (rect.x0 + rect.x1) / 2, cy = (rect.y0 + rect.y1) / 2;
    long painted = 0;
    for (long step = 0; step < 8 * rect.area() && painted < goal; ++step) {
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dx * dx + dy * dy > radius * radius) continue;
                int x = cx + dx, y = cy + dy;
                if (!rect.contains_pixel(x, y) || mask.at(y, x)) continue;
                mask.at(y, x) = 1;
                ++painted;
            }
        cx = std::clamp(cx + uniform_int(rng, -radius, radius), rect.x0, rect.x1 - 1);
        cy = std::clamp(cy + uniform_int(rng, -radius, radius), rect.y0, rect.y1 - 1);
    }
}

Image require_patch_image(const PatchSample& patch) {
    if (patch.image.empty() || patch.image.channels() != 3) throw ShapeError("patch image must be H x W x 3");
    return patch.image;
}

void check_mask(const PatchSample& patch, const DamageMask& mask) {
    if (mask.mask.height() != patch.image.height() || mask.mask.width() != patch.image.width())
        throw ShapeError("mask size differs from patch size");
    if (mask.area() == 0) throw PreconditionError("damage mask must have non-zero area");
}

DamagedPair make_pair(const PatchSample& patch, Image damaged, const DamageMask& mask, DegradationKind kind) {
    DamagedPair pair;
    pair.damaged = std::move(damaged);
    pair.target = patch.image;
    pair.damaged_chars = intersecting_chars(patch.annotations, mask.mask);
    pair.kind = kind;
    pair.mask = mask;
    pair.seed = patch.seed;
    pair.source_id = patch.source_id;
    return pair;
}

float median(std::vector<float> v) {
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

// Median luminance-free background estimate over non-ink pixels selected by `select`.
template <typename Select>
std::vector<std::vector<float>> background_samples(const Image& img, Select select) {
    std::vector<std::vector<float>> per_channel(3);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            if (!select(y, x) || img.luminance(y, x) < corpus::kInkThreshold) continue;
            for (int c = 0; c < 3; ++c) per_channel[static_cast<std::size_t>(c)].push_back(img.at(y, x, c));
        }
    return per_channel;
}

std::vector<float> box_filter_extreme(const Image& img, int c, int k, bool take_max) {
    const int H = img.height(), W = img.width(), r = k / 2;
    std::vector<float> out(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float v = take_max ? 0.0f : 1.0f;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
                    v = take_max ? std::max(v, img.at(yy, xx, c)) : std::min(v, img.at(yy, xx, c));
                }
            out[static_cast<std::size_t>(y) * W + x] = v;
        }
    return out;
}

void gaussian_blur(Image& img, double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * r + 1));
    for (int i = -r; i <= r; ++i) kernel[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    double sum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (auto& k : kernel) k /= sum;

    const int H = img.height(), W = img.width();
    Image tmp = img;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < img.channels(); ++c) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) acc += kernel[static_cast<std::size_t>(i + r)] * img.at(y, std::clamp(x + i, 0, W - 1), c);
                tmp.at(y, x, c) = static_cast<float>(acc);
            }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < img.channels(); ++c) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) acc += kernel[static_cast<std::size_t>(i + r)] * tmp.at(std::clamp(y + i, 0, H - 1), x, c);
                img.at(y, x, c) = static_cast<float>(acc);
            }
}

// 8-bit snap of the masked pixels only; unmasked pixels must stay bit-identical to the target.
void quantize_masked(Image& img, const Mask& m) {
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (m.at(y, x))
                for (int c = 0; c < img.channels(); ++c)
                    img.at(y, x, c) = std::round(std::clamp(img.at(y, x, c), 0.0f, 1.0f) * 255.0f) / 255.0f;
}

long changed_pixels(const Image& a, const Image& b, const Mask& mask) {
    long n = 0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < a.channels(); ++c)
                if (a.at(y, x, c) != b.at(y, x, c)) {
                    ++n;
                    break;
                }
        }
    return n;
}

}  // namespace

std::vector<CharAnnotation> intersecting_chars(const std::vector<CharAnnotation>& chars, const Mask& mask) {
    std::vector<CharAnnotation> out;
    for (const auto& a : chars)
        if (mask.intersects(a.bbox)) out.push_back(a);
    return out;
}

DamageMask sample_mask(const PatchSample& patch, MaskLevel level, MaskShape shape, Rng& rng) {
    const int H = patch.image.height(), W = patch.image.width();
    DamageMask out{Mask(H, W), level, shape};
    if (level == MaskLevel::Character) {
        if (patch.annotations.empty())
            throw PreconditionError("character-level masks need at least one annotation");
        const int count = static_cast<int>(patch.annotations.size());
        const int k = uniform_int(rng, 1, std::min(kMaxMaskedChars, count));
        std::vector<int> order(static_cast<std::size_t>(count));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int i = 0; i < k; ++i) {
            const Box& box = patch.annotations[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].bbox;
            if (shape == MaskShape::Rect)
                out.mask.fill_box(box);
            else
                paint_blob(out.mask, box, rng);
        }
        return out;
    }
    const Box rect = sample_block_rect(H, W, rng);
    if (shape == MaskShape::Rect)
        out.mask.fill_box(rect);
    else
        paint_blob(out.mask, rect, rng);
    return out;
}

DamagedPair apply_character_missing(const PatchSample& patch, const DamageMask& mask, Rng& rng) {
    check_mask(patch, mask);
    Image damaged = require_patch_image(patch);
    const Mask& m = mask.mask;
    const Mask ring = m.dilated(8);

    auto samples = background_samples(patch.image, [&](int y, int x) { return ring.at(y, x) && !m.at(y, x); });
    if (samples[0].size() < 8) samples = background_samples(patch.image, [&](int y, int x) { return !m.at(y, x); });

    std::array<float, 3> med{0.9f, 0.9f, 0.9f}, sigma{0.0f, 0.0f, 0.0f};
    if (!samples[0].empty()) {
        for (std::size_t c = 0; c < 3; ++c) {
            med[c] = median(samples[c]);
            std::vector<float> dev(samples[c].size());
            std::transform(samples[c].begin(), samples[c].end(), dev.begin(), [&](float v) { return std::abs(v - med[c]); });
            sigma[c] = std::min(0.05f, 1.4826f * median(dev));
        }
    }

    std::normal_distribution<float> grain(0.0f, 1.0f);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(y, x)) continue;
            const float z = grain(rng);
            for (std::size_t c = 0; c < 3; ++c) damaged.at(y, x, static_cast<int>(c)) = std::clamp(med[c] + sigma[c] * z, 0.0f, 1.0f);
            if (damaged.luminance(y, x) < corpus::kInkThreshold)
                for (std::size_t c = 0; c < 3; ++c) damaged.at(y, x, static_cast<int>(c)) = med[c];
        }
    quantize_masked(damaged, m);
    return make_pair(patch, std::move(damaged), mask, DegradationKind::CharacterMissing);
}

DamagedPair apply_paper_damage(const PatchSample& patch, const DamageMask& mask, std::optional<Fill> fill, Rng& rng) {
    check_mask(patch, mask);
    const Fill chosen = fill ? *fill : (coin(rng) ? Fill::Black : Fill::White);
    const float value = chosen == Fill::Black ? 0.0f : 1.0f;
    Image damaged = require_patch_image(patch);
    for (int y = 0; y < damaged.height(); ++y)
        for (int x = 0; x < damaged.width(); ++x)
            if (mask.mask.at(y, x))
                for (int c = 0; c < 3; ++c) damaged.at(y, x, c) = value;
    return make_pair(patch, std::move(damaged), mask, DegradationKind::PaperDamage);
}

InkErosionParams InkErosionParams::sample(Rng& rng) {
    InkErosionParams p;
    p.morph = coin(rng);
    p.thin_ink = coin(rng);
    p.kernel = coin(rng) ? 3 : 5;
    p.blur = coin(rng);
    p.sigma = uniform(rng, 0.5, 2.0);
    p.fade = coin(rng);
    p.fade_factor = uniform(rng, 0.2, 0.7);
    p.salt = coin(rng);
    p.salt_density = uniform(rng, 0.0, 0.05);
    if (!p.any()) {
        switch (uniform_int(rng, 0, 3)) {
            case 0: p.morph = true; break;
            case 1: p.blur = true; break;
            case 2: p.fade = true; break;
            default: p.salt = true; break;
        }
    }
    return p;
}

DamagedPair apply_ink_erosion(const PatchSample& patch, const DamageMask& region, Rng& rng) {
    InkErosionParams params = InkErosionParams::sample(rng);
    return apply_ink_erosion(patch, region, params, rng);
}

DamagedPair apply_ink_erosion(const PatchSample& patch, const DamageMask& region, const InkErosionParams& params,
                              Rng& rng) {
    check_mask(patch, region);
    if (region.shape != MaskShape::Rect) throw PreconditionError("ink erosion needs a rectangular region");
    if (!params.any()) throw PreconditionError("ink erosion needs at least one effect");
    const Image& target = require_patch_image(patch);
    const Mask& m = region.mask;
    Image work = target;

    if (params.morph) {
        for (int c = 0; c < 3; ++c) {
            auto filtered = box_filter_extreme(target, c, params.kernel, params.thin_ink);
            for (int y = 0; y < work.height(); ++y)
                for (int x = 0; x < work.width(); ++x) work.at(y, x, c) = filtered[static_cast<std::size_t>(y) * work.width() + x];
        }
    }
    if (params.blur) gaussian_blur(work, params.sigma);
    if (params.fade) {
        auto samples = background_samples(target, [&](int y, int x) { return m.at(y, x) != 0; });
        if (samples[0].empty()) samples = background_samples(target, [](int, int) { return true; });
        for (std::size_t c = 0; c < 3; ++c) {
            const float bg = samples[c].empty() ? 0.9f : median(samples[c]);
            for (int y = 0; y < work.height(); ++y)
                for (int x = 0; x < work.width(); ++x) {
                    float& v = work.at(y, x, static_cast<int>(c));
                    v = bg + static_cast<float>(params.fade_factor) * (v - bg);
                }
        }
    }
    if (params.salt) {
        for (int y = 0; y < work.height(); ++y)
            for (int x = 0; x < work.width(); ++x)
                if (m.at(y, x) && coin(rng, params.salt_density))
                    for (int c = 0; c < 3; ++c) work.at(y, x, c) = 1.0f;
    }

    Image damaged = target;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.at(y, x))
                for (int c = 0; c < 3; ++c) damaged.at(y, x, c) = work.at(y, x, c);
    quantize_masked(damaged, m);

    // A faint effect over plain paper can vanish under 8-bit quantisation; top up with salt so
    // at least 2% of the region is visibly degraded.
    const long area = region.area();
    const long needed = (area + 49) / 50;
    if (changed_pixels(damaged, target, m) * 100 < area) {
        std::vector<std::pair<int, int>> pixels;
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x)
                if (m.at(y, x)) pixels.emplace_back(y, x);
        std::shuffle(pixels.begin(), pixels.end(), rng);
        for (long i = 0; i < needed && i < static_cast<long>(pixels.size()); ++i)
            for (int c = 0; c < 3; ++c) damaged.at(pixels[static_cast<std::size_t>(i)].first, pixels[static_cast<std::size_t>(i)].second, c) = 1.0f;
    }
    return make_pair(patch, std::move(damaged), region, DegradationKind::InkErosion);
}

DamagedPair degrade_patch(const PatchSample& patch, const MixRatios& mix, std::uint64_t seed, std::uint64_t index) {
    Rng rng = make_rng(seed, index);
    const double u = uniform(rng, 0.0, 1.0);
    DegradationKind kind = u < mix.character_missing                      ? DegradationKind::CharacterMissing
                           : u < mix.character_missing + mix.paper_damage ? DegradationKind::PaperDamage
                                                                          : DegradationKind::InkErosion;
    // Guard the boundary when the last ratio is zero and floating-point sums fall short of 1.
    if (kind == DegradationKind::InkErosion && mix.ink_erosion == 0.0)
        kind = mix.paper_damage > 0.0 ? DegradationKind::PaperDamage : DegradationKind::CharacterMissing;

    MaskLevel level = coin(rng) ? MaskLevel::Character : MaskLevel::Block;
    if (patch.annotations.empty()) level = MaskLevel::Block;
    MaskShape shape = MaskShape::Rect;
    if (kind == DegradationKind::PaperDamage && coin(rng)) shape = MaskShape::Irregular;

    DamageMask mask = sample_mask(patch, level, shape, rng);
    DamagedPair pair;
    switch (kind) {
        case DegradationKind::CharacterMissing: pair = apply_character_missing(patch, mask, rng); break;
        case DegradationKind::PaperDamage: pair = apply_paper_damage(patch, mask, std::nullopt, rng); break;
        case DegradationKind::InkErosion: pair = apply_ink_erosion(patch, mask, rng); break;
    }
    pair.seed = mix_seed(seed, index);
    return pair;
}

std::vector<DamagedPair> build_dataset(const std::vector<PatchSample>& patches, const MixRatios& mix,
                                       std::uint64_t seed) {
    mix.validate();
    std::vector<DamagedPair> out;
    out.reserve(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) out.push_back(degrade_patch(patches[i], mix, seed, i));
    return out;
}

namespace {

std::string stem_for(std::size_t i) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << i;
    return os.str();
}

json chars_to_json(const std::vector<CharAnnotation>& chars) {
    json arr = json::array();
    for (const auto& a : chars) arr.push_back({{"bbox", {a.bbox.x0, a.bbox.y0, a.bbox.x1, a.bbox.y1}}, {"label", a.label}});
    return arr;
}

}  // namespace

void write_dataset(const fs::path& root, const std::vector<DamagedPair>& pairs) {
    for (const char* sub : {"damaged", "target", "masks"}) fs::create_directories(root / sub);
    std::ofstream index(root / "index.jsonl", std::ios::trunc);
    if (!index) throw IoError("cannot write " + (root / "index.jsonl").string());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const std::string stem = stem_for(i);
        io::write_png(root / "damaged" / (stem + ".png"), p.damaged);
        io::write_png(root / "target" / (stem + ".png"), p.target);
        io::write_mask_png(root / "masks" / (stem + ".png"), p.mask.mask);
        json rec{{"id", stem},
                 {"kind", to_string(p.kind)},
                 {"level", to_string(p.mask.level)},
                 {"shape", to_string(p.mask.shape)},
                 {"damaged_chars", chars_to_json(p.damaged_chars)},
                 {"seed", p.seed},
                 {"source_id", p.source_id}};
        index << rec.dump() << '\n';
    }
}

std::vector<DamagedPair> read_dataset(const fs::path& root) {
    std::ifstream index(root / "index.jsonl");
    if (!index) throw IoError("dataset index not found under " + root.string());
    std::vector<DamagedPair> out;
    std::string line;
    long record = 0;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
            DamagedPair p;
            const std::string id = rec.at("id").get<std::string>();
            p.kind = parse_kind(rec.at("kind").get<std::string>());
            p.mask.level = parse_level(rec.at("level").get<std::string>());
            p.mask.shape = parse_shape(rec.value("shape", std::string("rect")));
            for (const auto& c : rec.at("damaged_chars")) {
                const auto& bb = c.at("bbox");
                p.damaged_chars.push_back({Box{bb.at(0).get<int>(), bb.at(1).get<int>(), bb.at(2).get<int>(), bb.at(3).get<int>()},
                                           c.at("label").get<std::string>()});
            }
            p.seed = rec.at("seed").get<std::uint64_t>();
            p.source_id = rec.value("source_id", std::string());
            p.damaged = io::read_png(root / "damaged" / (id + ".png"), 3);
            p.target = io::read_png(root / "target" / (id + ".png"), 3);
            p.mask.mask = io::read_mask_png(root / "masks" / (id + ".png"));
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw ParseError("index.jsonl record " + std::to_string(record) + ": " + e.what(), record);
        }
        ++record;
    }
    return out;
}

}  // namespace hdr::degrade
