#include <doctest.h>

#include <cmath>
#include <set>

#include "hdr/degrade/degrade.h"
#include "hdr/error.h"
#include "test_support.h"

using namespace hdr;
using namespace hdr::degrade;

namespace {

std::vector<PatchSample> toy_patches(int pages, std::uint64_t seed = 3) {
    corpus::ToyCorpusConfig cfg;
    cfg.pages = pages;
    cfg.seed = seed;
    return corpus::generate_toy_corpus(cfg);
}

// Ten disjoint 8x8 "characters" drawn as solid dark squares on light paper.
PatchSample grid_patch() {
    PatchSample p;
    p.image = Image(64, 64, 3, 0.85f);
    p.seed = 11;
    for (int i = 0; i < 10; ++i) {
        Box b{4 + (i % 5) * 12, 8 + (i / 5) * 24, 12 + (i % 5) * 12, 16 + (i / 5) * 24};
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x)
                for (int c = 0; c < 3; ++c) p.image.at(y, x, c) = 0.1f;
        p.annotations.push_back({b, "g" + std::to_string(i)});
    }
    return p;
}

bool confined(const DamagedPair& pair) {
    for (int y = 0; y < pair.target.height(); ++y)
        for (int x = 0; x < pair.target.width(); ++x) {
            if (pair.mask.mask.at(y, x)) continue;
            for (int c = 0; c < 3; ++c)
                if (pair.damaged.at(y, x, c) != pair.target.at(y, x, c)) return false;
        }
    return true;
}

double changed_fraction_in_mask(const DamagedPair& pair) {
    long changed = 0, total = 0;
    for (int y = 0; y < pair.target.height(); ++y)
        for (int x = 0; x < pair.target.width(); ++x) {
            if (!pair.mask.mask.at(y, x)) continue;
            ++total;
            for (int c = 0; c < 3; ++c)
                if (pair.damaged.at(y, x, c) != pair.target.at(y, x, c)) {
                    ++changed;
                    break;
                }
        }
    return static_cast<double>(changed) / static_cast<double>(total);
}

double mean_luminance(const Image& img, const Mask& m) {
    double sum = 0;
    long n = 0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (m.at(y, x)) {
                sum += img.luminance(y, x);
                ++n;
            }
    return sum / static_cast<double>(n);
}

DamageMask box_mask(const Box& b, MaskLevel level = MaskLevel::Block) {
    DamageMask m{Mask(64, 64), level, MaskShape::Rect};
    m.mask.fill_box(b);
    return m;
}

}  // namespace

TEST_CASE("block area bounds are 2%..20% of the patch") {
    auto [lo, hi] = block_area_bounds(64 * 64);
    CHECK(lo == 82);   // ceil(81.92)
    CHECK(hi == 819);  // floor(819.2)
}

TEST_CASE("character-level masks are unions of one to four whole boxes") {
    const PatchSample patch = grid_patch();
    Rng rng(5);
    std::set<int> counts;
    for (int trial = 0; trial < 200; ++trial) {
        auto m = sample_mask(patch, MaskLevel::Character, MaskShape::Rect, rng);
        Mask expected(64, 64);
        int k = 0;
        for (const auto& a : patch.annotations) {
            if (!m.mask.intersects(a.bbox)) continue;
            ++k;
            expected.fill_box(a.bbox);
        }
        CHECK(m.mask == expected);
        CHECK(k >= 1);
        CHECK(k <= 4);
        counts.insert(k);
    }
    CHECK(counts == std::set<int>{1, 2, 3, 4});
}

TEST_CASE("block masks respect the area range") {
    const PatchSample patch = grid_patch();
    Rng rng(9);
    for (int trial = 0; trial < 2000; ++trial) {
        auto m = sample_mask(patch, MaskLevel::Block, MaskShape::Rect, rng);
        Box bb = m.mask.bounding_box();
        CHECK(m.area() == bb.area());  // a single solid rectangle
        CHECK(m.area() >= 82);
        CHECK(m.area() <= 819);
    }
    for (int trial = 0; trial < 200; ++trial) {
        auto m = sample_mask(patch, MaskLevel::Block, MaskShape::Irregular, rng);
        CHECK(m.area() > 0);
        CHECK(m.mask.bounding_box().area() <= 819);
    }
}

TEST_CASE("character-level mask on an annotation-free patch is a precondition error") {
    PatchSample blank;
    blank.image = Image(64, 64, 3, 0.9f);
    Rng rng(1);
    CHECK_THROWS_AS(sample_mask(blank, MaskLevel::Character, MaskShape::Rect, rng), PreconditionError);
}

TEST_CASE("character missing erases ink inside the mask and nothing else") {
    const PatchSample patch = grid_patch();
    const Box victim = patch.annotations[3].bbox;
    Rng rng(2);
    auto pair = apply_character_missing(patch, box_mask(victim, MaskLevel::Character), rng);
    CHECK(corpus::ink_fraction(pair.damaged, victim) == 0.0);
    CHECK(confined(pair));
    REQUIRE(pair.damaged_chars.size() == 1);
    CHECK(pair.damaged_chars[0].label == "g3");
    CHECK(pair.kind == DegradationKind::CharacterMissing);
    // The refill comes from nearby paper, so it stays close to the paper tone.
    CHECK(std::abs(mean_luminance(pair.damaged, pair.mask.mask) - 0.85) < 0.05);
}

TEST_CASE("paper damage fills with pure black or white") {
    const PatchSample patch = grid_patch();
    const auto mask = box_mask(Box{10, 10, 30, 25});
    Rng rng(3);
    auto white = apply_paper_damage(patch, mask, Fill::White, rng);
    for (int y = 10; y < 25; ++y)
        for (int x = 10; x < 30; ++x)
            for (int c = 0; c < 3; ++c) CHECK(white.damaged.at(y, x, c) == 1.0f);
    CHECK(confined(white));

    // No target pixel is pure black, so every masked pixel must change.
    auto black = apply_paper_damage(patch, mask, Fill::Black, rng);
    long differing = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            differing += black.damaged.at(y, x, 0) != black.target.at(y, x, 0);
    CHECK(differing == mask.area());
    CHECK(confined(black));
}

TEST_CASE("ink erosion fades glyphs inside the region only") {
    const PatchSample patch = grid_patch();
    const auto region = box_mask(patch.annotations[0].bbox.united(patch.annotations[1].bbox));
    Rng rng(4);
    InkErosionParams fade;
    fade.fade = true;
    fade.fade_factor = 0.2;
    auto pair = apply_ink_erosion(patch, region, fade, rng);
    CHECK(mean_luminance(pair.damaged, region.mask) > mean_luminance(pair.target, region.mask));
    CHECK(confined(pair));
    CHECK(changed_fraction_in_mask(pair) >= 0.01);
    CHECK(pair.damaged_chars.size() == 2);
}

TEST_CASE("ink erosion always degrades and rejects irregular regions") {
    const auto patches = toy_patches(20);
    Rng rng(6);
    for (const auto& patch : patches) {
        auto region = sample_mask(patch, MaskLevel::Block, MaskShape::Rect, rng);
        auto pair = apply_ink_erosion(patch, region, rng);
        CHECK(confined(pair));
        CHECK(changed_fraction_in_mask(pair) >= 0.01);
    }
    auto blob = sample_mask(patches[0], MaskLevel::Block, MaskShape::Irregular, rng);
    CHECK_THROWS_AS(apply_ink_erosion(patches[0], blob, rng), PreconditionError);
}

TEST_CASE("build_dataset follows the mix and is deterministic") {
    const auto base = toy_patches(50);
    std::vector<PatchSample> patches;
    for (int i = 0; i < 10000; ++i) patches.push_back(base[static_cast<std::size_t>(i) % base.size()]);

    const auto pairs = build_dataset(patches, MixRatios{}, 1);
    REQUIRE(pairs.size() == 10000);
    std::array<int, 3> counts{};
    for (const auto& p : pairs) ++counts[static_cast<std::size_t>(p.kind)];
    const std::array<double, 3> probs{0.25, 0.5, 0.25};
    for (std::size_t k = 0; k < 3; ++k) {
        const double mean = 10000 * probs[k];
        const double sigma = std::sqrt(10000 * probs[k] * (1 - probs[k]));
        CHECK(std::abs(counts[k] - mean) <= 3 * sigma);
    }

    SUBCASE("degenerate mix") {
        auto only = build_dataset(std::vector<PatchSample>(base.begin(), base.end()), MixRatios{1, 0, 0}, 2);
        for (const auto& p : only) CHECK(p.kind == DegradationKind::CharacterMissing);
    }
    SUBCASE("determinism") {
        std::vector<PatchSample> head(patches.begin(), patches.begin() + 300);
        auto a = build_dataset(head, MixRatios{}, 5);
        auto b = build_dataset(head, MixRatios{}, 5);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].damaged == b[i].damaged);
            CHECK(a[i].mask.mask == b[i].mask.mask);
            CHECK(a[i].damaged_chars == b[i].damaged_chars);
            CHECK(a[i].kind == b[i].kind);
        }
    }
    SUBCASE("empty input") { CHECK(build_dataset({}, MixRatios{}, 1).empty()); }
    SUBCASE("invalid mix") { CHECK_THROWS_AS(build_dataset(base, MixRatios{0.5, 0.6, 0.1}, 1), ConfigError); }
}

TEST_CASE("every generated pair is confined, non-trivial and lists intersecting characters") {
    const auto pairs = build_dataset(toy_patches(100, 21), MixRatios{}, 9);
    for (const auto& p : pairs) {
        REQUIRE(p.damaged.same_shape(p.target));
        CHECK(confined(p));
        CHECK(changed_fraction_in_mask(p) >= 0.01);
        for (const auto& a : p.damaged_chars) CHECK(p.mask.mask.intersects(a.bbox));
    }
}

TEST_CASE("dataset layout round-trips through disk") {
    test::TempDir dir;
    const auto pairs = build_dataset(toy_patches(3), MixRatios{}, 4);
    write_dataset(dir.path(), pairs);
    CHECK(std::filesystem::exists(dir.path() / "index.jsonl"));
    CHECK(std::filesystem::exists(dir.path() / "masks" / "000000.png"));
    const auto loaded = read_dataset(dir.path());
    REQUIRE(loaded.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(loaded[i].damaged == pairs[i].damaged);
        CHECK(loaded[i].target == pairs[i].target);
        CHECK(loaded[i].mask.mask == pairs[i].mask.mask);
        CHECK(loaded[i].damaged_chars == pairs[i].damaged_chars);
        CHECK(loaded[i].kind == pairs[i].kind);
        CHECK(loaded[i].seed == pairs[i].seed);
    }
}
