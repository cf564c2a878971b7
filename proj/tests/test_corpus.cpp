#include <doctest.h>

#include <fstream>
#include <set>

#include "hdr/corpus/corpus.h"
#include "hdr/error.h"
#include "hdr/image_io.h"
#include "test_support.h"

using namespace hdr;
using namespace hdr::corpus;

namespace {

ToyCorpusConfig small_config(int pages) {
    ToyCorpusConfig cfg;
    cfg.alphabet_size = 20;
    cfg.patch_size = 64;
    cfg.patches_per_page = 4;
    cfg.pages = pages;
    cfg.seed = 7;
    return cfg;
}

// Paints `frac` of the patch area as pure-black ink, starting from the top-left corner.
PatchSample patch_with_ink(int annotations, double frac) {
    PatchSample p;
    p.image = Image(64, 64, 3, 0.9f);
    const long ink = static_cast<long>(frac * 64 * 64);
    for (long i = 0; i < ink; ++i)
        for (int c = 0; c < 3; ++c) p.image.at(static_cast<int>(i / 64), static_cast<int>(i % 64), c) = 0.1f;
    for (int i = 0; i < annotations; ++i) p.annotations.push_back({Box{i, i, i + 4, i + 4}, "x"});
    return p;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST_CASE("alphabet labels are single code points and glyphs are distinct") {
    Alphabet alphabet(20);
    std::set<std::string> seen;
    std::set<std::vector<float>> renders;
    for (int i = 0; i < alphabet.size(); ++i) {
        const auto label = alphabet.label(i);
        CHECK(split_codepoints(label).size() == 1);
        CHECK(alphabet.index_of(label) == i);
        seen.insert(label);
        Image canvas(32, 32, 1, 1.0f);
        alphabet.draw(canvas, i, Box{0, 0, 32, 32}, GlyphStyle::canonical());
        renders.emplace(canvas.data().begin(), canvas.data().end());
    }
    CHECK(seen.size() == 20);
    CHECK(renders.size() == 20);
    CHECK_FALSE(alphabet.index_of("A").has_value());
    CHECK_THROWS_AS(Alphabet(1), ConfigError);
}

TEST_CASE("split_codepoints handles multi-byte text and rejects broken UTF-8") {
    Alphabet alphabet(5);
    auto parts = split_codepoints(alphabet.label(0) + "a" + alphabet.label(4));
    REQUIRE(parts.size() == 3);
    CHECK(parts[1] == "a");
    CHECK(parts[2] == alphabet.label(4));
    CHECK_THROWS_AS(split_codepoints(std::string("\xE4\xB8", 2)), ParseError);
}

TEST_CASE("toy corpus has the configured size and in-bounds annotations") {
    const auto cfg = small_config(500);
    const auto patches = generate_toy_corpus(cfg);
    REQUIRE(patches.size() == 2000);
    Alphabet alphabet(cfg.alphabet_size);
    for (const auto& p : patches) {
        REQUIRE(p.image.height() == 64);
        REQUIRE(p.image.width() == 64);
        REQUIRE(p.image.channels() == 3);
        CHECK(p.annotations.size() >= 6);
        CHECK(p.annotations.size() <= 30);
        for (const auto& a : p.annotations) {
            CHECK(a.bbox.x0 >= 0);
            CHECK(a.bbox.y0 >= 0);
            CHECK(a.bbox.x0 < a.bbox.x1);
            CHECK(a.bbox.y0 < a.bbox.y1);
            CHECK(a.bbox.x1 <= 64);
            CHECK(a.bbox.y1 <= 64);
            CHECK(alphabet.contains(a.label));
        }
        for (float v : p.image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("toy corpus is deterministic in the seed") {
    auto cfg = small_config(40);
    const auto a = generate_toy_corpus(cfg);
    const auto b = generate_toy_corpus(cfg);
    CHECK(a == b);
    cfg.seed = 8;
    CHECK_FALSE(a == generate_toy_corpus(cfg));
}

TEST_CASE("toy corpus rejects invalid configuration") {
    auto cfg = small_config(2);
    cfg.alphabet_size = 1;
    CHECK_THROWS_AS(generate_toy_corpus(cfg), ConfigError);
    cfg = small_config(2);
    cfg.patch_size = 60;
    CHECK_THROWS_AS(generate_toy_corpus(cfg), ConfigError);
    cfg = small_config(2);
    cfg.patches_per_page = 0;
    CHECK_THROWS_AS(generate_toy_corpus(cfg), ConfigError);
}

TEST_CASE("toy glyphs are dark strokes on light paper") {
    const auto patches = generate_toy_corpus(small_config(5));
    for (const auto& p : patches) {
        double ink = ink_fraction(p.image);
        CHECK(ink > 0.005);
        CHECK(ink < 0.5);
        for (const auto& a : p.annotations) CHECK(ink_fraction(p.image, a.bbox) > 0.0);
    }
}

TEST_CASE("filter_patch applies both thresholds") {
    PatchSample blank;
    blank.image = Image(64, 64, 3, 1.0f);
    CHECK_FALSE(filter_patch(blank, 1, 0.0));

    CHECK(filter_patch(patch_with_ink(12, 0.08), 4, 0.02));
    CHECK_FALSE(filter_patch(patch_with_ink(12, 0.005), 4, 0.02));
    CHECK_FALSE(filter_patch(patch_with_ink(3, 0.08), 4, 0.02));
}

TEST_CASE("crop_patches slides row-major windows and keeps fully contained boxes") {
    Page page;
    page.source_id = "p";
    page.image = Image(1024, 1024, 3, 0.9f);
    // Characters with ink: one inside each quadrant, one straddling the vertical seam.
    std::vector<Box> boxes{{100, 100, 120, 120}, {600, 100, 620, 120}, {100, 600, 120, 620},
                           {600, 600, 620, 620}, {500, 300, 530, 320}};
    for (const auto& b : boxes) {
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x)
                for (int c = 0; c < 3; ++c) page.image.at(y, x, c) = 0.1f;
        page.annotations.push_back({b, "g"});
    }
    auto patches = crop_patches(page, 512, 512, FilterOptions{1, 0.0});
    REQUIRE(patches.size() <= 4);
    REQUIRE(patches.size() == 4);
    CHECK(patches[0].source_id == "p@0,0");
    CHECK(patches[1].source_id == "p@512,0");
    CHECK(patches[2].source_id == "p@0,512");
    std::size_t assigned = 0;
    for (const auto& p : patches) {
        assigned += p.annotations.size();
        for (const auto& a : p.annotations) CHECK(Box{0, 0, 512, 512}.contains(a.bbox));
    }
    // The seam-straddling box is fully inside no window.
    CHECK(assigned == 4);
    CHECK(patches[1].annotations[0].bbox == Box{88, 100, 108, 120});
}

TEST_CASE("crop_patches on a page smaller than the patch warns and returns nothing") {
    test::LogCapture log;
    Page page;
    page.source_id = "small";
    page.image = Image(400, 400, 3, 0.9f);
    page.annotations.push_back({Box{10, 10, 20, 20}, "g"});
    CHECK(crop_patches(page, 512, 512).empty());
    CHECK(log.contains("smaller than patch size"));
}

TEST_CASE("a centred character lands in exactly one window when stride equals patch size") {
    // 192x192 page, 64-pixel windows at x,y in {0, 64, 128}: the box [91,101) lies inside
    // the centre window [64,128) and crosses no window edge.
    Page page;
    page.source_id = "c";
    page.image = Image(192, 192, 3, 0.9f);
    const Box box{91, 91, 101, 101};
    for (int y = box.y0; y < box.y1; ++y)
        for (int x = box.x0; x < box.x1; ++x)
            for (int c = 0; c < 3; ++c) page.image.at(y, x, c) = 0.05f;
    page.annotations.push_back({box, "g"});
    auto patches = crop_patches(page, 64, 64, FilterOptions{0, 0.0});
    REQUIRE(patches.size() == 9);
    int holders = 0;
    for (const auto& p : patches) holders += static_cast<int>(p.annotations.size());
    CHECK(holders == 1);
    CHECK(patches[4].annotations.size() == 1);
    CHECK(patches[4].annotations[0].bbox == Box{27, 27, 37, 37});
}

TEST_CASE("cropping conservation holds with overlapping windows") {
    auto pages = generate_toy_pages(small_config(3));
    for (const auto& page : pages) {
        auto patches = crop_patches(page, 64, 16, FilterOptions{0, 0.0});
        std::size_t assigned = 0;
        for (const auto& p : patches) assigned += p.annotations.size();
        std::size_t bound = 0;
        for (const auto& a : page.annotations)
            for (int y = 0; y + 64 <= page.image.height(); y += 16)
                for (int x = 0; x + 64 <= page.image.width(); x += 16)
                    bound += Box{x, y, x + 64, y + 64}.contains(a.bbox);
        CHECK(assigned == bound);
    }
}

TEST_CASE("load_annotated_pages reads the corpus layout") {
    test::TempDir dir;
    auto pages = generate_toy_pages(small_config(2));
    write_corpus(dir.path(), pages);
    auto loaded = load_annotated_pages(dir.path());
    REQUIRE(loaded.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(loaded[i].annotations == pages[i].annotations);
        CHECK(loaded[i].image == pages[i].image);
    }
}

TEST_CASE("load_annotated_pages reports bad records") {
    test::TempDir dir;
    io::write_png(dir.path() / "page.png", Image(100, 80, 3, 0.9f));

    SUBCASE("degenerate box names the record") {
        write_text(dir.path() / "a.json",
                   R"({"image": "page.png", "chars": [{"bbox": [1,1,5,5], "label": "a"}, {"bbox": [9,1,9,5], "label": "b"}]})");
        try {
            load_annotated_pages(dir.path());
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.record() == 1);
            CHECK(std::string(e.what()).find("record 1") != std::string::npos);
        }
    }
    SUBCASE("empty annotation list loads with a warning") {
        test::LogCapture log;
        write_text(dir.path() / "a.json", R"({"image": "page.png", "chars": []})");
        auto pages = load_annotated_pages(dir.path());
        REQUIRE(pages.size() == 1);
        CHECK(pages[0].annotations.empty());
        CHECK(log.contains("no annotations"));
    }
    SUBCASE("boxes are clipped or rejected against the page") {
        test::LogCapture log;
        write_text(dir.path() / "a.json",
                   R"({"image": "page.png", "chars": [{"bbox": [70,90,90,110], "label": "a"}, {"bbox": [200,1,210,5], "label": "b"}]})");
        auto pages = load_annotated_pages(dir.path());
        REQUIRE(pages[0].annotations.size() == 1);
        CHECK(pages[0].annotations[0].bbox == Box{70, 90, 80, 100});
        CHECK(log.contains("clipped"));
        CHECK(log.contains("outside the page"));
    }
    SUBCASE("missing image is an I/O error") {
        write_text(dir.path() / "a.json", R"({"image": "nope.png", "chars": []})");
        CHECK_THROWS_AS(load_annotated_pages(dir.path()), IoError);
    }
}

TEST_CASE("load_annotated_pages on a missing directory is an I/O error") {
    CHECK_THROWS_AS(load_annotated_pages("/definitely/not/here"), IoError);
}
