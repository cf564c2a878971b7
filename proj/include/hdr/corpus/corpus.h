#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdr/corpus/alphabet.h"
#include "hdr/image.h"

namespace hdr::corpus {

struct CharAnnotation {
    Box bbox;
    std::string label;

    bool operator==(const CharAnnotation&) const = default;
};

struct PatchSample {
    Image image;  // H x W x 3, values in [0, 1]
    std::vector<CharAnnotation> annotations;
    std::string source_id;
    std::uint64_t seed = 0;

    bool operator==(const PatchSample&) const = default;
};

struct Page {
    Image image;
    std::vector<CharAnnotation> annotations;
    std::string source_id;
};

struct IntRange {
    int min = 0;
    int max = 0;
};

struct ToyCorpusConfig {
    int alphabet_size = 20;
    int glyph_styles = 8;
    int patch_size = 64;
    int patches_per_page = 4;
    int pages = 500;
    std::vector<std::array<float, 3>> background_palette = {
        {0.93f, 0.89f, 0.80f}, {0.90f, 0.84f, 0.72f}, {0.86f, 0.80f, 0.68f},
        {0.92f, 0.91f, 0.86f}, {0.84f, 0.77f, 0.62f}};
    IntRange lines_per_patch{3, 5};  // text lines (columns or rows) per patch
    IntRange cells_per_line{3, 5};   // character slots per line
    std::uint64_t seed = 0;

    void validate() const;
};

// Luminance below this value counts as ink.
inline constexpr float kInkThreshold = 0.5f;

struct FilterOptions {
    int min_chars = 4;
    double min_ink_fraction = 0.01;
};

// Generates pages * patches_per_page patches. Deterministic in (config, seed).
std::vector<PatchSample> generate_toy_corpus(const ToyCorpusConfig& config);

// The pages behind generate_toy_corpus, before cropping.
std::vector<Page> generate_toy_pages(const ToyCorpusConfig& config);

// The per-page writing style used by the toy generator.
GlyphStyle make_style(std::uint64_t corpus_seed, int style_index);

enum class AnnotationFormat { Json };

// Reads annotated pages from `root`. Annotation files are taken from `root/annotations/*.json`
// when that directory exists, otherwise from `root/*.json`; image paths are relative to `root`.
std::vector<Page> load_annotated_pages(const std::filesystem::path& root,
                                       AnnotationFormat format = AnnotationFormat::Json);

// Parses one annotation document. `page_width`/`page_height` bound the boxes.
std::vector<CharAnnotation> parse_annotations(const std::string& json_text, int page_width,
                                              int page_height, const std::string& source);

// Writes pages in the corpus/{images,annotations} layout.
void write_corpus(const std::filesystem::path& root, const std::vector<Page>& pages);

double ink_fraction(const Image& image, const Box& region);
double ink_fraction(const Image& image);

bool filter_patch(const PatchSample& patch, int min_chars, double min_ink_fraction);

std::vector<PatchSample> crop_patches(const Page& page, int patch_size, int stride,
                                      const FilterOptions& filter = {});

}  // namespace hdr::corpus
