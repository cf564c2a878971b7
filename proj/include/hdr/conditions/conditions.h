#pragma once

#include <optional>
#include <vector>

#include "hdr/corpus/alphabet.h"
#include "hdr/corpus/corpus.h"
#include "hdr/image.h"

namespace hdr::conditions {

using corpus::CharAnnotation;

// Content image x_c (glyph prior) and mask image x_m (location prior), both single-channel.
struct ConditionImages {
    Image content;  // 1 x H x W in [0, 1], white outside glyph strokes
    Image mask;     // 1 x H x W in {0, 1}
};

// Values that stand in for a dropped condition.
struct NullConditionPolicy {
    static constexpr float kDamagedNull = 1.0f;
    static constexpr float kContentNull = 1.0f;
    static constexpr float kMaskNull = 0.0f;
};

// Pixel = 1 inside the union of boxes. Boxes reaching outside the canvas are clipped with a warning.
Image render_mask_image(const std::vector<Box>& boxes, int height, int width);
// Mask image from an already rasterised (possibly irregular) damage mask.
Image render_mask_image(const Mask& mask);

// Canonical black-on-white glyphs, each scaled into its box. Throws PreconditionError naming
// the label when it is not in the alphabet.
Image render_content_image(const std::vector<CharAnnotation>& chars, int height, int width,
                           const corpus::Alphabet& alphabet);

ConditionImages build_conditions(const std::vector<CharAnnotation>& chars, const Mask& mask,
                                 const corpus::Alphabet& alphabet);

struct NullSelection {
    bool damaged = false;
    bool content = false;
    bool mask = false;
};

struct NullImages {
    std::optional<Image> damaged;  // 3 channels
    std::optional<Image> content;  // 1 channel
    std::optional<Image> mask;     // 1 channel
};

NullImages null_conditions(const NullSelection& which, int height, int width);

}  // namespace hdr::conditions
