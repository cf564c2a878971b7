#include "hdr/conditions/conditions.h"

#include <spdlog/spdlog.h>

#include "hdr/error.h"

namespace hdr::conditions {

Image render_mask_image(const std::vector<Box>& boxes, int height, int width) {
    Mask mask(height, width);
    for (const Box& b : boxes) {
        Box clipped = b.clipped(width, height);
        if (clipped != b)
            spdlog::warn("mask box [{}, {}, {}, {}] exceeds the {}x{} canvas, clipped", b.x0, b.y0, b.x1, b.y1, width, height);
        mask.fill_box(clipped);
    }
    return mask.to_image();
}

Image render_mask_image(const Mask& mask) { return mask.to_image(); }

Image render_content_image(const std::vector<CharAnnotation>& chars, int height, int width,
                           const corpus::Alphabet& alphabet) {
    Image content(height, width, 1, 1.0f);
    const auto style = corpus::GlyphStyle::canonical();
    for (const auto& ch : chars) {
        auto index = alphabet.index_of(ch.label);
        if (!index) throw PreconditionError("label not in alphabet: " + ch.label);
        Box box = ch.bbox.clipped(width, height);
        if (box.empty()) continue;
        alphabet.draw(content, *index, box, style);
    }
    return content;
}

ConditionImages build_conditions(const std::vector<CharAnnotation>& chars, const Mask& mask,
                                 const corpus::Alphabet& alphabet) {
    return {render_content_image(chars, mask.height(), mask.width(), alphabet), render_mask_image(mask)};
}

NullImages null_conditions(const NullSelection& which, int height, int width) {
    NullImages out;
    if (which.damaged) out.damaged = Image(height, width, 3, NullConditionPolicy::kDamagedNull);
    if (which.content) out.content = Image(height, width, 1, NullConditionPolicy::kContentNull);
    if (which.mask) out.mask = Image(height, width, 1, NullConditionPolicy::kMaskNull);
    return out;
}

}  // namespace hdr::conditions
