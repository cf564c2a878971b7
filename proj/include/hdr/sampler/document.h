#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hdr/corpus/alphabet.h"
#include "hdr/image.h"
#include "hdr/sampler/sampler.h"

namespace hdr::sampler {

// REPAIR fills damaged regions of the page as they are; EDIT first blanks the boxes so new content
// replaces the old; TEXT_BLOCK lays several characters out inside each box.
enum class RepairMode { Repair, Edit, TextBlock };
std::string_view to_string(RepairMode m);
RepairMode parse_mode(std::string_view name);

struct Edit {
    Box bbox;
    std::string text;  // one character, empty (REPAIR: location only), or several (TEXT_BLOCK)
};

struct DocumentRepairConfig {
    RepairMode mode = RepairMode::Repair;
    GuidanceScales scales;
    SamplerConfig sampler;
    int window = 64;                // model patch size
    std::optional<Mask> extra_mask;  // REPAIR: damaged pixels beyond the edit boxes
};

struct RepairWindow {
    Box box;             // window placement on the (padded) page
    std::vector<int> edits;  // indices of the edits it serves
};

struct DocumentRepairResult {
    Image repaired;
    Mask mask;  // pixels the repair was allowed to change
    std::vector<RepairWindow> windows;
};

// Character cells for `count` glyphs in `region`: a near-square grid filled row by row.
std::vector<Box> layout_text_block(const Box& region, int count);

// Connected groups of boxes, where touching or overlapping boxes belong together. Groups keep input order.
std::vector<std::vector<int>> cluster_boxes(const std::vector<Box>& boxes);

// Window placements of size `window` covering `region` on a page of the given size: one centred window when
// the region fits, otherwise a grid with 25% overlap. Windows are clamped inside the page.
std::vector<Box> place_windows(const Box& region, int window, int page_width, int page_height);

// Repairs the page window by window. Throws PreconditionError for boxes outside the page, unknown labels or a
// text length the mode does not allow. Pixels outside the returned mask are never changed.
DocumentRepairResult repair_document(const ModelFn& model, const diffusion::NoiseSchedule& schedule,
                                     const corpus::Alphabet& alphabet, const Image& page,
                                     const std::vector<Edit>& edits, const DocumentRepairConfig& cfg);

}  // namespace hdr::sampler
