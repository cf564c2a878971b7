#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdr/corpus/corpus.h"
#include "hdr/image.h"
#include "hdr/random.h"

namespace hdr::degrade {

using corpus::CharAnnotation;
using corpus::PatchSample;

enum class DegradationKind { CharacterMissing, PaperDamage, InkErosion };
enum class MaskLevel { Character, Block };
enum class MaskShape { Rect, Irregular };
enum class Fill { Black, White };

inline constexpr int kKindCount = 3;

std::string_view to_string(DegradationKind kind);
std::string_view to_string(MaskLevel level);
std::string_view to_string(MaskShape shape);
DegradationKind parse_kind(std::string_view name);
MaskLevel parse_level(std::string_view name);
MaskShape parse_shape(std::string_view name);

struct DamageMask {
    Mask mask;  // 1 = damaged
    MaskLevel level = MaskLevel::Block;
    MaskShape shape = MaskShape::Rect;

    long area() const { return mask.area(); }
};

struct DamagedPair {
    Image damaged;  // x_d
    Image target;   // x_target
    std::vector<CharAnnotation> damaged_chars;
    DegradationKind kind = DegradationKind::CharacterMissing;
    DamageMask mask;
    std::uint64_t seed = 0;
    std::string source_id;
};

struct MixRatios {
    double character_missing = 0.25;
    double paper_damage = 0.50;
    double ink_erosion = 0.25;

    void validate() const;
};

// Block masks cover this fraction range of the patch area.
inline constexpr double kBlockAreaMin = 0.02;
inline constexpr double kBlockAreaMax = 0.20;
// Maximum number of characters erased by one character-level mask.
inline constexpr int kMaxMaskedChars = 4;

// Inclusive pixel-area bounds for block masks on a patch of `area` pixels.
std::pair<long, long> block_area_bounds(long area);

DamageMask sample_mask(const PatchSample& patch, MaskLevel level, MaskShape shape, Rng& rng);

// Annotations whose boxes intersect the mask.
std::vector<CharAnnotation> intersecting_chars(const std::vector<CharAnnotation>& chars, const Mask& mask);

// Character missing: masked pixels are refilled from background statistics of an 8-pixel ring
// around the mask (per-channel median plus matched Gaussian grain).
DamagedPair apply_character_missing(const PatchSample& patch, const DamageMask& mask, Rng& rng);

// Paper damage: masked pixels become pure black or white. The fill is drawn uniformly when not forced.
DamagedPair apply_paper_damage(const PatchSample& patch, const DamageMask& mask, std::optional<Fill> fill, Rng& rng);

struct InkErosionParams {
    bool morph = false;
    bool thin_ink = true;  // erode the ink (max filter) rather than thicken it (min filter)
    int kernel = 3;        // 3 or 5
    bool blur = false;
    double sigma = 1.0;    // [0.5, 2.0]
    bool fade = false;
    double fade_factor = 0.5;  // ink contrast multiplier in [0.2, 0.7]
    bool salt = false;
    double salt_density = 0.0;  // [0, 0.05]

    bool any() const { return morph || blur || fade || salt; }
    static InkErosionParams sample(Rng& rng);
};

// Ink erosion restricted to a rectangular region (union of boxes). Irregular regions are rejected.
DamagedPair apply_ink_erosion(const PatchSample& patch, const DamageMask& region, Rng& rng);
DamagedPair apply_ink_erosion(const PatchSample& patch, const DamageMask& region,
                              const InkErosionParams& params, Rng& rng);

// One degradation of `patch` drawn from rng(seed, index); build_dataset uses index = patch position.
DamagedPair degrade_patch(const PatchSample& patch, const MixRatios& mix, std::uint64_t seed, std::uint64_t index);

// Seeded per-patch degradation with kind probabilities given by `mix`.
std::vector<DamagedPair> build_dataset(const std::vector<PatchSample>& patches, const MixRatios& mix,
                                       std::uint64_t seed);

// dataset/{damaged,target,masks}/NNNNNN.png plus dataset/index.jsonl.
void write_dataset(const std::filesystem::path& root, const std::vector<DamagedPair>& pairs);
std::vector<DamagedPair> read_dataset(const std::filesystem::path& root);

}  // namespace hdr::degrade
