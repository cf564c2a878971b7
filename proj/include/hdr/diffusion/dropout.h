#pragma once

#include <array>

#include <torch/torch.h>

#include "hdr/random.h"

namespace hdr::diffusion {

struct DropoutConfig {
    double p_only_damaged_null = 0.08;
    double p_content_mask_null = 0.08;
    double p_all_null = 0.08;

    void validate() const;
    static DropoutConfig none() { return {0.0, 0.0, 0.0}; }
};

enum class DropoutEvent { OnlyDamagedNull, ContentMaskNull, AllNull, Keep };

DropoutEvent draw_dropout_event(const DropoutConfig& config, Rng& rng);

// Condition tensors of a batch: x_d (N, 3, H, W), x_c (N, 1, H, W), x_m (N, 1, H, W), in diffusion range.
struct ConditionBatch {
    torch::Tensor x_d;
    torch::Tensor x_c;
    torch::Tensor x_m;
};

// Replaces the dropped conditions of example i with null images (in place on a copy).
// The drawn events are written to `events` when given.
ConditionBatch apply_conditional_dropout(const ConditionBatch& batch, const DropoutConfig& config, Rng& rng,
                                         std::vector<DropoutEvent>* events = nullptr);

// Null condition tensors for a batch, in diffusion range.
ConditionBatch null_condition_batch(long n, long height, long width);

}  // namespace hdr::diffusion
