#include "hdr/diffusion/dropout.h"

#include "hdr/conditions/conditions.h"
#include "hdr/error.h"

namespace hdr::diffusion {

using conditions::NullConditionPolicy;

void DropoutConfig::validate() const {
    for (double p : {p_only_damaged_null, p_content_mask_null, p_all_null})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dropout probabilities must lie in [0, 1]");
    if (p_only_damaged_null + p_content_mask_null + p_all_null > 1.0 + 1e-12)
        throw ConfigError("dropout probabilities sum above 1");
}

DropoutEvent draw_dropout_event(const DropoutConfig& config, Rng& rng) {
    const double u = uniform(rng, 0.0, 1.0);
    double edge = config.p_only_damaged_null;
    if (u < edge) return DropoutEvent::OnlyDamagedNull;
    edge += config.p_content_mask_null;
    if (u < edge) return DropoutEvent::ContentMaskNull;
    edge += config.p_all_null;
    if (u < edge) return DropoutEvent::AllNull;
    return DropoutEvent::Keep;
}

namespace {

// Pixel values in [0, 1] mapped the same way as the images they replace.
constexpr float signed_value(float v) { return 2.0f * v - 1.0f; }

}  // namespace

ConditionBatch null_condition_batch(long n, long height, long width) {
    // The mask channel stays binary and is never rescaled.
    return {torch::full({n, 3, height, width}, signed_value(NullConditionPolicy::kDamagedNull)),
            torch::full({n, 1, height, width}, signed_value(NullConditionPolicy::kContentNull)),
            torch::full({n, 1, height, width}, NullConditionPolicy::kMaskNull)};
}

ConditionBatch apply_conditional_dropout(const ConditionBatch& batch, const DropoutConfig& config, Rng& rng,
                                         std::vector<DropoutEvent>* events) {
    config.validate();
    ConditionBatch out{batch.x_d.clone(), batch.x_c.clone(), batch.x_m.clone()};
    const long n = batch.x_d.size(0);
    if (events) events->clear();
    for (long i = 0; i < n; ++i) {
        const auto e = draw_dropout_event(config, rng);
        if (events) events->push_back(e);
        const bool drop_d = e == DropoutEvent::OnlyDamagedNull || e == DropoutEvent::AllNull;
        const bool drop_cm = e == DropoutEvent::ContentMaskNull || e == DropoutEvent::AllNull;
        if (drop_d) out.x_d[i].fill_(signed_value(NullConditionPolicy::kDamagedNull));
        if (drop_cm) {
            out.x_c[i].fill_(signed_value(NullConditionPolicy::kContentNull));
            out.x_m[i].fill_(NullConditionPolicy::kMaskNull);
        }
    }
    return out;
}

}  // namespace hdr::diffusion
