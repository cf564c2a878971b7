#include "hdr/diffusion/losses.h"

#include "hdr/error.h"

namespace hdr::diffusion {

namespace F = torch::nn::functional;

void CPLossConfig::validate() const {
    if (!backbone) throw ConfigError("CPLoss needs a backbone");
    if (layer_ids.size() != weights.size()) throw ConfigError("CPLoss needs one weight per layer");
    bool positive = false;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0) throw ConfigError("CPLoss weights must be non-negative");
        if (weights[i] > 0.0) positive = true;
        if (layer_ids[i] < 0 || layer_ids[i] >= backbone->stage_count()) throw ConfigError("CPLoss layer id out of range");
    }
    if (!positive) throw ConfigError("CPLoss needs at least one positive weight");
}

CPLossConfig CPLossConfig::equal_weights(std::shared_ptr<PerceptualBackbone> backbone) {
    CPLossConfig c;
    const int n = backbone->stage_count();
    for (int i = 0; i < n; ++i) {
        c.layer_ids.push_back(i);
        c.weights.push_back(1.0 / n);
    }
    c.backbone = std::move(backbone);
    return c;
}

torch::Tensor diffusion_loss(const torch::Tensor& prediction, const torch::Tensor& target) {
    if (!prediction.sizes().equals(target.sizes())) throw ShapeError("diffusion_loss: shape mismatch");
    return (prediction - target).pow(2).mean();
}

torch::Tensor masked_feature_distance(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask) {
    if (!a.sizes().equals(b.sizes())) throw ShapeError("feature maps differ in shape");
    if (a.dim() != 4 || mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != a.size(0))
        throw ShapeError("masked_feature_distance expects (N, C, h, w) features and an (N, 1, H, W) mask");
    auto m = mask.to(a.dtype());
    if (m.size(2) != a.size(2) || m.size(3) != a.size(3))
        m = F::interpolate(m, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{a.size(2), a.size(3)})
                                  .mode(torch::kNearest));
    auto denom = m.sum() * a.size(1);
    if (denom.item<double>() == 0.0) return torch::zeros({}, a.options());
    return ((a - b).abs() * m).sum() / denom;
}

torch::Tensor char_perceptual_loss(const torch::Tensor& x_r, const torch::Tensor& x_target,
                                   const torch::Tensor& mask, const CPLossConfig& config) {
    if (!x_r.sizes().equals(x_target.sizes())) throw ShapeError("char_perceptual_loss: image shapes differ");
    if (mask.dim() != 4 || mask.size(2) != x_r.size(2) || mask.size(3) != x_r.size(3))
        throw ShapeError("char_perceptual_loss: mask does not match the images");
    config.validate();
    if (mask.sum().item<double>() == 0.0) return torch::zeros({}, x_r.options());

    auto fr = config.backbone->features((x_r + 1.0f) * 0.5f);
    std::vector<torch::Tensor> ft;
    {
        torch::NoGradGuard no_grad;
        ft = config.backbone->features((x_target + 1.0f) * 0.5f);
    }
    auto total = torch::zeros({}, x_r.options());
    for (std::size_t i = 0; i < config.layer_ids.size(); ++i) {
        if (config.weights[i] == 0.0) continue;
        const int id = config.layer_ids[i];
        total = total + config.weights[i] * masked_feature_distance(fr[id], ft[id], mask);
    }
    return total;
}

}  // namespace hdr::diffusion
