#pragma once

#include <memory>
#include <vector>

#include <torch/torch.h>

namespace hdr::diffusion {

// Frozen feature extractor feeding the character perceptual loss.
class PerceptualBackbone {
public:
    virtual ~PerceptualBackbone() = default;
    // images: (N, 3, H, W) in [0, 1]. Returns one feature map per stage, coarsest last.
    virtual std::vector<torch::Tensor> features(const torch::Tensor& images) = 0;
    virtual int stage_count() const = 0;
};

struct CPLossConfig {
    std::vector<int> layer_ids;  // indices into the backbone's stages
    std::vector<double> weights;
    std::shared_ptr<PerceptualBackbone> backbone;

    void validate() const;
    // All backbone stages with equal weights 1/L.
    static CPLossConfig equal_weights(std::shared_ptr<PerceptualBackbone> backbone);
};

// Mean squared error over all elements.
torch::Tensor diffusion_loss(const torch::Tensor& prediction, const torch::Tensor& target);

// Per-element absolute feature difference averaged over masked locations and channels.
// features: (N, C, h, w); mask: (N, 1, H, W), resampled nearest to (h, w). Zero when the mask is empty.
torch::Tensor masked_feature_distance(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask);

// x_r and x_target in [-1, 1], mask (N, 1, H, W) in {0, 1}.
torch::Tensor char_perceptual_loss(const torch::Tensor& x_r, const torch::Tensor& x_target,
                                   const torch::Tensor& mask, const CPLossConfig& config);

}  // namespace hdr::diffusion
