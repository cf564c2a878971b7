#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace hdr::diffusion {

inline constexpr int kInputChannels = 8;  // x_t(3) x_d(3) x_c(1) x_m(1)
inline constexpr int kOutputChannels = 3;

struct DenoiserConfig {
    int base_width = 64;
    std::vector<int> multipliers = {1, 2, 4};
    int blocks_per_level = 1;
    bool attention_at_bottom = true;
    int attention_heads = 4;
    int groups = 8;  // GroupNorm groups

    // Spatial size must be divisible by this.
    int downsample_factor() const { return 1 << (multipliers.size() - 1); }
    void validate() const;

    static DenoiserConfig toy();
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

// The four inputs of the denoiser, kept apart until `assemble` so that a swapped
// argument is reported by name instead of silently shifting channels.
struct DenoiserInput {
    torch::Tensor x_t;  // (N, 3, H, W) in [-1, 1]
    torch::Tensor x_d;  // (N, 3, H, W)
    torch::Tensor x_c;  // (N, 1, H, W)
    torch::Tensor x_m;  // (N, 1, H, W) in {0, 1}

    // (N, 8, H, W) in the fixed order x_t, x_d, x_c, x_m. Throws ShapeError on any mismatch.
    torch::Tensor assemble() const;
};

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int in, int out, int emb, int groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

private:
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear emb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

class AttentionBlockImpl : public torch::nn::Module {
public:
    AttentionBlockImpl(int channels, int heads, int groups);
    torch::Tensor forward(const torch::Tensor& x);

private:
    int heads_;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(AttentionBlock);

// Time-conditioned encoder-decoder with skip connections that predicts x0 directly.
class DenoiserImpl : public torch::nn::Module {
public:
    explicit DenoiserImpl(DenoiserConfig config);

    // x: (N, 8, H, W), t: (N) integer timesteps. Returns (N, 3, H, W).
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);
    torch::Tensor forward(const DenoiserInput& in, const torch::Tensor& t) { return forward(in.assemble(), t); }

    const DenoiserConfig& config() const { return config_; }

    // Conv weights in channels-last layout run about 30% faster on CPU. Loading parameters from an
    // archive replaces their storage, so call this again after a load.
    void use_channels_last();

private:
    DenoiserConfig config_;
    int width_;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d stem{nullptr};
    torch::nn::ModuleList down_blocks{nullptr}, downsamplers{nullptr};
    ResBlock mid1{nullptr}, mid2{nullptr};
    AttentionBlock mid_attn{nullptr};
    torch::nn::ModuleList up_blocks{nullptr}, upsamplers{nullptr};
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(Denoiser);

// Sinusoidal embedding of integer timesteps, (N) -> (N, dim).
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

// Single-example convenience that checks shapes before running the network in inference mode.
torch::Tensor denoise_predict(Denoiser& model, const torch::Tensor& x_t, const torch::Tensor& x_d,
                              const torch::Tensor& x_c, const torch::Tensor& x_m, int t);

}  // namespace hdr::diffusion
