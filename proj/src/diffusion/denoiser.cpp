#include "hdr/diffusion/denoiser.h"

#include <cmath>
#include <string>

#include "hdr/error.h"

namespace hdr::diffusion {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void DenoiserConfig::validate() const {
    if (base_width < 1) throw ConfigError("base_width must be positive");
    if (multipliers.empty()) throw ConfigError("need at least one channel multiplier");
    for (int m : multipliers)
        if (m < 1) throw ConfigError("channel multipliers must be positive");
    if (blocks_per_level < 1) throw ConfigError("blocks_per_level must be >= 1");
    if (groups < 1 || base_width % groups != 0) throw ConfigError("base_width must be a multiple of groups");
    const int bottom = base_width * multipliers.back();
    if (attention_at_bottom && (attention_heads < 1 || bottom % attention_heads != 0))
        throw ConfigError("bottom width must be divisible by attention_heads");
}

DenoiserConfig DenoiserConfig::toy() {
    DenoiserConfig c;
    c.base_width = 32;
    return c;
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = {{"base_width", c.base_width},
         {"multipliers", c.multipliers},
         {"blocks_per_level", c.blocks_per_level},
         {"attention_at_bottom", c.attention_at_bottom},
         {"attention_heads", c.attention_heads},
         {"groups", c.groups}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    DenoiserConfig d;
    c.base_width = j.value("base_width", d.base_width);
    c.multipliers = j.value("multipliers", d.multipliers);
    c.blocks_per_level = j.value("blocks_per_level", d.blocks_per_level);
    c.attention_at_bottom = j.value("attention_at_bottom", d.attention_at_bottom);
    c.attention_heads = j.value("attention_heads", d.attention_heads);
    c.groups = j.value("groups", d.groups);
}

namespace {

void check_part(const torch::Tensor& t, const char* name, long channels, const torch::Tensor& ref) {
    if (!t.defined()) throw ShapeError(std::string(name) + " is missing");
    if (t.dim() != 4) throw ShapeError(std::string(name) + " must be (N, C, H, W)");
    if (t.size(1) != channels)
        throw ShapeError(std::string(name) + " must have " + std::to_string(channels) + " channels, got " +
                         std::to_string(t.size(1)));
    if (t.size(0) != ref.size(0) || t.size(2) != ref.size(2) || t.size(3) != ref.size(3))
        throw ShapeError(std::string(name) + " does not match x_t in batch or spatial size");
}

}  // namespace

torch::Tensor DenoiserInput::assemble() const {
    if (!x_t.defined() || x_t.dim() != 4) throw ShapeError("x_t must be (N, 3, H, W)");
    check_part(x_t, "x_t", 3, x_t);
    check_part(x_d, "x_d", 3, x_t);
    check_part(x_c, "x_c", 1, x_t);
    check_part(x_m, "x_m", 1, x_t);
    return torch::cat({x_t, x_d, x_c, x_m}, 1);
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
    const int half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
    auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (dim % 2) emb = F::pad(emb, F::PadFuncOptions({0, 1}));
    return emb;
}

ResBlockImpl::ResBlockImpl(int in, int out, int emb, int groups) {
    norm1 = register_module("norm1", nn::GroupNorm(groups, in));
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
    emb_proj = register_module("emb_proj", nn::Linear(emb, out));
    norm2 = register_module("norm2", nn::GroupNorm(groups, out));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
    if (in != out) skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1(torch::silu(norm1(x)));
    h = h + emb_proj(torch::silu(emb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(torch::silu(norm2(h)));
    return h + (skip ? skip(x) : x);
}

AttentionBlockImpl::AttentionBlockImpl(int channels, int heads, int groups) : heads_(heads) {
    norm = register_module("norm", nn::GroupNorm(groups, channels));
    qkv = register_module("qkv", nn::Conv2d(nn::Conv2dOptions(channels, 3 * channels, 1)));
    proj = register_module("proj", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
    const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    const long d = c / heads_;
    auto parts = qkv(norm(x)).reshape({n, 3, heads_, d, h * w}).unbind(1);
    auto q = parts[0].transpose(-1, -2), k = parts[1], v = parts[2].transpose(-1, -2);
    auto attn = torch::softmax(torch::matmul(q, k) / std::sqrt(static_cast<double>(d)), -1);
    auto out = torch::matmul(attn, v).transpose(-1, -2).reshape({n, c, h, w});
    return x + proj(out);
}

DenoiserImpl::DenoiserImpl(DenoiserConfig config) : config_(std::move(config)) {
    config_.validate();
    width_ = config_.base_width;
    const int emb = 4 * width_;
    const int g = config_.groups;
    time_mlp = register_module("time_mlp", nn::Sequential(nn::Linear(width_, emb), nn::SiLU(), nn::Linear(emb, emb)));
    stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(kInputChannels, width_, 3).padding(1)));

    down_blocks = register_module("down_blocks", nn::ModuleList());
    downsamplers = register_module("downsamplers", nn::ModuleList());
    std::vector<int> skip_channels{width_};
    int ch = width_;
    const int levels = static_cast<int>(config_.multipliers.size());
    for (int level = 0; level < levels; ++level) {
        const int out = width_ * config_.multipliers[level];
        for (int b = 0; b < config_.blocks_per_level; ++b) {
            down_blocks->push_back(ResBlock(ch, out, emb, g));
            ch = out;
            skip_channels.push_back(ch);
        }
        if (level + 1 < levels) {
            downsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
            skip_channels.push_back(ch);
        }
    }

    mid1 = register_module("mid1", ResBlock(ch, ch, emb, g));
    if (config_.attention_at_bottom) mid_attn = register_module("mid_attn", AttentionBlock(ch, config_.attention_heads, g));
    mid2 = register_module("mid2", ResBlock(ch, ch, emb, g));

    up_blocks = register_module("up_blocks", nn::ModuleList());
    upsamplers = register_module("upsamplers", nn::ModuleList());
    for (int level = levels - 1; level >= 0; --level) {
        const int out = width_ * config_.multipliers[level];
        for (int b = 0; b < config_.blocks_per_level + 1; ++b) {
            up_blocks->push_back(ResBlock(ch + skip_channels.back(), out, emb, g));
            skip_channels.pop_back();
            ch = out;
        }
        if (level > 0) upsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1)));
    }

    out_norm = register_module("out_norm", nn::GroupNorm(g, ch));
    out_conv = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(ch, kOutputChannels, 3).padding(1)));
    use_channels_last();
}

void DenoiserImpl::use_channels_last() {
    torch::NoGradGuard no_grad;
    for (auto& p : parameters())
        if (p.dim() == 4) p.set_data(p.data().contiguous(at::MemoryFormat::ChannelsLast));
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
    if (x.dim() != 4 || x.size(1) != kInputChannels)
        throw ShapeError("denoiser input must be (N, 8, H, W)");
    const int factor = config_.downsample_factor();
    if (x.size(2) % factor || x.size(3) % factor)
        throw ShapeError("spatial size must be divisible by " + std::to_string(factor));
    if (t.dim() != 1 || t.size(0) != x.size(0)) throw ShapeError("need one timestep per example");

    auto emb = time_mlp->forward(timestep_embedding(t, width_));
    auto h = stem(x.contiguous(at::MemoryFormat::ChannelsLast));
    std::vector<torch::Tensor> skips{h};
    const int levels = static_cast<int>(config_.multipliers.size());
    std::size_t block = 0;
    for (int level = 0; level < levels; ++level) {
        for (int b = 0; b < config_.blocks_per_level; ++b) {
            h = down_blocks[block++]->as<ResBlock>()->forward(h, emb);
            skips.push_back(h);
        }
        if (level + 1 < levels) {
            h = downsamplers[level]->as<nn::Conv2d>()->forward(h);
            skips.push_back(h);
        }
    }

    h = mid1(h, emb);
    if (mid_attn) h = mid_attn(h);
    h = mid2(h, emb);

    block = 0;
    std::size_t up = 0;
    for (int level = levels - 1; level >= 0; --level) {
        for (int b = 0; b < config_.blocks_per_level + 1; ++b) {
            h = torch::cat({h, skips.back()}, 1);
            skips.pop_back();
            h = up_blocks[block++]->as<ResBlock>()->forward(h, emb);
        }
        if (level > 0) {
            h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
            h = upsamplers[up++]->as<nn::Conv2d>()->forward(h);
        }
    }
    return out_conv(torch::silu(out_norm(h))).contiguous();
}

torch::Tensor denoise_predict(Denoiser& model, const torch::Tensor& x_t, const torch::Tensor& x_d,
                              const torch::Tensor& x_c, const torch::Tensor& x_m, int t) {
    auto batch = [](const torch::Tensor& v) { return v.dim() == 3 ? v.unsqueeze(0) : v; };
    DenoiserInput in{batch(x_t), batch(x_d), batch(x_c), batch(x_m)};
    auto x = in.assemble();
    torch::NoGradGuard no_grad;
    const bool was_training = model->is_training();
    model->eval();
    auto out = model->forward(x, torch::full({x.size(0)}, t, torch::kLong));
    if (was_training) model->train();
    return x_t.dim() == 3 ? out[0] : out;
}

}  // namespace hdr::diffusion
