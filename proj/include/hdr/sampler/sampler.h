#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hdr/diffusion/denoiser.h"
#include "hdr/diffusion/schedule.h"

namespace hdr::sampler {

struct GuidanceScales {
    double s_d = 1.2;
    double s_cm = 1.5;

    void validate() const;
};

enum class Solver { MultistepFast, Ancestral };
std::string_view to_string(Solver s);
Solver parse_solver(std::string_view name);

struct SamplerConfig {
    Solver solver = Solver::MultistepFast;
    int steps = 20;
    std::uint64_t seed = 0;

    void validate(int T_max) const;
};

void to_json(nlohmann::json& j, const GuidanceScales& s);
void from_json(const nlohmann::json& j, GuidanceScales& s);
void to_json(nlohmann::json& j, const SamplerConfig& s);
void from_json(const nlohmann::json& j, SamplerConfig& s);

// One denoiser evaluation: x (N, 8, H, W), t (N) -> (N, 3, H, W). Lets tests substitute closed-form models.
using ModelFn = std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& t)>;
ModelFn model_fn(diffusion::Denoiser model);

// Model outputs under the three conditioning sets.
struct GuidanceTerms {
    torch::Tensor uncond;        // F(x_t; null, null, null)
    torch::Tensor damaged_only;  // F(x_t; x_d, null, null)
    torch::Tensor full;          // F(x_t; x_d, x_c, x_m)
};

// (1 - s_d) u + (s_d - s_cm) d + s_cm f, which equals u + s_d (d - u) + s_cm (f - d) and reduces
// exactly to f at (1, 1) and to u at (0, 0).
torch::Tensor combine_guidance(const GuidanceTerms& terms, const GuidanceScales& scales);

GuidanceTerms guidance_terms(const ModelFn& model, const torch::Tensor& x_t, const torch::Tensor& x_d,
                             const torch::Tensor& x_c, const torch::Tensor& x_m, const torch::Tensor& t);

// Three model evaluations combined by combine_guidance. Inputs in diffusion range, batched.
torch::Tensor guided_prediction(const ModelFn& model, const torch::Tensor& x_t, const torch::Tensor& x_d,
                                const torch::Tensor& x_c, const torch::Tensor& x_m, int t,
                                const GuidanceScales& scales);

// Evaluation times for `steps` solver steps: uniform from T_max - 1 down to 0, endpoints included, rounded.
std::vector<int> sampling_timesteps(int T_max, int steps);

// x_d (N, 3, H, W) and x_c (N, 1, H, W) in [-1, 1], x_m (N, 1, H, W) in {0, 1}.
// Returns repaired images in [0, 1]. The noise of example i is drawn from example_seeds[i], so a result does
// not depend on which other examples share its batch. Without explicit seeds, example i uses
// mix_seed(cfg.seed, i).
torch::Tensor sample_repair(const ModelFn& model, const torch::Tensor& x_d, const torch::Tensor& x_c,
                            const torch::Tensor& x_m, const GuidanceScales& scales, const SamplerConfig& cfg,
                            const diffusion::NoiseSchedule& schedule,
                            std::vector<std::uint64_t> example_seeds = {});

// Standard-normal tensor drawn from our own generator, so results do not depend on torch's global RNG.
torch::Tensor seeded_normal(std::vector<long> shape, std::uint64_t seed, std::uint64_t stream);
// (N, ...) noise where example i comes from seeded_normal(..., seeds[i], stream).
torch::Tensor batch_normal(const std::vector<long>& shape, const std::vector<std::uint64_t>& seeds, std::uint64_t stream);

}  // namespace hdr::sampler
