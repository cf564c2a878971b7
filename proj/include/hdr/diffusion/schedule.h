#pragma once

#include <vector>

#include <torch/torch.h>

namespace hdr::diffusion {

struct NoiseSchedule {
    int T_max = 0;
    std::vector<double> betas;
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{i <= t} (1 - beta_i)
    double beta_start = 0.0;
    double beta_end = 0.0;

    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;
};

// Linearly spaced betas, endpoints included. Throws ConfigError outside 0 < start <= end < 1.
NoiseSchedule make_schedule(int T_max, double beta_start = 1e-4, double beta_end = 0.02);

// Explicit betas, for tests and for schedules read back from checkpoints.
NoiseSchedule schedule_from_betas(std::vector<double> betas);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Single-image form; t must lie in [0, T_max).
torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& schedule);
// Batched form with one timestep per example, t of shape (N).
torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& schedule);

}  // namespace hdr::diffusion
