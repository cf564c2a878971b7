#include "hdr/diffusion/schedule.h"

#include <cmath>
#include <string>

#include "hdr/error.h"

namespace hdr::diffusion {

double NoiseSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bars.at(t)); }
double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bars.at(t)); }

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule needs at least one step");
    NoiseSchedule s;
    s.T_max = static_cast<int>(betas.size());
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta outside (0, 1): " + std::to_string(b));
        prod *= 1.0 - b;
        s.alphas.push_back(1.0 - b);
        s.alpha_bars.push_back(prod);
    }
    s.beta_start = betas.front();
    s.beta_end = betas.back();
    s.betas = std::move(betas);
    return s;
}

NoiseSchedule make_schedule(int T_max, double beta_start, double beta_end) {
    if (T_max < 1) throw ConfigError("T_max must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("beta range must satisfy 0 < start <= end < 1");
    std::vector<double> betas(T_max);
    for (int i = 0; i < T_max; ++i)
        betas[i] = T_max == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T_max - 1);
    return schedule_from_betas(std::move(betas));
}

torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
    if (t < 0 || t >= schedule.T_max)
        throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.T_max) + ")");
    if (!x0.sizes().equals(eps.sizes())) throw ShapeError("x0 and eps differ in shape");
    return x0 * schedule.sqrt_alpha_bar(t) + eps * schedule.sqrt_one_minus_alpha_bar(t);
}

torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& schedule) {
    if (!x0.sizes().equals(eps.sizes())) throw ShapeError("x0 and eps differ in shape");
    if (t.dim() != 1 || t.size(0) != x0.size(0)) throw ShapeError("need one timestep per example");
    auto tl = t.to(torch::kLong);
    if (tl.min().item<long>() < 0 || tl.max().item<long>() >= schedule.T_max)
        throw ConfigError("timestep outside [0, T_max)");
    // Both coefficients in double: 1 - abar near t = 0 loses most of its digits in float.
    auto abar = torch::tensor(schedule.alpha_bars, torch::kFloat64).index_select(0, tl);
    std::vector<long> shape(x0.dim(), 1);
    shape[0] = x0.size(0);
    auto signal = abar.sqrt().to(x0.scalar_type()).view(shape);
    auto noise = (1.0 - abar).sqrt().to(x0.scalar_type()).view(shape);
    return x0 * signal + eps * noise;
}

}  // namespace hdr::diffusion
