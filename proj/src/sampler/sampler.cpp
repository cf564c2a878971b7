#include "hdr/sampler/sampler.h"

#include <cmath>
#include <span>

#include "hdr/diffusion/dropout.h"
#include "hdr/error.h"
#include "hdr/random.h"

namespace hdr::sampler {

void GuidanceScales::validate() const {
    if (!std::isfinite(s_d) || !std::isfinite(s_cm) || s_d < 0.0 || s_cm < 0.0)
        throw ConfigError("guidance scales must be finite and non-negative");
}

std::string_view to_string(Solver s) { return s == Solver::MultistepFast ? "multistep_fast" : "ancestral"; }

Solver parse_solver(std::string_view name) {
    if (name == "multistep_fast") return Solver::MultistepFast;
    if (name == "ancestral") return Solver::Ancestral;
    throw ConfigError("unknown solver: " + std::string(name));
}

void SamplerConfig::validate(int T_max) const {
    if (steps < 1) throw ConfigError("sampler steps must be >= 1");
    if (steps > T_max)
        throw ConfigError("sampler steps (" + std::to_string(steps) + ") exceed T_max (" + std::to_string(T_max) + ")");
}

void to_json(nlohmann::json& j, const GuidanceScales& s) { j = {{"s_d", s.s_d}, {"s_cm", s.s_cm}}; }
void from_json(const nlohmann::json& j, GuidanceScales& s) {
    GuidanceScales d;
    s.s_d = j.value("s_d", d.s_d);
    s.s_cm = j.value("s_cm", d.s_cm);
}
void to_json(nlohmann::json& j, const SamplerConfig& s) {
    j = {{"solver", std::string(to_string(s.solver))}, {"steps", s.steps}, {"seed", s.seed}};
}
void from_json(const nlohmann::json& j, SamplerConfig& s) {
    SamplerConfig d;
    s.solver = parse_solver(j.value("solver", std::string(to_string(d.solver))));
    s.steps = j.value("steps", d.steps);
    s.seed = j.value("seed", d.seed);
}

ModelFn model_fn(diffusion::Denoiser model) {
    return [model](const torch::Tensor& x, const torch::Tensor& t) mutable {
        torch::NoGradGuard no_grad;
        model->eval();
        return model->forward(x, t);
    };
}

torch::Tensor combine_guidance(const GuidanceTerms& terms, const GuidanceScales& scales) {
    const auto a = static_cast<float>(1.0 - scales.s_d);
    const auto b = static_cast<float>(scales.s_d - scales.s_cm);
    const auto c = static_cast<float>(scales.s_cm);
    return terms.uncond * a + terms.damaged_only * b + terms.full * c;
}

GuidanceTerms guidance_terms(const ModelFn& model, const torch::Tensor& x_t, const torch::Tensor& x_d,
                             const torch::Tensor& x_c, const torch::Tensor& x_m, const torch::Tensor& t) {
    auto null = diffusion::null_condition_batch(x_t.size(0), x_t.size(2), x_t.size(3));
    using diffusion::DenoiserInput;
    return {model(DenoiserInput{x_t, null.x_d, null.x_c, null.x_m}.assemble(), t),
            model(DenoiserInput{x_t, x_d, null.x_c, null.x_m}.assemble(), t),
            model(DenoiserInput{x_t, x_d, x_c, x_m}.assemble(), t)};
}

torch::Tensor guided_prediction(const ModelFn& model, const torch::Tensor& x_t, const torch::Tensor& x_d,
                                const torch::Tensor& x_c, const torch::Tensor& x_m, int t,
                                const GuidanceScales& scales) {
    scales.validate();
    auto tt = torch::full({x_t.size(0)}, t, torch::kLong);
    return combine_guidance(guidance_terms(model, x_t, x_d, x_c, x_m, tt), scales);
}

std::vector<int> sampling_timesteps(int T_max, int steps) {
    if (steps < 1 || steps > T_max) throw ConfigError("steps must lie in [1, T_max]");
    std::vector<int> out;
    if (steps == 1) return {T_max - 1};
    for (int i = 0; i < steps; ++i)
        out.push_back(static_cast<int>(std::lround((T_max - 1) * (1.0 - static_cast<double>(i) / (steps - 1)))));
    return out;
}

torch::Tensor seeded_normal(std::vector<long> shape, std::uint64_t seed, std::uint64_t stream) {
    auto t = torch::empty(shape, torch::kFloat32);
    Rng rng = make_rng(seed, stream);
    std::normal_distribution<float> normal;
    for (auto& v : std::span<float>(t.data_ptr<float>(), t.numel())) v = normal(rng);
    return t;
}

torch::Tensor batch_normal(const std::vector<long>& shape, const std::vector<std::uint64_t>& seeds, std::uint64_t stream) {
    if (shape.empty() || shape[0] != static_cast<long>(seeds.size())) throw ShapeError("need one seed per example");
    std::vector<long> one(shape.begin() + 1, shape.end());
    std::vector<torch::Tensor> parts;
    for (auto s : seeds) parts.push_back(seeded_normal(one, s, stream));
    return torch::stack(parts);
}

namespace {

torch::Tensor predict_clipped(const ModelFn& model, const torch::Tensor& x, const torch::Tensor& x_d,
                              const torch::Tensor& x_c, const torch::Tensor& x_m, int t, const GuidanceScales& s) {
    return guided_prediction(model, x, x_d, x_c, x_m, t, s).clamp(-1.0f, 1.0f);
}

// DPM-Solver++(2M): data-prediction multistep solver in log-SNR time. The first update is first order;
// the result is the data prediction at the final evaluation time.
torch::Tensor solve_multistep(const ModelFn& model, torch::Tensor x, const torch::Tensor& x_d, const torch::Tensor& x_c,
                              const torch::Tensor& x_m, const GuidanceScales& s, const std::vector<int>& ts,
                              const diffusion::NoiseSchedule& sch) {
    auto alpha = [&](int t) { return sch.sqrt_alpha_bar(t); };
    auto sigma = [&](int t) { return sch.sqrt_one_minus_alpha_bar(t); };
    auto lambda = [&](int t) { return std::log(alpha(t)) - std::log(sigma(t)); };

    torch::Tensor prev_x0 = predict_clipped(model, x, x_d, x_c, x_m, ts[0], s);
    torch::Tensor older_x0;
    double prev_h = 0.0;
    for (std::size_t i = 1; i < ts.size(); ++i) {
        const int t_prev = ts[i - 1], t = ts[i];
        const double h = lambda(t) - lambda(t_prev);
        torch::Tensor d = prev_x0;
        if (i >= 2) {
            const double r = prev_h / h;
            d = prev_x0 * static_cast<float>(1.0 + 1.0 / (2.0 * r)) - older_x0 * static_cast<float>(1.0 / (2.0 * r));
        }
        x = x * static_cast<float>(sigma(t) / sigma(t_prev)) - d * static_cast<float>(alpha(t) * std::expm1(-h));
        older_x0 = prev_x0;
        prev_x0 = predict_clipped(model, x, x_d, x_c, x_m, t, s);
        prev_h = h;
    }
    return prev_x0;
}

// Ancestral sampling through the posterior q(x_s | x_t, x0_hat) between consecutive evaluation times.
torch::Tensor solve_ancestral(const ModelFn& model, torch::Tensor x, const torch::Tensor& x_d, const torch::Tensor& x_c,
                              const torch::Tensor& x_m, const GuidanceScales& s, const std::vector<int>& ts,
                              const diffusion::NoiseSchedule& sch, const std::vector<std::uint64_t>& seeds) {
    torch::Tensor x0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        x0 = predict_clipped(model, x, x_d, x_c, x_m, t, s);
        if (i + 1 == ts.size()) break;
        const int sp = ts[i + 1];
        const double abar_t = sch.alpha_bars[t], abar_s = sch.alpha_bars[sp];
        const double beta_ts = 1.0 - abar_t / abar_s;
        const double c0 = std::sqrt(abar_s) * beta_ts / (1.0 - abar_t);
        const double c1 = std::sqrt(abar_t / abar_s) * (1.0 - abar_s) / (1.0 - abar_t);
        const double var = (1.0 - abar_s) / (1.0 - abar_t) * beta_ts;
        auto z = batch_normal(x.sizes().vec(), seeds, i + 1);
        x = x0 * static_cast<float>(c0) + x * static_cast<float>(c1) + z * static_cast<float>(std::sqrt(var));
    }
    return x0;
}

}  // namespace

torch::Tensor sample_repair(const ModelFn& model, const torch::Tensor& x_d, const torch::Tensor& x_c,
                            const torch::Tensor& x_m, const GuidanceScales& scales, const SamplerConfig& cfg,
                            const diffusion::NoiseSchedule& schedule, std::vector<std::uint64_t> example_seeds) {
    scales.validate();
    const int steps = cfg.solver == Solver::Ancestral && cfg.steps <= 0 ? schedule.T_max : cfg.steps;
    SamplerConfig c = cfg;
    c.steps = steps;
    c.validate(schedule.T_max);
    // Shape errors surface here, before any network call.
    diffusion::DenoiserInput{x_d, x_d, x_c, x_m}.assemble();

    auto ts = sampling_timesteps(schedule.T_max, steps);
    if (example_seeds.empty())
        for (long i = 0; i < x_d.size(0); ++i) example_seeds.push_back(mix_seed(cfg.seed, i));
    auto x = batch_normal(x_d.sizes().vec(), example_seeds, 0);
    auto x0 = cfg.solver == Solver::MultistepFast
                  ? solve_multistep(model, x, x_d, x_c, x_m, scales, ts, schedule)
                  : solve_ancestral(model, x, x_d, x_c, x_m, scales, ts, schedule, example_seeds);
    return (x0.clamp(-1.0f, 1.0f) + 1.0f) * 0.5f;
}

}  // namespace hdr::sampler
