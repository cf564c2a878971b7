#include "hdr/diffusion/train.h"

#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "hdr/checkpoint.h"
#include "hdr/conditions/conditions.h"
#include "hdr/error.h"
#include "hdr/image_io.h"
#include "hdr/tensor.h"

namespace hdr::diffusion {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 1 && steps <= 0) throw ConfigError("epochs must be positive");
    if (lambda_cp < 0.0) throw ConfigError("lambda_cp must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (warmup_steps < 0 || final_lr_fraction < 0.0 || final_lr_fraction > 1.0) throw ConfigError("bad lr schedule");
}

long TrainConfig::total_steps(std::size_t dataset_size) const {
    if (steps > 0) return steps;
    return std::max<long>(1, (static_cast<long>(dataset_size) * epochs + batch_size - 1) / batch_size);
}

double TrainConfig::lr_at(long step, long total) const {
    if (step < warmup_steps) return lr * (step + 1) / warmup_steps;
    const long span = std::max<long>(1, total - warmup_steps);
    const double frac = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
    return lr * (1.0 - (1.0 - final_lr_fraction) * frac);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr", c.lr},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"weight_decay", c.weight_decay},
         {"warmup_steps", c.warmup_steps},
         {"final_lr_fraction", c.final_lr_fraction},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"steps", c.steps},
         {"lambda_cp", c.lambda_cp},
         {"grad_clip", c.grad_clip},
         {"noise_damaged", c.noise_damaged},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    c.final_lr_fraction = j.value("final_lr_fraction", d.final_lr_fraction);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.steps = j.value("steps", d.steps);
    c.lambda_cp = j.value("lambda_cp", d.lambda_cp);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.noise_damaged = j.value("noise_damaged", d.noise_damaged);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

void to_json(nlohmann::json& j, const DropoutConfig& c) {
    j = {{"p_only_damaged_null", c.p_only_damaged_null},
         {"p_content_mask_null", c.p_content_mask_null},
         {"p_all_null", c.p_all_null}};
}

void from_json(const nlohmann::json& j, DropoutConfig& c) {
    DropoutConfig d;
    c.p_only_damaged_null = j.value("p_only_damaged_null", d.p_only_damaged_null);
    c.p_content_mask_null = j.value("p_content_mask_null", d.p_content_mask_null);
    c.p_all_null = j.value("p_all_null", d.p_all_null);
}

nlohmann::json schedule_json(const NoiseSchedule& s) {
    return {{"T_max", s.T_max}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"betas", s.betas}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    if (j.contains("betas")) return schedule_from_betas(j.at("betas").get<std::vector<double>>());
    return make_schedule(j.at("T_max").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
}

ExampleBatch make_batch(const std::vector<const degrade::DamagedPair*>& pairs, const corpus::Alphabet& alphabet) {
    if (pairs.empty()) throw PreconditionError("empty batch");
    std::vector<const Image*> targets, damaged;
    std::vector<Image> content, mask;
    for (const auto* p : pairs) {
        targets.push_back(&p->target);
        damaged.push_back(&p->damaged);
        auto cond = conditions::build_conditions(p->damaged_chars, p->mask.mask, alphabet);
        content.push_back(std::move(cond.content));
        mask.push_back(std::move(cond.mask));
    }
    return {to_batch(targets), to_batch(damaged), to_batch(content), to_batch(mask, Range::Unit)};
}

PairSource PairSource::fixed(std::vector<degrade::DamagedPair> pairs) {
    if (pairs.empty()) throw PreconditionError("training needs at least one pair");
    PairSource s;
    s.pairs_ = std::move(pairs);
    return s;
}

PairSource PairSource::online(std::vector<corpus::PatchSample> patches, degrade::MixRatios mix) {
    if (patches.empty()) throw PreconditionError("training needs at least one patch");
    mix.validate();
    PairSource s;
    s.patches_ = std::move(patches);
    s.mix_ = mix;
    return s;
}

degrade::DamagedPair PairSource::draw(Rng& rng) const {
    if (!pairs_.empty()) return pairs_[uniform_int(rng, 0, static_cast<int>(pairs_.size()) - 1)];
    const int i = uniform_int(rng, 0, static_cast<int>(patches_.size()) - 1);
    const std::uint64_t seed = rng();
    return degrade::degrade_patch(patches_[i], mix_, seed, 0);
}

std::size_t PairSource::size() const { return pairs_.empty() ? patches_.size() : pairs_.size(); }

int PairSource::patch_size() const {
    return pairs_.empty() ? patches_.front().image.width() : pairs_.front().target.width();
}

Trainer::Trainer(DenoiserConfig model_cfg, NoiseSchedule schedule, TrainConfig train_cfg, DropoutConfig dropout_cfg,
                 std::optional<CPLossConfig> cp_cfg, const corpus::Alphabet& alphabet, PairSource data)
    : model_cfg_(std::move(model_cfg)),
      schedule_(std::move(schedule)),
      cfg_(train_cfg),
      dropout_(dropout_cfg),
      cp_(std::move(cp_cfg)),
      alphabet_(alphabet),
      data_(std::move(data)) {
    cfg_.validate();
    dropout_.validate();
    if (cfg_.lambda_cp > 0.0) {
        if (!cp_) throw ConfigError("lambda_cp > 0 needs a CPLoss backbone");
        cp_->validate();
    }
    torch::manual_seed(cfg_.seed);
    model_ = Denoiser(model_cfg_);
    opt_ = std::make_unique<torch::optim::AdamW>(
        model_->parameters(),
        torch::optim::AdamWOptions(cfg_.lr).betas({cfg_.beta1, cfg_.beta2}).weight_decay(cfg_.weight_decay));
    total_ = cfg_.total_steps(data_.size());
}

StepResult Trainer::evaluate_batch(const ExampleBatch& batch, const torch::Tensor& t, const torch::Tensor& eps,
                                   const ConditionBatch& cond, bool backward) {
    const auto& x0 = cfg_.noise_damaged ? batch.x_d : batch.target;
    auto x_t = forward_noise(x0, t, eps, schedule_);
    DenoiserInput in{x_t, cond.x_d, cond.x_c, cond.x_m};
    auto pred = model_->forward(in, t);
    auto l_diff = diffusion_loss(pred, batch.target);
    auto total = l_diff;
    StepResult r;
    if (cfg_.lambda_cp > 0.0) {
        auto l_cp = char_perceptual_loss(pred, batch.target, batch.x_m, *cp_);
        total = l_diff + cfg_.lambda_cp * l_cp;
        r.l_cp = l_cp.item<double>();
    }
    r.l_diff = l_diff.item<double>();
    r.total = total.item<double>();
    if (backward) total.backward();
    return r;
}

StepResult Trainer::step() {
    Rng rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(step_));
    std::vector<degrade::DamagedPair> pairs;
    pairs.reserve(cfg_.batch_size);
    for (int i = 0; i < cfg_.batch_size; ++i) pairs.push_back(data_.draw(rng));
    std::vector<const degrade::DamagedPair*> ptrs;
    for (const auto& p : pairs) ptrs.push_back(&p);
    auto batch = make_batch(ptrs, alphabet_);

    const long n = batch.target.size(0);
    std::vector<long> ts(n);
    for (auto& t : ts) t = uniform_int(rng, 0, schedule_.T_max - 1);
    auto t = torch::tensor(ts, torch::kLong);
    auto eps = torch::empty_like(batch.target);
    std::normal_distribution<float> normal;
    for (auto& v : std::span<float>(eps.data_ptr<float>(), eps.numel())) v = normal(rng);
    auto cond = apply_conditional_dropout({batch.x_d, batch.x_c, batch.x_m}, dropout_, rng);

    const double lr = cfg_.lr_at(step_, total_);
    for (auto& g : opt_->param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
    model_->train();
    opt_->zero_grad();
    auto r = evaluate_batch(batch, t, eps, cond, true);
    if (!std::isfinite(r.total)) {
        auto path = std::filesystem::path("diverged-step-" + std::to_string(step_ + 1) + ".ckpt");
        save(path);
        throw TrainingDiverged("non-finite loss at step " + std::to_string(step_ + 1) + "; state saved to " +
                               path.string());
    }
    if (cfg_.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.grad_clip);
    opt_->step();
    ++step_;
    r.step = step_;
    r.lr = lr;
    return r;
}

nlohmann::json Trainer::header() const {
    return {{"kind", "denoiser"},
            {"denoiser", model_cfg_},
            {"schedule", schedule_json(schedule_)},
            {"train", cfg_},
            {"dropout", dropout_},
            {"cp_loss", cp_ ? nlohmann::json{{"layer_ids", cp_->layer_ids}, {"weights", cp_->weights}} : nlohmann::json()},
            {"alphabet_size", alphabet_.size()},
            {"patch_size", data_.patch_size()},
            {"step", step_},
            {"total_steps", total_},
            {"seed", cfg_.seed}};
}

void Trainer::save(const std::filesystem::path& path) {
    torch::serialize::OutputArchive model, optim, root;
    model_->save(model);
    opt_->save(optim);
    root.write("model", model);
    root.write("optimizer", optim);
    save_checkpoint(path, header(), root);
}

void Trainer::resume(const std::filesystem::path& path) {
    auto data = load_checkpoint(path);
    const auto& h = data.header;
    if (h.value("kind", "") != "denoiser") throw ParseError(path.string() + " is not a denoiser checkpoint");
    if (h.at("denoiser") != nlohmann::json(model_cfg_)) throw ConfigError("checkpoint model config differs");
    if (h.at("seed").get<std::uint64_t>() != cfg_.seed) throw ConfigError("checkpoint seed differs");
    torch::serialize::InputArchive root, model, optim;
    data.load_archive(root);
    root.read("model", model);
    root.read("optimizer", optim);
    model_->load(model);
    model_->use_channels_last();
    opt_->load(optim);
    step_ = h.at("step").get<long>();
}

void Trainer::run(const std::filesystem::path& dir, const std::function<void(const StepResult&)>& on_step) {
    std::filesystem::create_directories(dir);
    const auto log_path = dir / "train_log.jsonl";
    // After a resume, drop log lines past the checkpoint so each step appears once.
    if (std::filesystem::exists(log_path)) {
        std::ifstream in(log_path);
        std::string kept, line;
        while (std::getline(in, line))
            if (!line.empty() && nlohmann::json::parse(line, nullptr, false).value("step", total_ + 1) <= step_)
                kept += line + '\n';
        in.close();
        std::ofstream(log_path, std::ios::trunc) << kept;
    }
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw IoError("cannot write " + log_path.string());
    const auto start = std::chrono::steady_clock::now();
    while (step_ < total_) {
        auto r = step();
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log << nlohmann::json{{"step", r.step}, {"L_diff", r.l_diff}, {"L_CP", r.l_cp}, {"lr", r.lr}, {"wall_time", wall}}.dump()
            << '\n';
        if (on_step) on_step(r);
        if (cfg_.checkpoint_every > 0 && r.step % cfg_.checkpoint_every == 0 && r.step < total_) {
            log.flush();
            save(dir / ("step-" + std::to_string(r.step) + ".ckpt"));
        }
    }
    log.flush();
    save(dir / "last.ckpt");
}

LoadedDenoiser load_denoiser(const std::filesystem::path& path) {
    auto data = load_checkpoint(path);
    if (data.header.value("kind", "") != "denoiser") throw ParseError(path.string() + " is not a denoiser checkpoint");
    LoadedDenoiser out;
    out.header = data.header;
    out.schedule = schedule_from_json(data.header.at("schedule"));
    out.model = Denoiser(data.header.at("denoiser").get<DenoiserConfig>());
    torch::serialize::InputArchive root, model;
    data.load_archive(root);
    root.read("model", model);
    out.model->load(model);
    out.model->use_channels_last();
    out.model->eval();
    auto bytes = io::read_file(path);
    out.digest = io::sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    return out;
}

}  // namespace hdr::diffusion
