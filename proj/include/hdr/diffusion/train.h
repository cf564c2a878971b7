#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hdr/corpus/alphabet.h"
#include "hdr/degrade/degrade.h"
#include "hdr/diffusion/denoiser.h"
#include "hdr/diffusion/dropout.h"
#include "hdr/diffusion/losses.h"
#include "hdr/diffusion/schedule.h"

namespace hdr::diffusion {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.95;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    int warmup_steps = 0;        // linear ramp before the linear decay
    double final_lr_fraction = 0.0;
    int batch_size = 8;
    int epochs = 1;
    long steps = 0;              // overrides epochs when positive
    double lambda_cp = 0.01;
    double grad_clip = 1.0;      // max global norm, <= 0 disables
    bool noise_damaged = false;  // noise x_d instead of x_target (comparison mode)
    std::uint64_t seed = 0;
    long checkpoint_every = 1000;

    void validate() const;
    // Steps for a dataset of `dataset_size` examples.
    long total_steps(std::size_t dataset_size) const;
    double lr_at(long step, long total) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const DropoutConfig& c);
void from_json(const nlohmann::json& j, DropoutConfig& c);
nlohmann::json schedule_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

// Tensors of a batch of pairs in diffusion range. x_m stays in {0, 1}.
struct ExampleBatch {
    torch::Tensor target;  // (N, 3, H, W)
    torch::Tensor x_d;     // (N, 3, H, W)
    torch::Tensor x_c;     // (N, 1, H, W)
    torch::Tensor x_m;     // (N, 1, H, W)
};
ExampleBatch make_batch(const std::vector<const degrade::DamagedPair*>& pairs, const corpus::Alphabet& alphabet);

// Training examples: either a fixed list of pairs or patches degraded afresh on every draw.
class PairSource {
public:
    static PairSource fixed(std::vector<degrade::DamagedPair> pairs);
    static PairSource online(std::vector<corpus::PatchSample> patches, degrade::MixRatios mix);

    degrade::DamagedPair draw(Rng& rng) const;
    std::size_t size() const;
    int patch_size() const;

private:
    std::vector<degrade::DamagedPair> pairs_;
    std::vector<corpus::PatchSample> patches_;
    degrade::MixRatios mix_;
};

struct StepResult {
    long step = 0;  // 1-based index of the step just taken
    double l_diff = 0.0;
    double l_cp = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Trainer {
public:
    Trainer(DenoiserConfig model_cfg, NoiseSchedule schedule, TrainConfig train_cfg, DropoutConfig dropout_cfg,
            std::optional<CPLossConfig> cp_cfg, const corpus::Alphabet& alphabet, PairSource data);

    // Randomness of step k depends only on (seed, k), so a resumed run needs nothing but the step counter.
    StepResult step();

    // Trains until `total_steps()`, writing checkpoints every `checkpoint_every` steps and a final one to
    // `dir/last.ckpt`, and appending one JSON line per step to `dir/train_log.jsonl`.
    void run(const std::filesystem::path& dir, const std::function<void(const StepResult&)>& on_step = {});

    void save(const std::filesystem::path& path);
    // Restores model, optimizer and step counter from a checkpoint written by `save`.
    void resume(const std::filesystem::path& path);

    // Loss terms and gradient for a fixed batch, without an optimizer step (for tests).
    StepResult evaluate_batch(const ExampleBatch& batch, const torch::Tensor& t, const torch::Tensor& eps,
                              const ConditionBatch& conditions, bool backward);

    Denoiser& model() { return model_; }
    long current_step() const { return step_; }
    long total_steps() const { return total_; }
    nlohmann::json header() const;

private:
    DenoiserConfig model_cfg_;
    NoiseSchedule schedule_;
    TrainConfig cfg_;
    DropoutConfig dropout_;
    std::optional<CPLossConfig> cp_;
    corpus::Alphabet alphabet_;
    PairSource data_;
    Denoiser model_{nullptr};
    std::unique_ptr<torch::optim::AdamW> opt_;
    long step_ = 0;
    long total_ = 0;
};

struct LoadedDenoiser {
    Denoiser model{nullptr};
    NoiseSchedule schedule;
    nlohmann::json header;
    std::string digest;  // sha256 of the checkpoint file
};

LoadedDenoiser load_denoiser(const std::filesystem::path& path);

}  // namespace hdr::diffusion
