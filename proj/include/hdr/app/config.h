#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hdr/corpus/corpus.h"
#include "hdr/degrade/degrade.h"
#include "hdr/diffusion/denoiser.h"
#include "hdr/diffusion/dropout.h"
#include "hdr/diffusion/train.h"
#include "hdr/eval/classifier.h"
#include "hdr/sampler/sampler.h"

namespace hdr::app {

struct ScheduleConfig {
    int T_max = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct PerceptualConfig {
    double upscale = 2.0;         // patch upscaling before the classifier trunk
    std::vector<double> weights;  // per trunk stage; empty means equal weights
};

// Dataset building for the degrade command.
struct DatasetConfig {
    std::uint64_t seed = 1;
    long n = 0;  // pairs to generate; 0 means one per patch
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    int workers = 1;
    int queue_timeout_s = 120;
};

// Every tunable of the pipeline. The config file mirrors this layout key for key; values missing from
// the file keep their defaults and command-line flags override both.
struct AppConfig {
    corpus::ToyCorpusConfig corpus;
    degrade::MixRatios mix;
    DatasetConfig dataset;
    diffusion::DenoiserConfig denoiser;
    ScheduleConfig schedule;
    diffusion::TrainConfig train;
    diffusion::DropoutConfig dropout;
    PerceptualConfig perceptual;
    eval::ClassifierConfig classifier;
    sampler::GuidanceScales scales;
    sampler::SamplerConfig sampler;
    ServiceConfig service;

    nlohmann::json to_json() const;
    // Applies `patch` on top of `base`. Unknown keys are a ConfigError naming the key.
    static AppConfig from_json(const nlohmann::json& patch, const AppConfig& base = {});
    static AppConfig load(const std::filesystem::path& path, const AppConfig& base = {});

    // Desk-scale settings: width-32 denoiser, 200-step schedule, shorter training.
    static AppConfig toy();

    void validate() const;
    // sha256 of the canonical JSON form.
    std::string digest() const;
};

// "default" or "toy".
AppConfig preset(std::string_view name);

// Applies "section.key=value" assignments in order. The value is read as JSON when it parses and as a
// string otherwise, so `--set sampler.solver=ancestral` needs no quotes.
AppConfig apply_overrides(const AppConfig& base, const std::vector<std::string>& assignments);

}  // namespace hdr::app
