#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hdr/corpus/alphabet.h"
#include "hdr/degrade/degrade.h"
#include "hdr/eval/classifier.h"
#include "hdr/eval/metrics.h"
#include "hdr/sampler/sampler.h"

namespace hdr::eval {

struct KindStats {
    long pairs = 0;
    RecAccCount chars;
};

struct EvalReport {
    std::optional<double> rec_acc;
    std::optional<double> damaged_rec_acc;  // same classifier on the unrepaired damaged images
    std::optional<double> fid;
    std::optional<double> lpips;
    bool proxy_metrics = true;
    std::map<std::string, KindStats> per_kind;
    long n = 0;
    long characters = 0;
    std::string config_digest;

    nlohmann::json to_json() const;
};

struct EvalOptions {
    sampler::GuidanceScales scales;
    sampler::SamplerConfig sampler;
    int batch_size = 16;
    bool distribution_metrics = true;
    std::string model_digest;  // folded into the report's config digest
};

struct EvalRun {
    EvalReport report;
    std::vector<Image> repaired;    // raw sampler outputs
    std::vector<Image> composites;  // after region replacement
};

// Repairs every pair (example i seeded with mix_seed(sampler.seed, i)), composites with the target, scores
// Rec-ACC per degradation kind and, when enabled, proxy FID/LPIPS on the classifier trunk.
EvalRun evaluate_run(const sampler::ModelFn& model, const diffusion::NoiseSchedule& schedule,
                     const std::vector<degrade::DamagedPair>& pairs, const corpus::Alphabet& alphabet,
                     CharClassifier& clf, const EvalOptions& options);

// Builds the report from finished repairs; evaluate_run calls this after sampling.
EvalReport score_repairs(const std::vector<Image>& composites, const std::vector<degrade::DamagedPair>& pairs,
                         CharClassifier& clf, const EvalOptions& options);

void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace hdr::eval
