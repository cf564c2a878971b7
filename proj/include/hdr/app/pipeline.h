#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hdr/app/config.h"
#include "hdr/diffusion/train.h"
#include "hdr/eval/classifier.h"
#include "hdr/eval/evaluate.h"

namespace hdr::app {

diffusion::NoiseSchedule build_schedule(const AppConfig& cfg);

// Pages from a corpus directory cut into filtered patches.
std::vector<corpus::PatchSample> load_corpus_patches(const std::filesystem::path& corpus_dir, int patch_size);

// n pairs; pair i degrades patches[i % patches.size()] with rng(seed, i). Equals build_dataset when n matches.
std::vector<degrade::DamagedPair> make_pairs(const std::vector<corpus::PatchSample>& patches,
                                             const degrade::MixRatios& mix, std::uint64_t seed, std::size_t n);

std::optional<diffusion::CPLossConfig> perceptual_config(const AppConfig& cfg, eval::CharClassifier& clf);

// Writes the command, effective config and its digest as JSON to `path`. No timestamps, so equal runs
// write equal records.
void write_run_record(const std::filesystem::path& path, const std::string& command, const AppConfig& cfg,
                      const nlohmann::json& extra = nlohmann::json::object());

// Trains a classifier into `path` unless a checkpoint for the same configuration already exists there.
eval::CharClassifier ensure_classifier(const AppConfig& cfg, const std::vector<corpus::PatchSample>& patches,
                                       const corpus::Alphabet& alphabet, const std::filesystem::path& path);

// Trains a denoiser in `dir`, resuming from the newest step checkpoint when one exists and skipping
// training when `dir/last.ckpt` is complete. Returns the final checkpoint path.
std::filesystem::path ensure_denoiser(const AppConfig& cfg, diffusion::PairSource data, const corpus::Alphabet& alphabet,
                                      eval::CharClassifier* clf, const std::filesystem::path& dir);

// The end-to-end toy study: a toy corpus split by page into training patches and held-out test pairs.
struct ToyStudy {
    std::vector<corpus::PatchSample> train_patches;
    std::vector<corpus::PatchSample> test_patches;
    std::vector<degrade::DamagedPair> test_pairs;
};

ToyStudy make_toy_study(const AppConfig& cfg, std::size_t test_patches);

struct ToyStudyResult {
    double classifier_heldout = 0.0;
    int alphabet_size = 0;
    eval::EvalReport with_cp;
    eval::EvalReport without_cp;
    std::filesystem::path with_cp_checkpoint;
    std::filesystem::path without_cp_checkpoint;
    std::filesystem::path classifier_checkpoint;
    ToyStudy study;
};

// Classifier, denoisers with and without the perceptual loss (same seeds and steps) and their evaluation on
// the held-out pairs. Every artifact lives in `work_dir` under a digest of the settings that produced it,
// so reruns reuse finished work and resume interrupted training.
ToyStudyResult run_toy_study(const AppConfig& cfg, const std::filesystem::path& work_dir,
                             std::size_t test_patches = 200);

}  // namespace hdr::app
