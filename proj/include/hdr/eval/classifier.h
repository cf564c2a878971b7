#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hdr/corpus/alphabet.h"
#include "hdr/corpus/corpus.h"
#include "hdr/diffusion/losses.h"
#include "hdr/image.h"

namespace hdr::eval {

struct ClassifierConfig {
    int input_size = 32;
    std::vector<int> widths = {16, 32, 64};  // one conv stage per entry
    int epochs = 6;
    int batch_size = 64;
    double lr = 1e-3;
    int heldout_every = 10;  // every n-th patch (by index) is held out
    int max_shift = 3;       // augmentation, pixels at input resolution
    double contrast_min = 0.6;
    double contrast_max = 1.2;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

class CharNetImpl : public torch::nn::Module {
public:
    CharNetImpl(const std::vector<int>& widths, int classes);

    // x: (N, 3, S, S) in [0, 1]; normalised internally.
    torch::Tensor forward(const torch::Tensor& x);
    // Output of every conv stage (before pooling), for any input size.
    std::vector<torch::Tensor> stages(const torch::Tensor& x);
    int stage_count() const { return static_cast<int>(trunk->size()); }

private:
    torch::nn::ModuleList trunk{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(CharNet);

// Character crop: padded to a square with the median border colour, resized to side x side.
Image prepare_crop(const Image& source, const Box& box, int side);

class CharClassifier {
public:
    CharClassifier(ClassifierConfig config, std::vector<std::string> labels);

    const ClassifierConfig& config() const { return config_; }
    const std::vector<std::string>& labels() const { return labels_; }
    CharNet& net() { return net_; }

    // Logits for prepared crops (N, 3, S, S) in [0, 1], inference mode.
    torch::Tensor logits(const torch::Tensor& crops);
    // Argmax with ties broken toward the lowest class index.
    static int argmax(const float* row, int n);
    std::vector<int> predict(const torch::Tensor& crops);
    // Classifies the character inside `box` of `image`.
    std::string classify(const Image& image, const Box& box);
    std::vector<std::string> classify(const std::vector<std::pair<const Image*, Box>>& items);

    double heldout_accuracy = 0.0;

    // `extra` keys are merged into the checkpoint header.
    void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object());
    static CharClassifier load(const std::filesystem::path& path);

private:
    ClassifierConfig config_;
    std::vector<std::string> labels_;
    CharNet net_{nullptr};
};

struct CropSet {
    torch::Tensor images;  // (N, 3, S, S) uint8
    torch::Tensor labels;  // (N) int64
    std::vector<std::size_t> patch_index;
};

// Crops every annotated character of the given patches. Labels outside the alphabet are skipped with a warning.
CropSet collect_crops(const std::vector<corpus::PatchSample>& patches, const std::vector<std::size_t>& indices,
                      const corpus::Alphabet& alphabet, int side);

struct ClassifierSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};
ClassifierSplit split_patches(std::size_t count, int heldout_every);

// Trains on crops of the non-held-out patches and records held-out accuracy. Deterministic in config.seed.
// Throws PreconditionError when fewer than two classes occur.
CharClassifier train_char_classifier(const std::vector<corpus::PatchSample>& patches,
                                     const corpus::Alphabet& alphabet, const ClassifierConfig& config);

double accuracy(CharClassifier& clf, const CropSet& crops);

// Classifier trunk as a frozen perceptual backbone. Inputs are upscaled by `upscale` first so that
// glyph strokes reach the scale the classifier was trained on.
class ClassifierBackbone : public diffusion::PerceptualBackbone {
public:
    ClassifierBackbone(CharNet net, double upscale);
    std::vector<torch::Tensor> features(const torch::Tensor& images) override;
    int stage_count() const override { return net_->stage_count(); }

private:
    CharNet net_;
    double upscale_;
};

std::shared_ptr<ClassifierBackbone> make_backbone(CharClassifier& clf, double upscale = 2.0);

}  // namespace hdr::eval
