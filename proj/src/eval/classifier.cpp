#include "hdr/eval/classifier.h"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "hdr/checkpoint.h"
#include "hdr/error.h"
#include "hdr/random.h"
#include "hdr/tensor.h"

namespace hdr::eval {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void ClassifierConfig::validate() const {
    if (input_size < 8) throw ConfigError("classifier input_size must be >= 8");
    if (widths.empty()) throw ConfigError("classifier needs at least one stage");
    if (epochs < 1 || batch_size < 1 || lr <= 0.0) throw ConfigError("classifier epochs, batch_size and lr must be positive");
    if (heldout_every < 2) throw ConfigError("heldout_every must be >= 2");
    if (contrast_min <= 0.0 || contrast_min > contrast_max) throw ConfigError("bad contrast range");
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
    j = {{"input_size", c.input_size}, {"widths", c.widths},       {"epochs", c.epochs},
         {"batch_size", c.batch_size}, {"lr", c.lr},               {"heldout_every", c.heldout_every},
         {"max_shift", c.max_shift},   {"contrast_min", c.contrast_min}, {"contrast_max", c.contrast_max},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
    ClassifierConfig d;
    c.input_size = j.value("input_size", d.input_size);
    c.widths = j.value("widths", d.widths);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.heldout_every = j.value("heldout_every", d.heldout_every);
    c.max_shift = j.value("max_shift", d.max_shift);
    c.contrast_min = j.value("contrast_min", d.contrast_min);
    c.contrast_max = j.value("contrast_max", d.contrast_max);
    c.seed = j.value("seed", d.seed);
}

CharNetImpl::CharNetImpl(const std::vector<int>& widths, int classes) {
    trunk = register_module("trunk", nn::ModuleList());
    int in = 3;
    for (int w : widths) {
        trunk->push_back(nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, w, 3).padding(1).bias(false)),
                                        nn::BatchNorm2d(w), nn::ReLU(),
                                        nn::Conv2d(nn::Conv2dOptions(w, w, 3).padding(1).bias(false)),
                                        nn::BatchNorm2d(w), nn::ReLU()));
        in = w;
    }
    head = register_module("head", nn::Linear(in, classes));
}

std::vector<torch::Tensor> CharNetImpl::stages(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto h = (x - 0.5f) / 0.25f;
    for (std::size_t i = 0; i < trunk->size(); ++i) {
        if (i > 0) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
        h = trunk[i]->as<nn::Sequential>()->forward(h);
        out.push_back(h);
    }
    return out;
}

torch::Tensor CharNetImpl::forward(const torch::Tensor& x) {
    auto h = stages(x).back();
    return head(h.mean({2, 3}));
}

namespace {

float median(std::vector<float>& v) {
    auto mid = v.begin() + v.size() / 2;
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace

Image prepare_crop(const Image& source, const Box& box, int side) {
    Box b = box.clipped(source.width(), source.height());
    if (b.empty()) throw PreconditionError("character box lies outside the image");
    Image crop = source.channels() == 3 ? source.crop(b) : source.crop(b).to_rgb();

    std::array<float, 3> fill{};
    for (int c = 0; c < 3; ++c) {
        std::vector<float> border;
        for (int x = 0; x < crop.width(); ++x) {
            border.push_back(crop.at(0, x, c));
            border.push_back(crop.at(crop.height() - 1, x, c));
        }
        for (int y = 0; y < crop.height(); ++y) {
            border.push_back(crop.at(y, 0, c));
            border.push_back(crop.at(y, crop.width() - 1, c));
        }
        fill[c] = median(border);
    }
    const int n = std::max(crop.width(), crop.height());
    Image square(n, n, 3);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) square.at(y, x, c) = fill[c];
    square.paste(crop, (n - crop.width()) / 2, (n - crop.height()) / 2);
    if (n == side) return square;

    auto t = to_tensor(square, Range::Unit).unsqueeze(0);
    t = F::interpolate(t, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{side, side})
                              .mode(torch::kBilinear)
                              .align_corners(false)
                              .antialias(n > side));
    return to_image(t, Range::Unit);
}

CharClassifier::CharClassifier(ClassifierConfig config, std::vector<std::string> labels)
    : config_(std::move(config)), labels_(std::move(labels)) {
    config_.validate();
    if (labels_.size() < 2) throw PreconditionError("classifier needs at least two classes");
    torch::manual_seed(config_.seed);
    net_ = CharNet(config_.widths, static_cast<int>(labels_.size()));
}

torch::Tensor CharClassifier::logits(const torch::Tensor& crops) {
    torch::NoGradGuard no_grad;
    net_->eval();
    return net_->forward(crops);
}

int CharClassifier::argmax(const float* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

std::vector<int> CharClassifier::predict(const torch::Tensor& crops) {
    std::vector<int> out;
    const long chunk = 256;
    for (long s = 0; s < crops.size(0); s += chunk) {
        auto l = logits(crops.slice(0, s, std::min(crops.size(0), s + chunk))).contiguous();
        const int n = static_cast<int>(l.size(1));
        for (long i = 0; i < l.size(0); ++i) out.push_back(argmax(l.data_ptr<float>() + i * n, n));
    }
    return out;
}

std::string CharClassifier::classify(const Image& image, const Box& box) {
    return classify(std::vector<std::pair<const Image*, Box>>{{&image, box}}).front();
}

std::vector<std::string> CharClassifier::classify(const std::vector<std::pair<const Image*, Box>>& items) {
    if (items.empty()) return {};
    std::vector<Image> crops;
    crops.reserve(items.size());
    for (const auto& [img, box] : items) crops.push_back(prepare_crop(*img, box, config_.input_size));
    std::vector<std::string> out;
    for (int k : predict(to_batch(crops, Range::Unit))) out.push_back(labels_[k]);
    return out;
}

void CharClassifier::save(const std::filesystem::path& path, const nlohmann::json& extra) {
    torch::serialize::OutputArchive model;
    net_->save(model);
    torch::serialize::OutputArchive root;
    root.write("model", model);
    nlohmann::json header = {{"kind", "char_classifier"},
                             {"config", config_},
                             {"labels", labels_},
                             {"heldout_accuracy", heldout_accuracy}};
    header.update(extra);
    save_checkpoint(path, header, root);
}

CharClassifier CharClassifier::load(const std::filesystem::path& path) {
    auto data = load_checkpoint(path);
    if (data.header.value("kind", "") != "char_classifier")
        throw ParseError(path.string() + " is not a classifier checkpoint");
    CharClassifier clf(data.header.at("config").get<ClassifierConfig>(),
                       data.header.at("labels").get<std::vector<std::string>>());
    clf.heldout_accuracy = data.header.value("heldout_accuracy", 0.0);
    torch::serialize::InputArchive root, model;
    data.load_archive(root);
    root.read("model", model);
    clf.net_->load(model);
    clf.net_->eval();
    return clf;
}

ClassifierSplit split_patches(std::size_t count, int heldout_every) {
    ClassifierSplit s;
    for (std::size_t i = 0; i < count; ++i)
        (i % heldout_every == static_cast<std::size_t>(heldout_every - 1) ? s.heldout : s.train).push_back(i);
    return s;
}

CropSet collect_crops(const std::vector<corpus::PatchSample>& patches, const std::vector<std::size_t>& indices,
                      const corpus::Alphabet& alphabet, int side) {
    std::vector<Image> crops;
    std::vector<long> labels;
    CropSet out;
    for (std::size_t i : indices) {
        for (const auto& a : patches.at(i).annotations) {
            auto k = alphabet.index_of(a.label);
            if (!k) {
                spdlog::warn("patch {}: label '{}' not in alphabet, crop skipped", i, a.label);
                continue;
            }
            crops.push_back(prepare_crop(patches[i].image, a.bbox, side));
            labels.push_back(*k);
            out.patch_index.push_back(i);
        }
    }
    if (crops.empty()) {
        out.images = torch::empty({0, 3, side, side}, torch::kUInt8);
        out.labels = torch::empty({0}, torch::kLong);
        return out;
    }
    out.images = (to_batch(crops, Range::Unit) * 255.0f).round().clamp(0, 255).to(torch::kUInt8);
    out.labels = torch::tensor(labels, torch::kLong);
    return out;
}

double accuracy(CharClassifier& clf, const CropSet& crops) {
    if (crops.labels.size(0) == 0) return 0.0;
    auto pred = clf.predict(crops.images.to(torch::kFloat32) / 255.0f);
    auto labels = crops.labels.accessor<long, 1>();
    long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    return static_cast<double>(correct) / pred.size();
}

namespace {

// Random integer shift with edge replication plus a contrast change about the crop mean.
torch::Tensor augment(const torch::Tensor& batch, const ClassifierConfig& cfg, Rng& rng) {
    const long n = batch.size(0), s = batch.size(2);
    const int m = cfg.max_shift;
    auto padded = m > 0 ? F::pad(batch, F::PadFuncOptions({m, m, m, m}).mode(torch::kReplicate)) : batch;
    std::vector<torch::Tensor> out;
    out.reserve(n);
    for (long i = 0; i < n; ++i) {
        const int dx = m > 0 ? uniform_int(rng, -m, m) : 0;
        const int dy = m > 0 ? uniform_int(rng, -m, m) : 0;
        auto img = padded[i].slice(1, m + dy, m + dy + s).slice(2, m + dx, m + dx + s);
        const float c = static_cast<float>(uniform(rng, cfg.contrast_min, cfg.contrast_max));
        auto mean = img.mean();
        out.push_back(((img - mean) * c + mean).clamp(0.0f, 1.0f));
    }
    return torch::stack(out);
}

}  // namespace

CharClassifier train_char_classifier(const std::vector<corpus::PatchSample>& patches,
                                     const corpus::Alphabet& alphabet, const ClassifierConfig& config) {
    config.validate();
    auto split = split_patches(patches.size(), config.heldout_every);
    auto train = collect_crops(patches, split.train, alphabet, config.input_size);
    auto held = collect_crops(patches, split.heldout, alphabet, config.input_size);

    auto present = std::get<0>(at::_unique(train.labels));
    if (present.size(0) < 2) throw PreconditionError("classifier training needs at least two classes");

    CharClassifier clf(config, alphabet.labels());
    auto& net = clf.net();
    torch::optim::AdamW opt(net->parameters(), torch::optim::AdamWOptions(config.lr).weight_decay(1e-4));

    const long n = train.labels.size(0);
    const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const long total = steps_per_epoch * config.epochs;
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng = make_rng(config.seed, epoch);
        std::vector<long> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        auto perm = torch::tensor(order, torch::kLong);
        net->train();
        double loss_sum = 0.0;
        for (long b = 0; b < steps_per_epoch; ++b, ++step) {
            auto idx = perm.slice(0, b * config.batch_size, std::min(n, (b + 1) * config.batch_size));
            auto x = augment(train.images.index_select(0, idx).to(torch::kFloat32) / 255.0f, config, rng);
            auto y = train.labels.index_select(0, idx);
            // cosine decay to 5% of the base rate
            const double lr = config.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * step / total)));
            for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
            opt.zero_grad();
            auto loss = F::cross_entropy(net->forward(x), y);
            loss.backward();
            opt.step();
            loss_sum += loss.item<double>();
        }
        spdlog::info("classifier epoch {}/{}: loss {:.4f}", epoch + 1, config.epochs, loss_sum / steps_per_epoch);
    }
    clf.heldout_accuracy = accuracy(clf, held);
    spdlog::info("classifier held-out accuracy {:.4f} on {} crops", clf.heldout_accuracy, held.labels.size(0));
    return clf;
}

ClassifierBackbone::ClassifierBackbone(CharNet net, double upscale) : net_(std::move(net)), upscale_(upscale) {
    net_->eval();
    for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> ClassifierBackbone::features(const torch::Tensor& images) {
    auto x = images;
    if (upscale_ != 1.0)
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{upscale_, upscale_})
                                  .mode(torch::kBilinear)
                                  .align_corners(false)
                                  .recompute_scale_factor(false));
    return net_->stages(x);
}

std::shared_ptr<ClassifierBackbone> make_backbone(CharClassifier& clf, double upscale) {
    // A private copy so freezing it leaves the classifier itself untouched.
    CharNet copy(clf.config().widths, static_cast<int>(clf.labels().size()));
    {
        torch::NoGradGuard no_grad;
        auto src = clf.net()->named_parameters();
        for (auto& p : copy->named_parameters()) p.value().copy_(src[p.key()]);
        auto src_buf = clf.net()->named_buffers();
        for (auto& b : copy->named_buffers()) b.value().copy_(src_buf[b.key()]);
    }
    return std::make_shared<ClassifierBackbone>(copy, upscale);
}

}  // namespace hdr::eval
