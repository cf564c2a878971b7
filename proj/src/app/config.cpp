#include "hdr/app/config.h"

#include <fstream>

#include "hdr/error.h"
#include "hdr/image_io.h"

namespace hdr::app {

using nlohmann::json;

namespace {

json corpus_json(const corpus::ToyCorpusConfig& c) {
    return {{"alphabet_size", c.alphabet_size},
            {"glyph_styles", c.glyph_styles},
            {"patch_size", c.patch_size},
            {"patches_per_page", c.patches_per_page},
            {"pages", c.pages},
            {"background_palette", c.background_palette},
            {"lines_per_patch", {c.lines_per_patch.min, c.lines_per_patch.max}},
            {"cells_per_line", {c.cells_per_line.min, c.cells_per_line.max}},
            {"seed", c.seed}};
}

corpus::ToyCorpusConfig corpus_from(const json& j) {
    corpus::ToyCorpusConfig c;
    c.alphabet_size = j.at("alphabet_size");
    c.glyph_styles = j.at("glyph_styles");
    c.patch_size = j.at("patch_size");
    c.patches_per_page = j.at("patches_per_page");
    c.pages = j.at("pages");
    c.background_palette = j.at("background_palette").get<std::vector<std::array<float, 3>>>();
    auto range = [](const json& r) { return corpus::IntRange{r.at(0).get<int>(), r.at(1).get<int>()}; };
    c.lines_per_patch = range(j.at("lines_per_patch"));
    c.cells_per_line = range(j.at("cells_per_line"));
    c.seed = j.at("seed");
    return c;
}

// Reports the first key of `patch` that `base` does not know.
void check_keys(const json& patch, const json& base, const std::string& prefix) {
    if (!patch.is_object()) return;
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key);
        if (base.at(it.key()).is_object()) check_keys(it.value(), base.at(it.key()), key);
    }
}

}  // namespace

json AppConfig::to_json() const {
    return {{"corpus", corpus_json(corpus)},
            {"mix",
             {{"character_missing", mix.character_missing},
              {"paper_damage", mix.paper_damage},
              {"ink_erosion", mix.ink_erosion}}},
            {"dataset", {{"seed", dataset.seed}, {"n", dataset.n}}},
            {"denoiser", denoiser},
            {"schedule", {{"T_max", schedule.T_max}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}}},
            {"train", train},
            {"dropout", dropout},
            {"perceptual", {{"upscale", perceptual.upscale}, {"weights", perceptual.weights}}},
            {"classifier", classifier},
            {"scales", scales},
            {"sampler", sampler},
            {"service",
             {{"host", service.host},
              {"port", service.port},
              {"workers", service.workers},
              {"queue_timeout_s", service.queue_timeout_s}}}};
}

AppConfig AppConfig::from_json(const json& patch, const AppConfig& base) {
    if (!patch.is_object()) throw ConfigError("config must be a JSON object");
    json merged = base.to_json();
    check_keys(patch, merged, "");
    merged.merge_patch(patch);
    AppConfig c;
    try {
        c.corpus = corpus_from(merged.at("corpus"));
        const auto& m = merged.at("mix");
        c.mix = {m.at("character_missing"), m.at("paper_damage"), m.at("ink_erosion")};
        const auto& d = merged.at("dataset");
        c.dataset = {d.at("seed").get<std::uint64_t>(), d.at("n").get<long>()};
        c.denoiser = merged.at("denoiser").get<diffusion::DenoiserConfig>();
        const auto& s = merged.at("schedule");
        c.schedule = {s.at("T_max"), s.at("beta_start"), s.at("beta_end")};
        c.train = merged.at("train").get<diffusion::TrainConfig>();
        c.dropout = merged.at("dropout").get<diffusion::DropoutConfig>();
        const auto& p = merged.at("perceptual");
        c.perceptual = {p.at("upscale"), p.at("weights").get<std::vector<double>>()};
        c.classifier = merged.at("classifier").get<eval::ClassifierConfig>();
        c.scales = merged.at("scales").get<sampler::GuidanceScales>();
        c.sampler = merged.at("sampler").get<sampler::SamplerConfig>();
        const auto& v = merged.at("service");
        c.service = {v.at("host"), v.at("port"), v.at("workers"), v.at("queue_timeout_s")};
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

AppConfig AppConfig::load(const std::filesystem::path& path, const AppConfig& base) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    try {
        return from_json(json::parse(is), base);
    } catch (const json::parse_error& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
}

AppConfig AppConfig::toy() {
    AppConfig c;
    c.denoiser = diffusion::DenoiserConfig::toy();
    // Betas scaled by 1000 / T so the shorter chain still ends near pure noise (alpha_bar_T ~ 3e-5).
    c.schedule.T_max = 200;
    c.schedule.beta_start = 5e-4;
    c.schedule.beta_end = 0.1;
    c.train.lr = 5e-4;
    c.train.warmup_steps = 200;
    c.train.steps = 5000;
    c.train.checkpoint_every = 500;
    return c;
}

void AppConfig::validate() const {
    corpus.validate();
    mix.validate();
    denoiser.validate();
    train.validate();
    dropout.validate();
    classifier.validate();
    scales.validate();
    sampler.validate(schedule.T_max);
    if (schedule.T_max < 1 || !(schedule.beta_start > 0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1))
        throw ConfigError("bad schedule");
    if (dataset.n < 0) throw ConfigError("dataset.n must be >= 0");
    if (perceptual.upscale <= 0.0) throw ConfigError("perceptual.upscale must be positive");
    if (service.workers < 1 || service.queue_timeout_s < 1) throw ConfigError("service needs >= 1 worker and a positive timeout");
}

std::string AppConfig::digest() const { return io::sha256_hex(to_json().dump()); }

AppConfig preset(std::string_view name) {
    if (name == "default") return AppConfig{};
    if (name == "toy") return AppConfig::toy();
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected default or toy)");
}

AppConfig apply_overrides(const AppConfig& base, const std::vector<std::string>& assignments) {
    json patch = json::object();
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
        const std::string key = a.substr(0, eq), text = a.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        json* node = &patch;
        std::size_t start = 0;
        for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
            node = &(*node)[key.substr(start, dot - start)];
            if (!node->is_object()) *node = json::object();
        }
        (*node)[key.substr(start)] = value;
    }
    return AppConfig::from_json(patch, base);
}

}  // namespace hdr::app
