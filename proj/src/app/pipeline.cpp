#include "hdr/app/pipeline.h"

#include <fstream>
#include <regex>

#include <spdlog/spdlog.h>

#include "hdr/checkpoint.h"
#include "hdr/error.h"
#include "hdr/image_io.h"
#include "hdr/sampler/sampler.h"

namespace hdr::app {

namespace fs = std::filesystem;

diffusion::NoiseSchedule build_schedule(const AppConfig& cfg) {
    return diffusion::make_schedule(cfg.schedule.T_max, cfg.schedule.beta_start, cfg.schedule.beta_end);
}

std::vector<corpus::PatchSample> load_corpus_patches(const fs::path& corpus_dir, int patch_size) {
    std::vector<corpus::PatchSample> out;
    for (const auto& page : corpus::load_annotated_pages(corpus_dir))
        for (auto& p : corpus::crop_patches(page, patch_size, patch_size)) out.push_back(std::move(p));
    if (out.empty()) throw PreconditionError("no usable patches in " + corpus_dir.string());
    return out;
}

std::vector<degrade::DamagedPair> make_pairs(const std::vector<corpus::PatchSample>& patches,
                                             const degrade::MixRatios& mix, std::uint64_t seed, std::size_t n) {
    if (patches.empty()) throw PreconditionError("no patches to degrade");
    mix.validate();
    std::vector<degrade::DamagedPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(degrade::degrade_patch(patches[i % patches.size()], mix, seed, i));
    return out;
}

std::optional<diffusion::CPLossConfig> perceptual_config(const AppConfig& cfg, eval::CharClassifier& clf) {
    auto backbone = eval::make_backbone(clf, cfg.perceptual.upscale);
    auto cp = diffusion::CPLossConfig::equal_weights(backbone);
    if (!cfg.perceptual.weights.empty()) cp.weights = cfg.perceptual.weights;
    cp.validate();
    return cp;
}

void write_run_record(const fs::path& path, const std::string& command, const AppConfig& cfg,
                      const nlohmann::json& extra) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    nlohmann::json record = {{"command", command}, {"config", cfg.to_json()}, {"config_digest", cfg.digest()}};
    record.update(extra);
    os << record.dump(2) << '\n';
}

eval::CharClassifier ensure_classifier(const AppConfig& cfg, const std::vector<corpus::PatchSample>& patches,
                                       const corpus::Alphabet& alphabet, const fs::path& path) {
    const nlohmann::json key = {{"classifier", cfg.classifier}, {"alphabet", alphabet.size()}, {"patches", patches.size()}};
    if (fs::exists(path)) {
        auto header = read_checkpoint_header(path);
        if (header.value("key", nlohmann::json()) == key) return eval::CharClassifier::load(path);
        spdlog::warn("classifier at {} was trained with other settings; retraining", path.string());
    }
    auto clf = eval::train_char_classifier(patches, alphabet, cfg.classifier);
    clf.save(path, {{"key", key}});
    return clf;
}

fs::path ensure_denoiser(const AppConfig& cfg, diffusion::PairSource data, const corpus::Alphabet& alphabet,
                         eval::CharClassifier* clf, const fs::path& dir) {
    std::optional<diffusion::CPLossConfig> cp;
    if (cfg.train.lambda_cp > 0.0) {
        if (!clf) throw ConfigError("lambda_cp > 0 needs a classifier for the perceptual loss");
        cp = perceptual_config(cfg, *clf);
    }
    diffusion::Trainer trainer(cfg.denoiser, build_schedule(cfg), cfg.train, cfg.dropout, cp, alphabet,
                               std::move(data));

    const fs::path last = dir / "last.ckpt";
    if (fs::exists(last)) {
        auto header = read_checkpoint_header(last);
        if (header.value("step", -1L) == trainer.total_steps() && header.at("train") == nlohmann::json(cfg.train) &&
            header.at("denoiser") == nlohmann::json(cfg.denoiser))
            return last;
        spdlog::warn("{} does not match the requested run; training again", last.string());
    }
    // Resume from the newest intermediate checkpoint.
    long best = 0;
    fs::path resume_from;
    if (fs::exists(dir)) {
        const std::regex pattern(R"(step-(\d+)\.ckpt)");
        for (const auto& entry : fs::directory_iterator(dir)) {
            std::smatch m;
            const std::string name = entry.path().filename().string();
            if (std::regex_match(name, m, pattern) && std::stol(m[1]) > best) {
                best = std::stol(m[1]);
                resume_from = entry.path();
            }
        }
    }
    if (!resume_from.empty()) {
        try {
            trainer.resume(resume_from);
            spdlog::info("resuming {} from step {}", dir.string(), trainer.current_step());
        } catch (const std::exception& e) {
            spdlog::warn("cannot resume from {}: {}", resume_from.string(), e.what());
        }
    }
    write_run_record(dir / "run.json", "train", cfg);
    trainer.run(dir, [&](const diffusion::StepResult& r) {
        if (r.step % 100 == 0 || r.step == trainer.total_steps())
            spdlog::info("{} step {}/{}: L_diff {:.5f} L_CP {:.5f} lr {:.2e}", dir.filename().string(), r.step,
                         trainer.total_steps(), r.l_diff, r.l_cp, r.lr);
    });
    return last;
}

ToyStudy make_toy_study(const AppConfig& cfg, std::size_t test_patches) {
    auto patches = corpus::generate_toy_corpus(cfg.corpus);
    if (test_patches >= patches.size()) throw ConfigError("test split would leave no training patches");
    // Patches come page by page, so a tail split keeps test pages unseen.
    ToyStudy s;
    const std::size_t cut = patches.size() - test_patches;
    s.train_patches.assign(patches.begin(), patches.begin() + cut);
    s.test_patches.assign(patches.begin() + cut, patches.end());
    s.test_pairs = degrade::build_dataset(s.test_patches, cfg.mix, mix_seed(cfg.corpus.seed, 0x7e57));
    return s;
}

namespace {

std::string short_digest(const nlohmann::json& j) { return io::sha256_hex(j.dump()).substr(0, 12); }

eval::EvalReport cached_eval(const AppConfig& cfg, const fs::path& ckpt, const ToyStudy& study,
                             const corpus::Alphabet& alphabet, eval::CharClassifier& clf) {
    auto loaded = diffusion::load_denoiser(ckpt);
    eval::EvalOptions opts;
    opts.scales = cfg.scales;
    opts.sampler = cfg.sampler;
    opts.model_digest = loaded.digest;
    const nlohmann::json key = {{"model", loaded.digest}, {"scales", cfg.scales}, {"sampler", cfg.sampler},
                                {"pairs", study.test_pairs.size()}, {"mix", cfg.to_json()["mix"]},
                                {"corpus", cfg.to_json()["corpus"]}};
    const fs::path report_path = ckpt.parent_path() / ("eval-" + short_digest(key) + ".json");
    auto run = eval::evaluate_run(sampler::model_fn(loaded.model), loaded.schedule, study.test_pairs, alphabet, clf, opts);
    eval::write_report(report_path, run.report);
    return run.report;
}

}  // namespace

ToyStudyResult run_toy_study(const AppConfig& cfg, const fs::path& work_dir, std::size_t test_patches) {
    cfg.validate();
    fs::create_directories(work_dir);
    ToyStudyResult r;
    r.study = make_toy_study(cfg, test_patches);
    const corpus::Alphabet alphabet(cfg.corpus.alphabet_size);
    r.alphabet_size = alphabet.size();

    const nlohmann::json clf_key = {{"corpus", cfg.to_json()["corpus"]}, {"classifier", cfg.classifier}, {"test", test_patches}};
    r.classifier_checkpoint = work_dir / ("classifier-" + short_digest(clf_key) + ".ckpt");
    auto clf = ensure_classifier(cfg, r.study.train_patches, alphabet, r.classifier_checkpoint);
    r.classifier_heldout = clf.heldout_accuracy;
    spdlog::info("classifier held-out accuracy {:.4f}", r.classifier_heldout);

    AppConfig plain = cfg;
    plain.train.lambda_cp = 0.0;
    auto model_key = [&](const AppConfig& c) {
        return nlohmann::json{{"classifier", clf_key}, {"mix", c.to_json()["mix"]}, {"denoiser", c.denoiser},
                              {"schedule", {c.schedule.T_max, c.schedule.beta_start, c.schedule.beta_end}},
                              {"train", c.train}, {"dropout", c.dropout}, {"upscale", c.perceptual.upscale},
                              {"weights", c.perceptual.weights}};
    };
    const fs::path cp_dir = work_dir / ("denoiser-cp-" + short_digest(model_key(cfg)));
    const fs::path plain_dir = work_dir / ("denoiser-plain-" + short_digest(model_key(plain)));
    const auto source = diffusion::PairSource::online(r.study.train_patches, cfg.mix);
    r.with_cp_checkpoint = ensure_denoiser(cfg, source, alphabet, &clf, cp_dir);
    r.without_cp_checkpoint = ensure_denoiser(plain, source, alphabet, nullptr, plain_dir);

    r.with_cp = cached_eval(cfg, r.with_cp_checkpoint, r.study, alphabet, clf);
    r.without_cp = cached_eval(cfg, r.without_cp_checkpoint, r.study, alphabet, clf);
    return r;
}

}  // namespace hdr::app
