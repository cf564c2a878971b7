#include "hdr/eval/evaluate.h"

#include <fstream>

#include <spdlog/spdlog.h>

#include "hdr/diffusion/train.h"
#include "hdr/error.h"
#include "hdr/image_io.h"
#include "hdr/random.h"
#include "hdr/tensor.h"

namespace hdr::eval {

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json kinds = nlohmann::json::object();
    for (const auto& [name, s] : per_kind)
        kinds[name] = {{"n", s.pairs}, {"characters", s.chars.total}, {"rec_acc", optional_json(s.chars.fraction())}};
    return {{"rec_acc", optional_json(rec_acc)},
            {"damaged_rec_acc", optional_json(damaged_rec_acc)},
            {"fid", optional_json(fid)},
            {"lpips", optional_json(lpips)},
            {"proxy_metrics", proxy_metrics},
            {"per_kind", kinds},
            {"n", n},
            {"characters", characters},
            {"config_digest", config_digest}};
}

EvalReport score_repairs(const std::vector<Image>& composites, const std::vector<degrade::DamagedPair>& pairs,
                         CharClassifier& clf, const EvalOptions& options) {
    if (composites.size() != pairs.size()) throw ShapeError("one composite per pair");
    EvalReport report;
    report.n = static_cast<long>(pairs.size());
    for (int k = 0; k < degrade::kKindCount; ++k)
        report.per_kind[std::string(degrade::to_string(static_cast<degrade::DegradationKind>(k)))];

    RecAccCount all, damaged;
    std::vector<Image> damaged_images;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto c = rec_acc_counts({composites[i]}, {pairs[i]}, clf);
        auto& ks = report.per_kind[std::string(degrade::to_string(pairs[i].kind))];
        ks.pairs += 1;
        ks.chars += c;
        all += c;
        damaged_images.push_back(pairs[i].damaged);
    }
    damaged = rec_acc_counts(damaged_images, pairs, clf);
    report.rec_acc = all.fraction();
    report.damaged_rec_acc = damaged.fraction();
    report.characters = all.total;

    if (options.distribution_metrics && !pairs.empty()) {
        std::vector<Image> targets;
        for (const auto& p : pairs) targets.push_back(p.target);
        auto backbone = make_backbone(clf, 1.0);
        auto m = distribution_metrics(composites, targets, *backbone, true);
        report.fid = m.fid;
        report.lpips = m.lpips;
        report.proxy_metrics = m.proxy;
    }

    nlohmann::json cfg = {{"scales", options.scales},
                          {"sampler", options.sampler},
                          {"model", options.model_digest},
                          {"distribution_metrics", options.distribution_metrics},
                          {"n", report.n}};
    report.config_digest = io::sha256_hex(cfg.dump());
    return report;
}

EvalRun evaluate_run(const sampler::ModelFn& model, const diffusion::NoiseSchedule& schedule,
                     const std::vector<degrade::DamagedPair>& pairs, const corpus::Alphabet& alphabet,
                     CharClassifier& clf, const EvalOptions& options) {
    if (options.batch_size < 1) throw ConfigError("batch_size must be positive");
    EvalRun run;
    for (std::size_t s = 0; s < pairs.size(); s += options.batch_size) {
        const std::size_t e = std::min(pairs.size(), s + options.batch_size);
        std::vector<const degrade::DamagedPair*> part;
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = s; i < e; ++i) {
            part.push_back(&pairs[i]);
            seeds.push_back(mix_seed(options.sampler.seed, i));
        }
        auto batch = diffusion::make_batch(part, alphabet);
        auto out = sampler::sample_repair(model, batch.x_d, batch.x_c, batch.x_m, options.scales, options.sampler,
                                          schedule, seeds);
        for (auto& img : to_images(out, Range::Unit)) {
            img.quantize8();
            const auto& p = pairs[run.repaired.size()];
            run.composites.push_back(composite_repair(img, p.target, p.mask.mask));
            run.repaired.push_back(std::move(img));
        }
        spdlog::debug("evaluated {}/{} pairs", e, pairs.size());
    }
    run.report = score_repairs(run.composites, pairs, clf, options);
    return run;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << report.to_json().dump(2) << '\n';
}

}  // namespace hdr::eval
