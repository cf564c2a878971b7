// Command-line front end: corpus synthesis, dataset building, training, repair, evaluation and the service.

#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "hdr/app/config.h"
#include "hdr/app/pipeline.h"
#include "hdr/app/service.h"
#include "hdr/error.h"
#include "hdr/image_io.h"
#include "hdr/sampler/document.h"
#include "hdr/tensor.h"

using namespace hdr;
namespace fs = std::filesystem;

namespace {

std::vector<double> parse_list(const std::string& text, std::size_t expected, const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(flag + ": '" + item + "' is not a number");
        }
    }
    if (out.size() != expected)
        throw ConfigError(flag + " expects " + std::to_string(expected) + " comma-separated values");
    return out;
}

// "x0,y0,x1,y1" or "x0,y0,x1,y1:text".
sampler::Edit parse_edit(const std::string& text) {
    const auto colon = text.find(':');
    const auto nums = parse_list(text.substr(0, colon), 4, "--edit");
    sampler::Edit e;
    e.bbox = {static_cast<int>(nums[0]), static_cast<int>(nums[1]), static_cast<int>(nums[2]), static_cast<int>(nums[3])};
    if (colon != std::string::npos) e.text = text.substr(colon + 1);
    return e;
}

// Flags shared by every subcommand. Precedence: flags > config file > preset defaults.
struct CommonFlags {
    std::string preset = "default";
    std::string config_file;
    std::vector<std::string> sets;
    std::string log_level = "info";
};

// Subcommand flags that override config values; unset ones leave the config alone.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> pages, steps, epochs, batch_size, checkpoint_every, workers, port, patch_size;
    std::optional<long> n;
    std::optional<double> lr, lambda_cp;
    std::optional<std::string> mix, scales, solver, host;
};

app::AppConfig resolve(const CommonFlags& common) {
    auto cfg = app::preset(common.preset);
    if (!common.config_file.empty()) cfg = app::AppConfig::load(common.config_file, cfg);
    return app::apply_overrides(cfg, common.sets);
}

void check_empty_output(const fs::path& dir) {
    if (fs::exists(dir) && !fs::is_empty(dir))
        throw PreconditionError("output directory " + dir.string() + " is not empty");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Historical document repair with a conditioned diffusion model"};
    cli.require_subcommand(1);
    CommonFlags common;
    cli.add_option("--preset", common.preset, "Base settings: default or toy")->capture_default_str();
    cli.add_option("--config", common.config_file, "JSON config file applied over the preset")->check(CLI::ExistingFile);
    cli.add_option("--set", common.sets, "Config override section.key=value (repeatable)");
    cli.add_option("--log-level", common.log_level, "trace, debug, info, warn or error")->capture_default_str();

    Overrides o;
    fs::path out, corpus_dir, data_dir, model_path, clf_path, image_path, mask_path, work = "work";
    std::vector<std::string> edit_specs;
    std::string mode = "REPAIR";
    bool no_distribution = false;
    long limit = 0;
    std::size_t test_patches = 200;

    auto* synth = cli.add_subcommand("synth", "Generate a toy corpus of annotated pages");
    synth->add_option("--out", out, "Corpus directory")->required();
    synth->add_option("--pages", o.pages, "Number of pages");
    synth->add_option("--seed", o.seed, "Corpus seed");

    auto* degrade = cli.add_subcommand("degrade", "Build damaged/target pairs from a corpus");
    degrade->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    degrade->add_option("--out", out, "Dataset directory")->required();
    degrade->add_option("--n", o.n, "Number of pairs (default: one per patch)");
    degrade->add_option("--mix", o.mix, "Kind ratios character_missing,paper_damage,ink_erosion");
    degrade->add_option("--seed", o.seed, "Degradation seed");
    degrade->add_option("--patch-size", o.patch_size, "Patch side in pixels");

    auto* train_clf = cli.add_subcommand("train-clf", "Train the character classifier used for Rec-ACC and CPLoss");
    train_clf->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    train_clf->add_option("--out", out, "Classifier checkpoint")->required();
    train_clf->add_option("--epochs", o.epochs, "Training epochs");
    train_clf->add_option("--seed", o.seed, "Training seed");

    auto* train = cli.add_subcommand("train", "Train the denoiser");
    auto* train_src = train->add_option_group("source");
    train_src->add_option("--corpus", corpus_dir, "Corpus directory; pairs are degraded on the fly");
    train_src->add_option("--data", data_dir, "Fixed dataset directory from `degrade`");
    train_src->require_option(1);
    train->add_option("--out", out, "Run directory (checkpoints, train_log.jsonl)")->required();
    train->add_option("--classifier", clf_path, "Classifier checkpoint for CPLoss");
    train->add_option("--steps", o.steps, "Optimizer steps (0: derive from epochs)");
    train->add_option("--epochs", o.epochs, "Epochs when --steps is 0");
    train->add_option("--batch-size", o.batch_size, "Batch size");
    train->add_option("--lr", o.lr, "Peak learning rate");
    train->add_option("--lambda-cp", o.lambda_cp, "CPLoss weight (0 disables it)");
    train->add_option("--checkpoint-every", o.checkpoint_every, "Steps between checkpoints");
    train->add_option("--seed", o.seed, "Training seed");

    auto* repair = cli.add_subcommand("repair", "Repair or edit characters on a page image");
    repair->add_option("--model", model_path, "Denoiser checkpoint")->required()->check(CLI::ExistingFile);
    repair->add_option("--image", image_path, "Input PNG")->required()->check(CLI::ExistingFile);
    repair->add_option("--out", out, "Output PNG")->required();
    repair->add_option("--edit", edit_specs, "x0,y0,x1,y1[:text] (repeatable)");
    repair->add_option("--mode", mode, "REPAIR, EDIT or TEXT_BLOCK")->capture_default_str();
    repair->add_option("--mask", mask_path, "Damage mask PNG (white = damaged)")->check(CLI::ExistingFile);
    repair->add_option("--scales", o.scales, "Guidance scales s_d,s_cm");
    repair->add_option("--steps", o.steps, "Solver steps");
    repair->add_option("--seed", o.seed, "Sampling seed");
    repair->add_option("--solver", o.solver, "multistep_fast or ancestral");

    auto* eval = cli.add_subcommand("eval", "Repair a dataset and score it");
    eval->add_option("--model", model_path, "Denoiser checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--classifier", clf_path, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", out, "Report JSON")->required();
    eval->add_option("--limit", limit, "Use only the first n pairs");
    eval->add_option("--scales", o.scales, "Guidance scales s_d,s_cm");
    eval->add_option("--steps", o.steps, "Solver steps");
    eval->add_option("--seed", o.seed, "Sampling seed");
    eval->add_option("--solver", o.solver, "multistep_fast or ancestral");
    eval->add_flag("--no-distribution", no_distribution, "Skip proxy FID/LPIPS");

    auto* serve = cli.add_subcommand("serve", "Serve the repair API over HTTP");
    serve->add_option("--model", model_path, "Denoiser checkpoint")->required()->check(CLI::ExistingFile);
    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "Port");
    serve->add_option("--workers", o.workers, "Concurrent inference slots");

    auto* study = cli.add_subcommand("study", "Toy study: classifier, denoisers with and without CPLoss, evaluation");
    study->add_option("--work", work, "Working directory; finished steps are reused")->capture_default_str();
    study->add_option("--test-patches", test_patches, "Held-out patches at the end of the corpus")->capture_default_str();

    CLI11_PARSE(cli, argc, argv);

    try {
        spdlog::set_level(spdlog::level::from_str(common.log_level));
        configure_torch_threads();
        auto cfg = resolve(common);
        // Flags last.
        if (o.pages) cfg.corpus.pages = *o.pages;
        if (o.patch_size) cfg.corpus.patch_size = *o.patch_size;
        if (o.mix) {
            auto m = parse_list(*o.mix, 3, "--mix");
            cfg.mix = {m[0], m[1], m[2]};
        }
        if (o.n) cfg.dataset.n = *o.n;
        if (o.steps && (repair->parsed() || eval->parsed())) cfg.sampler.steps = *o.steps;
        if (o.steps && train->parsed()) cfg.train.steps = *o.steps;
        if (o.epochs && train_clf->parsed()) cfg.classifier.epochs = *o.epochs;
        if (o.epochs && train->parsed()) cfg.train.epochs = *o.epochs;
        if (o.batch_size) cfg.train.batch_size = *o.batch_size;
        if (o.lr) cfg.train.lr = *o.lr;
        if (o.lambda_cp) cfg.train.lambda_cp = *o.lambda_cp;
        if (o.checkpoint_every) cfg.train.checkpoint_every = *o.checkpoint_every;
        if (o.scales) {
            auto s = parse_list(*o.scales, 2, "--scales");
            cfg.scales = {s[0], s[1]};
        }
        if (o.solver) cfg.sampler.solver = sampler::parse_solver(*o.solver);
        if (o.host) cfg.service.host = *o.host;
        if (o.port) cfg.service.port = *o.port;
        if (o.workers) cfg.service.workers = *o.workers;
        if (o.seed) {
            if (synth->parsed()) cfg.corpus.seed = *o.seed;
            if (degrade->parsed()) cfg.dataset.seed = *o.seed;
            if (train_clf->parsed()) cfg.classifier.seed = *o.seed;
            if (train->parsed()) cfg.train.seed = *o.seed;
            if (repair->parsed() || eval->parsed()) cfg.sampler.seed = *o.seed;
        }
        cfg.validate();

        if (synth->parsed()) {
            check_empty_output(out);
            auto pages = corpus::generate_toy_pages(cfg.corpus);
            corpus::write_corpus(out, pages);
            app::write_run_record(out / "run.json", "synth", cfg, {{"pages", pages.size()}});
            spdlog::info("wrote {} pages to {}", pages.size(), out.string());
        } else if (degrade->parsed()) {
            check_empty_output(out);
            auto patches = app::load_corpus_patches(corpus_dir, cfg.corpus.patch_size);
            const auto n = cfg.dataset.n > 0 ? static_cast<std::size_t>(cfg.dataset.n) : patches.size();
            auto pairs = app::make_pairs(patches, cfg.mix, cfg.dataset.seed, n);
            degrade::write_dataset(out, pairs);
            std::map<std::string, long> kinds;
            for (const auto& p : pairs) ++kinds[std::string(degrade::to_string(p.kind))];
            app::write_run_record(out / "run.json", "degrade", cfg,
                                  {{"patches", patches.size()}, {"pairs", pairs.size()}, {"kinds", kinds}});
            spdlog::info("wrote {} pairs from {} patches to {}", pairs.size(), patches.size(), out.string());
        } else if (train_clf->parsed()) {
            auto patches = app::load_corpus_patches(corpus_dir, cfg.corpus.patch_size);
            const corpus::Alphabet alphabet(cfg.corpus.alphabet_size);
            auto clf = eval::train_char_classifier(patches, alphabet, cfg.classifier);
            clf.save(out);
            app::write_run_record(fs::path(out.string() + ".run.json"), "train-clf", cfg,
                                  {{"heldout_accuracy", clf.heldout_accuracy}});
            std::cout << "held-out accuracy " << clf.heldout_accuracy << '\n';
        } else if (train->parsed()) {
            const corpus::Alphabet alphabet(cfg.corpus.alphabet_size);
            std::optional<eval::CharClassifier> clf;
            if (!clf_path.empty()) clf = eval::CharClassifier::load(clf_path);
            auto source = data_dir.empty()
                              ? diffusion::PairSource::online(app::load_corpus_patches(corpus_dir, cfg.corpus.patch_size), cfg.mix)
                              : diffusion::PairSource::fixed(degrade::read_dataset(data_dir));
            auto last = app::ensure_denoiser(cfg, std::move(source), alphabet, clf ? &*clf : nullptr, out);
            std::cout << last.string() << '\n';
        } else if (repair->parsed()) {
            auto loaded = diffusion::load_denoiser(model_path);
            const corpus::Alphabet alphabet(loaded.header.at("alphabet_size").get<int>());
            sampler::DocumentRepairConfig dcfg;
            dcfg.mode = sampler::parse_mode(mode);
            dcfg.scales = cfg.scales;
            dcfg.sampler = cfg.sampler;
            dcfg.window = loaded.header.value("patch_size", cfg.corpus.patch_size);
            if (!mask_path.empty()) dcfg.extra_mask = io::read_mask_png(mask_path);
            std::vector<sampler::Edit> edits;
            for (const auto& e : edit_specs) edits.push_back(parse_edit(e));
            auto page = io::read_png(image_path);
            auto result = sampler::repair_document(sampler::model_fn(loaded.model), loaded.schedule, alphabet, page, edits, dcfg);
            io::write_png(out, result.repaired);
            app::write_run_record(fs::path(out.string() + ".run.json"), "repair", cfg,
                                  {{"model_digest", loaded.digest},
                                   {"mode", sampler::to_string(dcfg.mode)},
                                   {"edits", edit_specs},
                                   {"windows", result.windows.size()}});
        } else if (eval->parsed()) {
            auto loaded = diffusion::load_denoiser(model_path);
            auto clf = eval::CharClassifier::load(clf_path);
            const corpus::Alphabet alphabet(loaded.header.at("alphabet_size").get<int>());
            auto pairs = degrade::read_dataset(data_dir);
            if (limit > 0 && static_cast<std::size_t>(limit) < pairs.size()) pairs.resize(limit);
            eval::EvalOptions opts;
            opts.scales = cfg.scales;
            opts.sampler = cfg.sampler;
            opts.distribution_metrics = !no_distribution;
            opts.model_digest = loaded.digest;
            auto run = eval::evaluate_run(sampler::model_fn(loaded.model), loaded.schedule, pairs, alphabet, clf, opts);
            eval::write_report(out, run.report);
            std::cout << run.report.to_json().dump(2) << '\n';
        } else if (serve->parsed()) {
            app::RepairService service(cfg);
            service.load_async(model_path);
            if (!service.listen(cfg.service.host, cfg.service.port))
                throw IoError("cannot listen on " + cfg.service.host + ":" + std::to_string(cfg.service.port));
        } else if (study->parsed()) {
            auto r = app::run_toy_study(cfg, work, test_patches);
            std::cout << nlohmann::json{{"classifier_heldout", r.classifier_heldout},
                                        {"with_cp", r.with_cp.to_json()},
                                        {"without_cp", r.without_cp.to_json()}}
                             .dump(2)
                      << '\n';
        }
    } catch (const ConfigError& e) {
        spdlog::error("configuration: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
