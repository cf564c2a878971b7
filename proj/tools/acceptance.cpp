// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when all pass.
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hdr/app/config.h"
#include "hdr/app/pipeline.h"
#include "hdr/diffusion/dropout.h"
#include "hdr/diffusion/losses.h"
#include "hdr/error.h"
#include "hdr/eval/metrics.h"
#include "hdr/tensor.h"

using namespace hdr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// |observed - expected| <= 3 sigma for a binomial count.
bool within_binomial(long count, long n, double p, std::string& detail) {
    const double sigma = std::sqrt(n * p * (1 - p));
    const double dev = std::abs(count - n * p);
    detail += fmt::format(" {}/{} ({:.2f} sigma)", count, n, dev / sigma);
    return dev <= 3 * sigma;
}

Outcome forward_moments() {
    const auto t0 = Clock::now();
    const auto schedule = diffusion::make_schedule(1000);
    const long n = 100000;
    // Four pixels spanning the data range.
    const auto x0 = torch::tensor({-1.0, -0.3, 0.4, 1.0}, torch::kDouble).view({1, 1, 2, 2});
    Outcome out{true, ""};
    int worst_t = 0;
    double worst = 0.0;
    for (int t : {1, schedule.T_max / 4, schedule.T_max / 2, schedule.T_max - 1}) {
        auto eps = sampler::seeded_normal({n, 1, 2, 2}, 20240, static_cast<std::uint64_t>(t)).to(torch::kDouble);
        auto xt = diffusion::forward_noise(x0.expand({n, 1, 2, 2}), torch::full({n}, t, torch::kLong), eps, schedule);
        const double abar = schedule.alpha_bars[t];
        const double var = 1.0 - abar;
        auto mean = xt.mean(0);
        auto v = xt.var(0, /*unbiased=*/true);
        auto mean_z = ((mean - std::sqrt(abar) * x0[0]).abs() / std::sqrt(var / n)).max().item<double>();
        auto var_z = ((v - var).abs() / (var * std::sqrt(2.0 / (n - 1)))).max().item<double>();
        const double z = std::max(mean_z, var_z);
        if (z > worst) worst = z, worst_t = t;
        if (z > 3.0) out.pass = false;
    }
    const double secs = seconds_since(t0);
    out.pass = out.pass && secs < 60;
    out.detail = fmt::format("worst deviation {:.2f} sigma at t={}; {:.1f}s", worst, worst_t, secs);
    return out;
}

Outcome guidance_algebra() {
    torch::manual_seed(3);
    const sampler::GuidanceTerms terms{torch::randn({4, 3, 8, 8}), torch::randn({4, 3, 8, 8}), torch::randn({4, 3, 8, 8})};
    const bool telescopes = torch::equal(sampler::combine_guidance(terms, {1.0, 1.0}), terms.full);

    // 0 without conditions, 1 with only the damaged image, 2 with everything.
    sampler::ModelFn constant = [](const torch::Tensor& x, const torch::Tensor&) {
        const bool has_damaged = !x.slice(1, 3, 6).eq(1.0).all().item<bool>();
        const bool has_mask = x.slice(1, 7, 8).ne(0.0).any().item<bool>();
        const float v = has_mask ? 2.0f : (has_damaged ? 1.0f : 0.0f);
        return torch::full({x.size(0), 3, x.size(2), x.size(3)}, v);
    };
    auto x_d = torch::zeros({2, 3, 4, 4}), x_c = torch::zeros({2, 1, 4, 4}), x_m = torch::ones({2, 1, 4, 4});
    auto out = sampler::guided_prediction(constant, torch::zeros({2, 3, 4, 4}), x_d, x_c, x_m, 5, {1.2, 1.5});
    const bool constant_case = out.eq(2.7f).all().item<bool>();
    return {telescopes && constant_case,
            fmt::format("telescoping at (1,1) {}; constant model gives {:.9g}", telescopes ? "bit-equal" : "differs",
                        out.flatten()[0].item<float>())};
}

Outcome loss_identities() {
    torch::manual_seed(5);
    const corpus::Alphabet alphabet(20);
    eval::CharClassifier clf(eval::ClassifierConfig{}, alphabet.labels());
    auto cp = app::perceptual_config(app::AppConfig{}, clf);
    if (!cp) return {false, "no perceptual configuration"};
    const auto x = torch::rand({4, 3, 64, 64}) * 2 - 1;
    auto mask = torch::zeros({4, 1, 64, 64});
    mask.slice(2, 10, 30).slice(3, 20, 50).fill_(1.0);
    const double l_diff = diffusion::diffusion_loss(x, x).item<double>();
    const double l_cp = diffusion::char_perceptual_loss(x, x, mask, *cp).item<double>();
    double worst_zero_mask = 0.0;
    const auto zero = torch::zeros({1, 1, 64, 64});
    for (int i = 0; i < 100; ++i) {
        auto a = torch::rand({1, 3, 64, 64}) * 2 - 1, b = torch::rand({1, 3, 64, 64}) * 2 - 1;
        worst_zero_mask = std::max(worst_zero_mask, std::abs(diffusion::char_perceptual_loss(a, b, zero, *cp).item<double>()));
    }
    return {l_diff == 0.0 && l_cp == 0.0 && worst_zero_mask == 0.0,
            fmt::format("L_diff(x,x)={} L_CP(x,x,m)={} max L_CP(a,b,0) over 100 pairs={}", l_diff, l_cp, worst_zero_mask)};
}

Outcome degradation_suite() {
    const auto t0 = Clock::now();
    corpus::ToyCorpusConfig cc;
    cc.pages = 300;
    cc.seed = 77;
    const auto patches = corpus::generate_toy_corpus(cc);
    const degrade::MixRatios mix;

    long confined = 0;
    const auto pairs = app::make_pairs(patches, mix, 91, 1000);
    for (const auto& p : pairs) {
        bool ok = p.mask.area() > 0;
        for (int y = 0; ok && y < p.target.height(); ++y)
            for (int x = 0; ok && x < p.target.width(); ++x)
                if (!p.mask.mask.at(y, x))
                    for (int c = 0; c < p.target.channels(); ++c) ok = ok && p.damaged.at(y, x, c) == p.target.at(y, x, c);
        confined += ok;
    }
    std::string detail = fmt::format("confinement {}/{};", confined, pairs.size());
    bool pass = confined == static_cast<long>(pairs.size());

    std::map<degrade::DegradationKind, long> kinds;
    const long n_mix = 10000;
    for (const auto& p : app::make_pairs(patches, mix, 92, n_mix)) ++kinds[p.kind];
    detail += " mix";
    pass &= within_binomial(kinds[degrade::DegradationKind::CharacterMissing], n_mix, mix.character_missing, detail);
    pass &= within_binomial(kinds[degrade::DegradationKind::PaperDamage], n_mix, mix.paper_damage, detail);
    pass &= within_binomial(kinds[degrade::DegradationKind::InkErosion], n_mix, mix.ink_erosion, detail);

    const diffusion::DropoutConfig dropout;
    std::map<diffusion::DropoutEvent, long> events;
    const long n_drop = 100000;
    auto rng = make_rng(93, 0);
    for (long i = 0; i < n_drop; ++i) ++events[diffusion::draw_dropout_event(dropout, rng)];
    detail += "; dropout";
    pass &= within_binomial(events[diffusion::DropoutEvent::OnlyDamagedNull], n_drop, dropout.p_only_damaged_null, detail);
    pass &= within_binomial(events[diffusion::DropoutEvent::ContentMaskNull], n_drop, dropout.p_content_mask_null, detail);
    pass &= within_binomial(events[diffusion::DropoutEvent::AllNull], n_drop, dropout.p_all_null, detail);

    const double secs = seconds_since(t0);
    detail += fmt::format("; {:.0f}s", secs);
    return {pass && secs < 300, detail};
}

// The toy study is shared by the sampler and reproduction criteria and cached in the work directory.
struct StudyCache {
    fs::path work;
    std::optional<app::ToyStudyResult> result;
    double seconds = 0.0;

    const app::ToyStudyResult& get() {
        if (!result) {
            const auto t0 = Clock::now();
            result = app::run_toy_study(app::preset("toy"), work);
            seconds = seconds_since(t0);
        }
        return *result;
    }
};

Outcome sampler_oracle(StudyCache& cache) {
    const auto& study = cache.get();
    const auto loaded = diffusion::load_denoiser(study.with_cp_checkpoint);
    const auto model = sampler::model_fn(loaded.model);
    const corpus::Alphabet alphabet(study.alphabet_size);
    const auto cfg = app::preset("toy");

    const auto t0 = Clock::now();
    const std::size_t n = 32;
    double total = 0.0, masked = 0.0;
    long masked_pixels = 0;
    for (std::size_t start = 0; start < n; start += 16) {
        std::vector<const degrade::DamagedPair*> part;
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = start; i < std::min(n, start + 16); ++i) {
            part.push_back(&study.study.test_pairs.at(i));
            seeds.push_back(mix_seed(cfg.sampler.seed, i));
        }
        const auto batch = diffusion::make_batch(part, alphabet);
        auto fast_cfg = cfg.sampler;
        fast_cfg.solver = sampler::Solver::MultistepFast;
        fast_cfg.steps = 20;
        auto slow_cfg = cfg.sampler;
        slow_cfg.solver = sampler::Solver::Ancestral;
        slow_cfg.steps = loaded.schedule.T_max;
        auto fast = sampler::sample_repair(model, batch.x_d, batch.x_c, batch.x_m, cfg.scales, fast_cfg, loaded.schedule, seeds);
        auto slow = sampler::sample_repair(model, batch.x_d, batch.x_c, batch.x_m, cfg.scales, slow_cfg, loaded.schedule, seeds);
        auto diff = (fast - slow).abs().mean({1});
        total += diff.mean({1, 2}).sum().item<double>();
        masked += (diff * batch.x_m.squeeze(1)).sum().item<double>();
        masked_pixels += batch.x_m.sum().item<long>();
    }
    const double secs = seconds_since(t0);
    const double mad = total / n;
    return {mad <= 0.05 && secs < 600,
            fmt::format("fast 20-step vs ancestral {}-step mean |diff| {:.4f} over {} repairs (inside masks {:.4f}); {:.0f}s",
                        loaded.schedule.T_max, mad, n, masked / std::max(1L, masked_pixels), secs)};
}

Outcome toy_reproduction(StudyCache& cache) {
    const auto& r = cache.get();
    const auto cfg = app::preset("toy");
    const double chance = 1.0 / r.alphabet_size;
    const double with_cp = r.with_cp.rec_acc.value_or(0.0);
    const double without_cp = r.without_cp.rec_acc.value_or(0.0);
    const double damaged = r.with_cp.damaged_rec_acc.value_or(1.0);
    const std::size_t corpus_size = r.study.train_patches.size() + r.study.test_patches.size();
    const bool setup = r.alphabet_size == 20 && corpus_size >= 2000 && cfg.train.steps >= 5000 &&
                       r.study.test_pairs.size() == 200 && r.classifier_heldout >= 0.95;
    const bool a = with_cp >= 0.60 && with_cp >= chance + 0.40;
    const bool b = with_cp > without_cp;
    const bool c = with_cp > damaged;
    return {setup && a && b && c,
            fmt::format("classifier {:.3f}; Rec-ACC with CP {:.4f}, without CP {:.4f}, damaged {:.4f} ({} pairs, {} "
                        "characters); (a) {} (b) {} (c) {}",
                        r.classifier_heldout, with_cp, without_cp, damaged, r.with_cp.n, r.with_cp.characters,
                        a ? "ok" : "no", b ? "ok" : "no", c ? "ok" : "no")};
}

Outcome evaluation_protocol() {
    auto ramp = [](int h, int w, float offset) {
        Image img(h, w, 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = offset + 0.01f * (x + 2 * y + c);
        return img;
    };
    const Image r = ramp(6, 8, 0.1f), t = ramp(6, 8, 0.5f);
    Mask ones(6, 8), zeros(6, 8), left(6, 8);
    ones.fill_box({0, 0, 8, 6});
    left.fill_box({0, 0, 4, 6});
    int composites = (eval::composite_repair(r, t, ones) == r) + (eval::composite_repair(r, t, zeros) == t);
    Image half = t;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) half.at(y, x, c) = r.at(y, x, c);
    composites += eval::composite_repair(r, t, left) == half;

    std::srand(7);
    const Eigen::MatrixXd feats = Eigen::MatrixXd::Random(500, 16);
    const double fid_self = eval::fid_from_features(feats, feats);

    // Random 2x2 Gaussians: Tr sqrt(M) = sqrt(Tr M + 2 sqrt(det M)) for M = A B with A, B positive definite.
    double worst = 0.0;
    const double eps = eval::kCovarianceEpsilon;
    for (int i = 0; i < 50; ++i) {
        const Eigen::MatrixXd g1 = Eigen::MatrixXd::Random(2, 2), g2 = Eigen::MatrixXd::Random(2, 2);
        const Eigen::MatrixXd s1 = g1 * g1.transpose() + 0.1 * Eigen::MatrixXd::Identity(2, 2);
        const Eigen::MatrixXd s2 = g2 * g2.transpose() + 0.1 * Eigen::MatrixXd::Identity(2, 2);
        const Eigen::VectorXd mu1 = Eigen::VectorXd::Random(2), mu2 = Eigen::VectorXd::Random(2);
        const Eigen::MatrixXd a = s1 + eps * Eigen::MatrixXd::Identity(2, 2);
        const Eigen::MatrixXd b = s2 + eps * Eigen::MatrixXd::Identity(2, 2);
        const Eigen::MatrixXd m = a * b;
        const double expected = (mu1 - mu2).squaredNorm() + a.trace() + b.trace() -
                                2.0 * std::sqrt(m.trace() + 2.0 * std::sqrt(m.determinant()));
        worst = std::max(worst, std::abs(eval::frechet_distance(mu1, s1, mu2, s2, eps) - expected));
    }
    return {composites == 3 && fid_self <= 1e-6 && worst <= 1e-8,
            fmt::format("composite cases {}/3; FID(X,X)={:.3g}; max Frechet error vs closed form {:.3g} over 50 pairs",
                        composites, fid_self, worst)};
}

int run(const std::string& command) {
    const int status = std::system((command + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every file under `root`, relative path -> bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    if (fs::is_regular_file(root)) {
        std::ifstream is(root, std::ios::binary);
        files[""] = std::string(std::istreambuf_iterator<char>(is), {});
        return files;
    }
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        files[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(is), {});
    }
    return files;
}

Outcome determinism(const fs::path& hdr_bin) {
    const auto tmp = fs::temp_directory_path() / fmt::format("hdr-acceptance-{}", ::getpid());
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    const std::string exe = hdr_bin.string();
    std::string detail;
    bool pass = true;
    auto compare = [&](const std::string& name, const std::vector<std::string>& commands, const fs::path& a,
                       const fs::path& b) {
        for (const auto& cmd : commands)
            if (int code = run(cmd); code != 0) {
                detail += fmt::format("{}: exit {}; ", name, code);
                pass = false;
                return;
            }
        const auto sa = snapshot(a), sb = snapshot(b);
        const bool same = !sa.empty() && sa == sb;
        detail += fmt::format("{} {} ({} files); ", name, same ? "identical" : "DIFFERS", sa.size());
        pass = pass && same;
    };
    const auto p = [&](const std::string& rel) { return (tmp / rel).string(); };

    compare("synth", {exe + " synth --pages 3 --seed 5 --out " + p("c1"), exe + " synth --pages 3 --seed 5 --out " + p("c2")},
            tmp / "c1", tmp / "c2");
    compare("degrade",
            {exe + " degrade --corpus " + p("c1") + " --n 24 --seed 9 --out " + p("d1"),
             exe + " degrade --corpus " + p("c1") + " --n 24 --seed 9 --out " + p("d2")},
            tmp / "d1", tmp / "d2");
    // A briefly trained model is enough: the criterion is about the sampler, not the weights.
    const std::string repair = exe + " --preset toy repair --model " + p("m/last.ckpt") + " --image " +
                               p("d1/damaged/000000.png") + " --edit 8,8,28,28 --edit 36,30,56,52 --steps 10 --seed 4";
    compare("repair",
            {exe + " --preset toy train --corpus " + p("c1") + " --out " + p("m") +
                 " --steps 2 --batch-size 2 --lambda-cp 0 --checkpoint-every 2",
             repair + " --out " + p("r1.png"), repair + " --out " + p("r2.png")},
            tmp / "r1.png", tmp / "r2.png");
    fs::remove_all(tmp);
    return {pass, detail.substr(0, detail.size() - 2)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli("Acceptance checks; one PASS/FAIL line per criterion");
    fs::path work = "acceptance-work";
    fs::path hdr_bin;
    std::vector<std::string> only;
    cli.add_option("--work", work, "Cache directory for the toy study")->capture_default_str();
    cli.add_option("--hdr", hdr_bin, "Path to the hdr CLI (needed for A8)");
    cli.add_option("--only", only, "Run only these criteria, e.g. A1 A7")->delimiter(',');
    CLI11_PARSE(cli, argc, argv);

    configure_torch_threads();
    spdlog::set_level(spdlog::level::warn);
    StudyCache cache{work};
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"A1", forward_moments},
        {"A2", guidance_algebra},
        {"A3", loss_identities},
        {"A4", degradation_suite},
        {"A5", [&] { return sampler_oracle(cache); }},
        {"A6", [&] { return toy_reproduction(cache); }},
        {"A7", evaluation_protocol},
        {"A8", [&] { return hdr_bin.empty() ? Outcome{false, "--hdr not given"} : determinism(hdr_bin); }},
    };
    const std::set<std::string> selected(only.begin(), only.end());
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        if (!selected.empty() && !selected.contains(name)) continue;
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += !o.pass;
        fmt::print("{} {} {}\n", name, o.pass ? "PASS" : "FAIL", o.detail);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
