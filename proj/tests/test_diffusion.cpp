#include "torch_doctest.h"

#include <cmath>
#include <fstream>
#include <numeric>

#include "hdr/checkpoint.h"
#include "hdr/diffusion/denoiser.h"
#include "hdr/diffusion/dropout.h"
#include "hdr/diffusion/losses.h"
#include "hdr/diffusion/schedule.h"
#include "hdr/diffusion/train.h"
#include "hdr/error.h"
#include "hdr/eval/classifier.h"
#include "hdr/image_io.h"
#include "test_support.h"

using namespace hdr;
using namespace hdr::diffusion;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.base_width = 16;
    c.multipliers = {1, 2};
    c.attention_heads = 2;
    return c;
}

std::vector<corpus::PatchSample> small_patches(int pages) {
    corpus::ToyCorpusConfig cfg;
    cfg.patch_size = 32;
    cfg.lines_per_patch = {2, 3};
    cfg.cells_per_line = {2, 3};
    cfg.pages = pages;
    cfg.seed = 5;
    return corpus::generate_toy_corpus(cfg);
}

std::shared_ptr<PerceptualBackbone> random_backbone() {
    eval::ClassifierConfig cfg;
    cfg.seed = 4;
    eval::CharClassifier clf(cfg, {"a", "b", "c"});
    return eval::make_backbone(clf, 1.0);
}

}  // namespace

TEST_CASE("schedule tables follow the running product of (1 - beta)") {
    auto s = schedule_from_betas({0.1, 0.2});
    CHECK(s.alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bars[1] == doctest::Approx(0.72).epsilon(1e-15));
    auto lin = make_schedule(2, 0.1, 0.2);
    CHECK(lin.betas == std::vector<double>{0.1, 0.2});
    CHECK(lin.alpha_bars[1] == doctest::Approx(0.9 * 0.8));
}

TEST_CASE("linear schedules are strictly decreasing in alpha_bar") {
    for (int T : {1, 10, 200, 1000}) {
        auto s = make_schedule(T);
        CHECK(s.T_max == T);
        CHECK(s.betas.front() == doctest::Approx(1e-4));
        CHECK(s.betas.back() == doctest::Approx(T == 1 ? 1e-4 : 0.02));
        for (int t = 0; t < T; ++t) {
            CHECK(s.alpha_bars[t] > 0.0);
            CHECK(s.alpha_bars[t] < 1.0);
            if (t) CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        }
    }
}

TEST_CASE("schedule range errors") {
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(0), ConfigError);
    CHECK_THROWS_AS(schedule_from_betas({0.1, 1.5}), ConfigError);
}

TEST_CASE("forward_noise closed form") {
    auto s = schedule_from_betas({0.1, 0.2});
    auto x0 = torch::ones({3, 4, 4});
    auto xt = forward_noise(x0, 1, torch::zeros_like(x0), s);
    const double expected = std::sqrt(0.9 * 0.8);
    CHECK(xt.min().item<double>() == doctest::Approx(expected).epsilon(1e-6));
    CHECK(xt.max().item<double>() == doctest::Approx(expected).epsilon(1e-6));

    auto tiny = make_schedule(10, 1e-8, 1e-6);
    auto img = torch::rand({3, 8, 8}) * 2 - 1;
    CHECK(torch::allclose(forward_noise(img, 0, torch::zeros_like(img), tiny), img, 1e-6, 1e-6));

    CHECK_THROWS_AS(forward_noise(x0, 2, torch::zeros_like(x0), s), ConfigError);
    CHECK_THROWS_AS(forward_noise(x0, -1, torch::zeros_like(x0), s), ConfigError);
    CHECK_THROWS_AS(forward_noise(x0, 0, torch::zeros({3, 4, 5}), s), ShapeError);
}

TEST_CASE("forward_noise moments match the Monte-Carlo oracle") {
    auto s = make_schedule(200);
    torch::manual_seed(17);
    const long n = 100000;
    auto x0 = torch::tensor({-1.0f, -0.3f, 0.4f, 1.0f});
    for (int t : {1, 50, 100, 199}) {
        auto eps = torch::randn({n, 4}, torch::kFloat64);
        auto xt = forward_noise(x0.to(torch::kFloat64).expand({n, 4}), t, eps, s);
        const double abar = s.alpha_bars[t];
        auto mean = xt.mean(0), var = xt.var(0);
        for (int p = 0; p < 4; ++p) {
            const double mu = std::sqrt(abar) * x0[p].item<double>();
            const double v = 1.0 - abar;
            CHECK(std::abs(mean[p].item<double>() - mu) <= 3.0 * std::sqrt(v / n));
            CHECK(std::abs(var[p].item<double>() - v) <= 3.0 * v * std::sqrt(2.0 / (n - 1)));
        }
    }
}

TEST_CASE("batched forward_noise uses one timestep per example") {
    auto s = make_schedule(50);
    auto x0 = torch::rand({3, 3, 8, 8});
    auto eps = torch::randn({3, 3, 8, 8});
    auto t = torch::tensor({0L, 20L, 49L});
    auto out = forward_noise(x0, t, eps, s);
    for (int i = 0; i < 3; ++i)
        CHECK(torch::allclose(out[i], forward_noise(x0[i], t[i].item<int>(), eps[i], s), 1e-6, 1e-6));
}

TEST_CASE("denoiser keeps the spatial shape and maps 8 channels to 3") {
    torch::manual_seed(0);
    Denoiser model(tiny_config());
    model->eval();
    torch::NoGradGuard ng;
    for (int size : {16, 32, 64}) {
        auto out = model->forward(torch::randn({2, 8, size, size}), torch::tensor({0L, 7L}));
        CHECK(out.sizes() == std::vector<long>{2, 3, size, size});
        CHECK(torch::isfinite(out).all().item<bool>());
    }
    CHECK_THROWS_AS(model->forward(torch::randn({1, 7, 32, 32}), torch::tensor({0L})), ShapeError);
    CHECK_THROWS_AS(model->forward(torch::randn({1, 8, 31, 32}), torch::tensor({0L})), ShapeError);
}

TEST_CASE("the toy preset runs at 64x64") {
    torch::manual_seed(0);
    Denoiser model(DenoiserConfig::toy());
    torch::NoGradGuard ng;
    model->eval();
    auto out = model->forward(torch::randn({1, 8, 64, 64}), torch::tensor({3L}));
    CHECK(out.sizes() == std::vector<long>{1, 3, 64, 64});
}

TEST_CASE("input assembler enforces the channel layout") {
    auto x_t = torch::zeros({2, 3, 16, 16});
    auto x_d = torch::ones({2, 3, 16, 16});
    auto x_c = torch::full({2, 1, 16, 16}, 2.0f);
    auto x_m = torch::full({2, 1, 16, 16}, 3.0f);
    auto x = DenoiserInput{x_t, x_d, x_c, x_m}.assemble();
    CHECK(x.size(1) == 8);
    CHECK(x.slice(1, 0, 3).eq(0).all().item<bool>());
    CHECK(x.slice(1, 3, 6).eq(1).all().item<bool>());
    CHECK(x.slice(1, 6, 7).eq(2).all().item<bool>());
    CHECK(x.slice(1, 7, 8).eq(3).all().item<bool>());

    // swapped arguments are caught by name
    CHECK_THROWS_WITH_AS(DenoiserInput({x_t, x_c, x_d, x_m}).assemble(), doctest::Contains("x_d"), ShapeError);
    CHECK_THROWS_AS(DenoiserInput({x_t, x_d, x_c, torch::zeros({2, 1, 8, 8})}).assemble(), ShapeError);
    CHECK_THROWS_AS(DenoiserInput({x_t, x_d, x_c, torch::zeros({1, 1, 16, 16})}).assemble(), ShapeError);
    CHECK_THROWS_AS(DenoiserInput({x_t, x_d, x_c, torch::Tensor()}).assemble(), ShapeError);
}

TEST_CASE("denoise_predict is deterministic in inference mode") {
    torch::manual_seed(3);
    Denoiser a(tiny_config());
    torch::manual_seed(3);
    Denoiser b(tiny_config());
    auto x_t = torch::randn({3, 32, 32}), x_d = torch::randn({3, 32, 32});
    auto x_c = torch::randn({1, 32, 32}), x_m = torch::ones({1, 32, 32});
    auto first = denoise_predict(a, x_t, x_d, x_c, x_m, 5);
    CHECK(first.sizes() == std::vector<long>{3, 32, 32});
    CHECK(torch::equal(first, denoise_predict(a, x_t, x_d, x_c, x_m, 5)));
    CHECK(torch::equal(first, denoise_predict(b, x_t, x_d, x_c, x_m, 5)));
    CHECK_THROWS_AS(denoise_predict(a, x_t, x_c, x_d, x_m, 5), ShapeError);
}

TEST_CASE("diffusion loss is a mean of squares") {
    auto x = torch::rand({2, 3, 8, 8});
    CHECK(diffusion_loss(x, x).item<double>() == 0.0);
    CHECK(diffusion_loss(x + 0.5f, x).item<double>() == doctest::Approx(0.25).epsilon(1e-6));
    auto y = torch::rand({2, 3, 8, 8});
    CHECK(diffusion_loss(x, y).item<double>() == diffusion_loss(y, x).item<double>());
    CHECK_THROWS_AS(diffusion_loss(x, torch::rand({2, 3, 8, 4})), ShapeError);
}

TEST_CASE("masked feature distance by hand") {
    // one channel, two locations, differences 3 and 4
    auto a = torch::zeros({1, 1, 1, 2});
    auto b = torch::tensor({3.0f, 4.0f}).view({1, 1, 1, 2});
    CHECK(masked_feature_distance(a, b, torch::ones({1, 1, 1, 2})).item<double>() == doctest::Approx(3.5));
    CHECK(masked_feature_distance(a, b, torch::tensor({0.0f, 1.0f}).view({1, 1, 1, 2})).item<double>() ==
          doctest::Approx(4.0));
    CHECK(masked_feature_distance(a, b, torch::zeros({1, 1, 1, 2})).item<double>() == 0.0);
    // the mask is resampled nearest to the feature resolution
    auto m = torch::zeros({1, 1, 2, 4});
    m.index_put_({0, 0, torch::indexing::Slice(), torch::indexing::Slice(2, 4)}, 1.0f);
    CHECK(masked_feature_distance(a, b, m).item<double>() == doctest::Approx(4.0));
}

TEST_CASE("CPLoss identities") {
    auto backbone = random_backbone();
    auto cfg = CPLossConfig::equal_weights(backbone);
    CHECK(cfg.layer_ids.size() == 3);
    CHECK(cfg.weights[0] == doctest::Approx(1.0 / 3));
    torch::manual_seed(8);
    auto m = (torch::rand({2, 1, 32, 32}) > 0.5).to(torch::kFloat32);
    for (int i = 0; i < 20; ++i) {
        auto a = torch::rand({2, 3, 32, 32}) * 2 - 1;
        auto b = torch::rand({2, 3, 32, 32}) * 2 - 1;
        CHECK(char_perceptual_loss(a, a, m, cfg).item<double>() == 0.0);
        CHECK(char_perceptual_loss(a, b, torch::zeros_like(m), cfg).item<double>() == 0.0);
        CHECK(char_perceptual_loss(a, b, m, cfg).item<double>() > 0.0);
    }
}

TEST_CASE("CPLoss config validation") {
    auto backbone = random_backbone();
    CPLossConfig c{{0, 1}, {0.5}, backbone};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.weights = {0.0, 0.0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.weights = {0.0, 1.0};
    CHECK_NOTHROW(c.validate());
    c.layer_ids = {0, 7};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(CPLossConfig({{0}, {1.0}, nullptr}).validate(), ConfigError);
}

TEST_CASE("CPLoss gradient reaches the prediction but not the backbone") {
    auto backbone = random_backbone();
    auto cfg = CPLossConfig::equal_weights(backbone);
    auto pred = (torch::rand({1, 3, 32, 32}) * 2 - 1).requires_grad_(true);
    auto target = torch::rand({1, 3, 32, 32}) * 2 - 1;
    auto loss = char_perceptual_loss(pred, target, torch::ones({1, 1, 32, 32}), cfg);
    loss.backward();
    CHECK(pred.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("dropout event frequencies") {
    DropoutConfig cfg;
    Rng rng(99);
    const long n = 100000;
    std::array<long, 4> counts{};
    for (long i = 0; i < n; ++i) counts[static_cast<int>(draw_dropout_event(cfg, rng))]++;
    const double p = 0.08, sd = std::sqrt(n * p * (1 - p));
    for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] - n * p) <= 3 * sd);
    const double sd_keep = std::sqrt(n * 0.76 * 0.24);
    CHECK(std::abs(counts[3] - n * 0.76) <= 3 * sd_keep);
}

TEST_CASE("dropout replaces conditions with the null images") {
    ConditionBatch batch{torch::zeros({4, 3, 8, 8}), torch::zeros({4, 1, 8, 8}), torch::ones({4, 1, 8, 8})};
    Rng rng(1);
    auto same = apply_conditional_dropout(batch, DropoutConfig::none(), rng);
    CHECK(torch::equal(same.x_d, batch.x_d));
    CHECK(torch::equal(same.x_c, batch.x_c));
    CHECK(torch::equal(same.x_m, batch.x_m));

    auto all = apply_conditional_dropout(batch, {0.0, 0.0, 1.0}, rng);
    CHECK(all.x_d.eq(1.0f).all().item<bool>());  // white
    CHECK(all.x_c.eq(1.0f).all().item<bool>());
    CHECK(all.x_m.eq(0.0f).all().item<bool>());
    CHECK(batch.x_m.eq(1.0f).all().item<bool>());  // input untouched

    std::vector<DropoutEvent> events;
    auto only_d = apply_conditional_dropout(batch, {1.0, 0.0, 0.0}, rng, &events);
    CHECK(events.size() == 4);
    CHECK(only_d.x_d.eq(1.0f).all().item<bool>());
    CHECK(torch::equal(only_d.x_c, batch.x_c));
    CHECK(torch::equal(only_d.x_m, batch.x_m));

    auto cm = apply_conditional_dropout(batch, {0.0, 1.0, 0.0}, rng);
    CHECK(torch::equal(cm.x_d, batch.x_d));
    CHECK(cm.x_m.eq(0.0f).all().item<bool>());

    CHECK_THROWS_AS(apply_conditional_dropout(batch, {0.5, 0.5, 0.5}, rng), ConfigError);
    CHECK_THROWS_AS(apply_conditional_dropout(batch, {-0.1, 0.0, 0.0}, rng), ConfigError);
}

TEST_CASE("make_batch maps images into diffusion range") {
    auto patches = small_patches(2);
    auto pairs = degrade::build_dataset(patches, {}, 1);
    corpus::Alphabet alphabet(20);
    auto batch = make_batch({&pairs[0], &pairs[1]}, alphabet);
    CHECK(batch.target.sizes() == std::vector<long>{2, 3, 32, 32});
    CHECK(batch.x_c.size(1) == 1);
    CHECK(batch.target.min().item<float>() >= -1.0f);
    CHECK(batch.target.max().item<float>() <= 1.0f);
    CHECK(((batch.x_m == 0) | (batch.x_m == 1)).all().item<bool>());
    CHECK(batch.x_m.sum().item<double>() == doctest::Approx(pairs[0].mask.area() + pairs[1].mask.area()));
}

TEST_CASE("lr schedule is linear") {
    TrainConfig c;
    c.lr = 1e-3;
    CHECK(c.lr_at(0, 100) == doctest::Approx(1e-3));
    CHECK(c.lr_at(50, 100) == doctest::Approx(5e-4));
    c.warmup_steps = 10;
    CHECK(c.lr_at(0, 110) == doctest::Approx(1e-4));
    CHECK(c.lr_at(10, 110) == doctest::Approx(1e-3));
    c.steps = 0;
    c.epochs = 2;
    c.batch_size = 8;
    CHECK(c.total_steps(64) == 16);
    c.lr = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("with lambda_cp = 0 the objective and gradient equal diffusion-only training") {
    auto patches = small_patches(4);
    corpus::Alphabet alphabet(20);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.steps = 1;
    tc.lambda_cp = 0.0;
    tc.seed = 12;
    auto cp = CPLossConfig::equal_weights(random_backbone());
    Trainer with_cp(tiny_config(), make_schedule(50), tc, {}, cp, alphabet, PairSource::online(patches, {}));
    Trainer without(tiny_config(), make_schedule(50), tc, {}, std::nullopt, alphabet, PairSource::online(patches, {}));

    auto pairs = degrade::build_dataset(patches, {}, 2);
    auto batch = make_batch({&pairs[0], &pairs[1], &pairs[2], &pairs[3]}, alphabet);
    auto t = torch::tensor({1L, 10L, 20L, 49L});
    auto eps = torch::randn_like(batch.target);
    ConditionBatch cond{batch.x_d, batch.x_c, batch.x_m};
    auto ra = with_cp.evaluate_batch(batch, t, eps, cond, true);
    auto rb = without.evaluate_batch(batch, t, eps, cond, true);
    CHECK(ra.total == ra.l_diff);
    CHECK(ra.total == rb.total);
    auto pa = with_cp.model()->parameters(), pb = without.model()->parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i].grad(), pb[i].grad()));
}

TEST_CASE("CPLoss adds lambda times the perceptual term") {
    auto patches = small_patches(4);
    corpus::Alphabet alphabet(20);
    TrainConfig tc;
    tc.batch_size = 2;
    tc.steps = 1;
    tc.lambda_cp = 0.5;
    Trainer tr(tiny_config(), make_schedule(50), tc, {}, CPLossConfig::equal_weights(random_backbone()), alphabet,
               PairSource::online(patches, {}));
    auto pairs = degrade::build_dataset(patches, {}, 2);
    auto batch = make_batch({&pairs[0], &pairs[1]}, alphabet);
    auto r = tr.evaluate_batch(batch, torch::tensor({3L, 4L}), torch::randn_like(batch.target),
                               {batch.x_d, batch.x_c, batch.x_m}, false);
    CHECK(r.l_cp > 0.0);
    CHECK(r.total == doctest::Approx(r.l_diff + 0.5 * r.l_cp));
    tc.lambda_cp = 0.1;
    CHECK_THROWS_AS(Trainer(tiny_config(), make_schedule(50), tc, {}, std::nullopt, alphabet,
                            PairSource::online(patches, {})),
                    ConfigError);
}

TEST_CASE("training smoke run reduces the smoothed loss") {
    auto patches = small_patches(16);
    REQUIRE(patches.size() == 64);
    corpus::Alphabet alphabet(20);
    auto pairs = degrade::build_dataset(patches, {}, 7);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.steps = 200;
    tc.lr = 1e-3;
    tc.lambda_cp = 0.0;
    tc.seed = 3;
    tc.checkpoint_every = 0;
    Trainer tr(tiny_config(), make_schedule(100), tc, {}, std::nullopt, alphabet, PairSource::fixed(pairs));
    std::vector<double> losses;
    test::TempDir dir;
    tr.run(dir.path(), [&](const StepResult& r) { losses.push_back(r.total); });
    REQUIRE(losses.size() == 200);
    const int w = 50;
    std::vector<double> smooth;
    for (std::size_t i = w; i <= losses.size(); ++i)
        smooth.push_back(std::accumulate(losses.begin() + (i - w), losses.begin() + i, 0.0) / w);
    MESSAGE("smoothed loss " << smooth.front() << " -> " << smooth.back());
    CHECK(smooth.back() < smooth.front());
    // the trend is downward: the smoothed curve ends below its first quarter
    CHECK(smooth.back() < *std::min_element(smooth.begin(), smooth.begin() + smooth.size() / 4));

    CHECK(std::filesystem::exists(dir.path() / "last.ckpt"));
    std::ifstream log(dir.path() / "train_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("L_diff"));
        CHECK(j.contains("L_CP"));
        CHECK(j.contains("lr"));
        CHECK(j.contains("wall_time"));
        CHECK(j["step"].get<int>() == ++lines);
    }
    CHECK(lines == 200);
}

TEST_CASE("resuming from a checkpoint reproduces the loss sequence") {
    auto patches = small_patches(4);
    corpus::Alphabet alphabet(20);
    TrainConfig tc;
    tc.batch_size = 2;
    tc.steps = 6;
    tc.lr = 1e-3;
    tc.lambda_cp = 0.01;
    tc.seed = 21;
    auto cp = CPLossConfig::equal_weights(random_backbone());
    test::TempDir dir;

    Trainer full(tiny_config(), make_schedule(50), tc, {}, cp, alphabet, PairSource::online(patches, {}));
    std::vector<double> reference;
    for (int i = 0; i < 6; ++i) {
        reference.push_back(full.step().total);
        if (i == 2) full.save(dir.path() / "mid.ckpt");
    }

    Trainer resumed(tiny_config(), make_schedule(50), tc, {}, cp, alphabet, PairSource::online(patches, {}));
    resumed.resume(dir.path() / "mid.ckpt");
    CHECK(resumed.current_step() == 3);
    for (int i = 3; i < 6; ++i) CHECK(resumed.step().total == reference[i]);

    auto loaded = load_denoiser(dir.path() / "mid.ckpt");
    CHECK(loaded.schedule.T_max == 50);
    CHECK(loaded.header["step"] == 3);
    CHECK(loaded.digest.size() == 64);
}

TEST_CASE("checkpoint container rejects foreign files") {
    test::TempDir dir;
    auto bogus = dir.path() / "x.ckpt";
    io::write_file(bogus, std::vector<std::uint8_t>{'n', 'o', 'p', 'e'});
    CHECK_THROWS_AS(load_checkpoint(bogus), ParseError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), IoError);

    torch::serialize::OutputArchive a;
    a.write("w", torch::ones({2}));
    save_checkpoint(dir.path() / "ok.ckpt", {{"kind", "test"}, {"n", 3}}, a);
    auto data = load_checkpoint(dir.path() / "ok.ckpt");
    CHECK(data.header["n"] == 3);
    torch::serialize::InputArchive in;
    data.load_archive(in);
    torch::Tensor w;
    in.read("w", w);
    CHECK(torch::equal(w, torch::ones({2})));
    CHECK_THROWS_AS(load_denoiser(dir.path() / "ok.ckpt"), ParseError);
}

TEST_CASE("timestep embedding separates timesteps") {
    auto e = timestep_embedding(torch::tensor({0L, 1L, 500L}), 32);
    CHECK(e.sizes() == std::vector<long>{3, 32});
    CHECK(!torch::allclose(e[0], e[1]));
    CHECK(timestep_embedding(torch::tensor({4L}), 7).size(1) == 7);
}
