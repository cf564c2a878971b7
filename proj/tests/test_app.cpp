#include "torch_doctest.h"

#include <chrono>
#include <fstream>
#include <future>
#include <thread>

#include "hdr/app/config.h"
#include "hdr/app/pipeline.h"
#include "hdr/app/service.h"
#include "hdr/error.h"
#include "hdr/eval/evaluate.h"
#include "hdr/image_io.h"

// After the Eigen users: <resolv.h>, pulled in by httplib, defines _res.
#include <httplib.h>

using namespace hdr;
using namespace hdr::app;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
    auto path = fs::temp_directory_path() / name;
    std::ofstream(path) << content;
    return path;
}

ServedModel tiny_model() {
    diffusion::DenoiserConfig c;
    c.base_width = 16;
    c.multipliers = {1, 2};
    c.attention_heads = 2;
    torch::manual_seed(0);
    diffusion::Denoiser net(c);
    ServedModel m;
    m.fn = sampler::model_fn(net);
    m.schedule = diffusion::make_schedule(50, 2e-3, 0.4);
    m.digest = "test-model";
    m.alphabet_size = 20;
    m.patch_size = 32;
    return m;
}

Image page_image() {
    Image page(48, 80, 3, 0.85f);
    for (int x = 10; x < 70; ++x) page.at(20, x, 0) = page.at(20, x, 1) = page.at(20, x, 2) = 0.1f;
    return page;
}

std::string page_b64() { return io::base64_encode(io::encode_png(page_image())); }

json valid_request() {
    corpus::Alphabet alphabet(20);
    return {{"image", page_b64()},
            {"mode", "EDIT"},
            {"edits", json::array({{{"bbox", {30, 10, 46, 30}}, {"text", alphabet.label(4)}}})},
            {"steps", 3},
            {"seed", 11}};
}

AppConfig service_config(int workers = 1, int timeout_s = 120) {
    AppConfig cfg;
    cfg.service.workers = workers;
    cfg.service.queue_timeout_s = timeout_s;
    return cfg;
}

}  // namespace

TEST_CASE("config precedence: defaults < file < overrides") {
    const auto base = preset("toy");
    CHECK(base.denoiser.base_width == 32);
    CHECK(base.schedule.T_max == 200);
    auto file = temp_file("hdr_cfg.json", R"({"train": {"lr": 0.002, "batch_size": 4}, "sampler": {"steps": 10}})");
    auto from_file = AppConfig::load(file, base);
    CHECK(from_file.train.lr == 0.002);
    CHECK(from_file.train.batch_size == 4);
    CHECK(from_file.sampler.steps == 10);
    // Keys the file does not mention keep the preset's values.
    CHECK(from_file.denoiser.base_width == 32);
    CHECK(from_file.train.warmup_steps == base.train.warmup_steps);

    auto overridden = apply_overrides(from_file, {"sampler.steps=25", "sampler.solver=ancestral", "mix.paper_damage=0.5"});
    CHECK(overridden.sampler.steps == 25);
    CHECK(overridden.sampler.solver == sampler::Solver::Ancestral);
    CHECK(overridden.train.lr == 0.002);
    CHECK(overridden.digest() != from_file.digest());
    fs::remove(file);
}

TEST_CASE("config: unknown keys and bad values are named") {
    auto file = temp_file("hdr_cfg_bad.json", R"({"train": {"lr": 0.001, "learning_rate": 1}})");
    try {
        AppConfig::load(file);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.learning_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(AppConfig::from_json(json{{"nonsense", 1}}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(AppConfig{}, {"sampler.steps"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(AppConfig{}, {"sampler.steps=\"many\""}), ConfigError);
    CHECK_THROWS_AS(preset("huge"), ConfigError);
    CHECK_THROWS_AS(AppConfig::load(temp_file("hdr_cfg_broken.json", "{ not json")), ParseError);
    fs::remove(file);
}

TEST_CASE("config: JSON round trip and stable digest") {
    auto cfg = preset("toy");
    auto back = AppConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.digest() == cfg.digest());
    CHECK(cfg.digest().size() == 64);
    // Default settings.
    AppConfig d;
    CHECK(d.scales.s_d == 1.2);
    CHECK(d.scales.s_cm == 1.5);
    CHECK(d.sampler.steps == 20);
    CHECK(d.mix.character_missing == 0.25);
    CHECK(d.mix.paper_damage == 0.50);
    CHECK(d.mix.ink_erosion == 0.25);
    CHECK(d.schedule.T_max == 1000);
    CHECK(d.train.lr == 1e-4);
    CHECK(d.train.batch_size == 8);
}

TEST_CASE("make_pairs matches build_dataset when there is one pair per patch") {
    corpus::ToyCorpusConfig cc;
    cc.pages = 4;
    auto patches = corpus::generate_toy_corpus(cc);
    auto a = make_pairs(patches, {}, 17, patches.size());
    auto b = degrade::build_dataset(patches, {}, 17);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].damaged == b[i].damaged);
        CHECK(a[i].kind == b[i].kind);
        CHECK(a[i].seed == b[i].seed);
    }
    // More pairs than patches cycle through the patches with fresh damage.
    auto many = make_pairs(patches, {}, 17, patches.size() * 2);
    CHECK(many[patches.size()].target == many[0].target);
    CHECK_FALSE(many[patches.size()].damaged == many[0].damaged);
}

TEST_CASE("service: health before and after loading") {
    RepairService service(service_config());
    auto h = service.health();
    CHECK(h.status == 503);
    CHECK(h.body.at("status") == "loading");
    CHECK(service.model_info().status == 503);
    auto r = service.repair(valid_request().dump());
    CHECK(r.status == 503);

    service.set_model(tiny_model());
    h = service.health();
    CHECK(h.status == 200);
    CHECK(h.body.at("status") == "ready");
    auto info = service.model_info();
    CHECK(info.status == 200);
    CHECK(info.body.at("digest") == "test-model");
    CHECK(info.body.at("patch_size") == 32);
    CHECK(info.body.at("alphabet").size() == 20);

    auto glyphs = service.alphabet();
    REQUIRE(glyphs.status == 200);
    REQUIRE(glyphs.body.at("glyphs").size() == 20);
    auto preview = io::decode_png(io::base64_decode(glyphs.body["glyphs"][3]["preview"].get<std::string>()));
    CHECK(preview.width() == 32);
    CHECK(preview.height() == 32);
}

TEST_CASE("service: a missing checkpoint reports an error status") {
    RepairService service(service_config());
    service.load_async("/nonexistent/model.ckpt");
    for (int i = 0; i < 100 && service.health().body.at("status") == "loading"; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    auto h = service.health();
    CHECK(h.status == 503);
    CHECK(h.body.at("status") == "error");
}

TEST_CASE("service: validation errors are field-level 4xx") {
    RepairService service(service_config());
    service.set_model(tiny_model());
    auto fields_of = [&](const json& request) {
        auto r = service.repair(request.dump());
        CHECK(r.status == 422);
        return r.body.value("fields", json::object());
    };

    SUBCASE("REPAIR without edits or mask") {
        json req = {{"image", page_b64()}, {"mode", "REPAIR"}, {"edits", json::array()}};
        CHECK(fields_of(req).contains("edits"));
    }
    SUBCASE("box outside the image, unknown label, unknown field, bad mode and steps") {
        auto req = valid_request();
        req["edits"][0]["bbox"] = {70, 10, 90, 30};
        CHECK(fields_of(req).contains("edits[0].bbox"));
        req = valid_request();
        req["edits"][0]["text"] = "Q";
        CHECK(fields_of(req).contains("edits[0].text"));
        req = valid_request();
        req["colour"] = "red";
        CHECK(fields_of(req).contains("colour"));
        req = valid_request();
        req["mode"] = "PAINT";
        CHECK(fields_of(req).contains("mode"));
        req = valid_request();
        req["steps"] = 51;
        CHECK(fields_of(req).contains("steps"));
        req = valid_request();
        req["scales"] = {{"s_d", -1.0}, {"s_cm", 1.5}};
        CHECK(fields_of(req).contains("scales"));
        req = valid_request();
        req["image"] = "not base64 png";
        CHECK(fields_of(req).contains("image"));
    }
    SUBCASE("EDIT needs exactly one character") {
        auto req = valid_request();
        req["edits"][0]["text"] = "";
        CHECK(fields_of(req).contains("edits[0].text"));
    }
    SUBCASE("malformed JSON is a 400") {
        auto r = service.repair("{\"image\": ");
        CHECK(r.status == 400);
    }
}

TEST_CASE("service: repair is deterministic for a fixed seed and only touches the boxes") {
    RepairService service(service_config());
    service.set_model(tiny_model());
    auto a = service.repair(valid_request().dump());
    REQUIRE(a.status == 200);
    auto b = service.repair(valid_request().dump());
    REQUIRE(b.status == 200);
    CHECK(a.body.at("image") == b.body.at("image"));
    CHECK(a.body.at("config_digest") == b.body.at("config_digest"));
    CHECK(a.body.at("model_digest") == "test-model");
    CHECK(a.body.at("crops").size() == 1);
    CHECK(a.body.at("timing_ms").contains("inference"));

    auto out = io::decode_png(io::base64_decode(a.body.at("image").get<std::string>()));
    auto in = page_image();
    in.quantize8();
    REQUIRE(out.width() == in.width());
    REQUIRE(out.height() == in.height());
    const Box box{30, 10, 46, 30};
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x)
            if (!box.contains_pixel(x, y))
                for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == in.at(y, x, c));

    auto other = valid_request();
    other["seed"] = 12;
    CHECK(service.repair(other.dump()).body.at("image") != a.body.at("image"));

    // REPAIR with only a mask is accepted.
    Image mask(48, 80, 1, 0.0f);
    for (int y = 5; y < 15; ++y)
        for (int x = 5; x < 15; ++x) mask.at(y, x) = 1.0f;
    json masked = {{"image", page_b64()}, {"mode", "REPAIR"}, {"mask", io::base64_encode(io::encode_png(mask))}, {"steps", 2}};
    CHECK(service.repair(masked.dump()).status == 200);
}

TEST_CASE("service: inference failures are 5xx with an incident id") {
    RepairService service(service_config());
    auto m = tiny_model();
    m.fn = [](const torch::Tensor&, const torch::Tensor&) -> torch::Tensor { throw std::runtime_error("boom"); };
    service.set_model(m);
    auto r = service.repair(valid_request().dump());
    CHECK(r.status == 500);
    CHECK(r.body.at("incident").get<std::string>().size() == 16);
}

TEST_CASE("service over HTTP: endpoints, queueing and timeouts") {
    RepairService service(service_config(1, 1));
    auto m = tiny_model();
    auto inner = m.fn;
    // Slow enough that a second request waits longer than the 1 s queue timeout.
    m.fn = [inner](const torch::Tensor& x, const torch::Tensor& t) {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        return inner(x, t);
    };
    service.set_model(m);
    const int port = service.start();
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(60, 0);

    auto health = client.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body).at("status") == "ready");
    auto model = client.Get("/model");
    REQUIRE(model);
    CHECK(json::parse(model->body).at("digest") == "test-model");
    auto missing = client.Get("/nothing");
    REQUIRE(missing);
    CHECK(missing->status == 404);

    auto bad = client.Post("/repair", json{{"image", page_b64()}, {"mode", "REPAIR"}}.dump(), "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 422);

    // Two concurrent repairs of 3 steps x 3 calls x 300 ms: the second waits past the timeout.
    auto post = [&] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        auto res = c.Post("/repair", valid_request().dump(), "application/json");
        return res ? res->status : -1;
    };
    auto f1 = std::async(std::launch::async, post);
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    auto f2 = std::async(std::launch::async, post);
    std::vector<int> codes{f1.get(), f2.get()};
    std::sort(codes.begin(), codes.end());
    CHECK(codes == std::vector<int>{200, 503});
    service.stop();
}

TEST_CASE("eval on an untrained model completes with a valid report") {
    corpus::ToyCorpusConfig cc;
    cc.pages = 30;
    cc.seed = 4;
    auto patches = corpus::generate_toy_corpus(cc);
    eval::ClassifierConfig quick;
    quick.epochs = 2;
    const corpus::Alphabet alphabet(20);
    auto clf = eval::train_char_classifier(patches, alphabet, quick);
    auto pairs = make_pairs(patches, {}, 2, 12);
    auto m = tiny_model();
    eval::EvalOptions opts;
    opts.sampler.steps = 2;
    auto run = eval::evaluate_run(m.fn, m.schedule, pairs, alphabet, clf, opts);
    auto path = fs::temp_directory_path() / "hdr_eval_report.json";
    eval::write_report(path, run.report);
    std::ifstream is(path);
    auto report = json::parse(is);
    CHECK(report.at("n") == 12);
    REQUIRE(report.at("rec_acc").is_number());
    MESSAGE("untrained Rec-ACC " << report.at("rec_acc").get<double>());
    CHECK(report.at("rec_acc").get<double>() >= 0.0);
    CHECK(report.at("rec_acc").get<double>() < 0.5);
    CHECK(report.at("fid").is_number());
    fs::remove(path);
}
