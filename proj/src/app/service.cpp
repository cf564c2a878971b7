#include "hdr/app/service.h"

#include <chrono>
#include <random>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "hdr/corpus/alphabet.h"
#include "hdr/error.h"
#include "hdr/image_io.h"
#include "hdr/sampler/document.h"

namespace hdr::app {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string incident_id() {
    std::random_device rd;
    std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string png_base64(const Image& image) { return io::base64_encode(io::encode_png(image)); }

// Collects field-level problems so one response can report all of them.
class FieldErrors {
public:
    void add(const std::string& field, const std::string& message) {
        if (!errors_.contains(field)) errors_[field] = message;
    }
    bool empty() const { return errors_.empty(); }
    ServiceReply reply() const { return {422, {{"error", "invalid request"}, {"fields", errors_}}}; }

private:
    json errors_ = json::object();
};

std::optional<Image> decode_image(const json& v, const std::string& field, int channels, FieldErrors& errors) {
    if (!v.is_string()) {
        errors.add(field, "must be a base64-encoded PNG string");
        return std::nullopt;
    }
    try {
        return io::decode_png(io::base64_decode(v.get<std::string>()), channels);
    } catch (const std::exception& e) {
        errors.add(field, std::string("not a readable PNG: ") + e.what());
        return std::nullopt;
    }
}

}  // namespace

ServedModel served_model(const diffusion::LoadedDenoiser& loaded) {
    ServedModel m;
    m.fn = sampler::model_fn(loaded.model);
    m.schedule = loaded.schedule;
    m.digest = loaded.digest;
    m.alphabet_size = loaded.header.at("alphabet_size").get<int>();
    m.patch_size = loaded.header.value("patch_size", 64);
    return m;
}

RepairService::RepairService(AppConfig cfg) : cfg_(std::move(cfg)), workers_(0) {
    if (cfg_.service.workers < 1 || cfg_.service.workers > kMaxWorkers)
        throw ConfigError("service.workers must lie in [1, " + std::to_string(kMaxWorkers) + "]");
    workers_.release(cfg_.service.workers);
    server_ = std::make_unique<httplib::Server>();
    routes();
}

RepairService::~RepairService() {
    stop();
    if (loader_.joinable()) loader_.join();
}

void RepairService::load_async(std::filesystem::path checkpoint) {
    loader_ = std::thread([this, checkpoint = std::move(checkpoint)] {
        try {
            auto loaded = diffusion::load_denoiser(checkpoint);
            set_model(served_model(loaded));
            spdlog::info("model {} loaded ({})", checkpoint.string(), loaded.digest.substr(0, 12));
        } catch (const std::exception& e) {
            std::lock_guard lock(mu_);
            load_error_ = e.what();
            spdlog::error("model load failed: {}", e.what());
        }
    });
}

void RepairService::set_model(ServedModel model) {
    corpus::Alphabet alphabet(model.alphabet_size);
    std::lock_guard lock(mu_);
    alphabet_ = std::move(alphabet);
    model_ = std::make_shared<const ServedModel>(std::move(model));
}

ServiceReply RepairService::health() const {
    std::lock_guard lock(mu_);
    if (model_) return {200, {{"status", "ready"}}};
    if (!load_error_.empty()) return {503, {{"status", "error"}, {"message", load_error_}}};
    return {503, {{"status", "loading"}}};
}

ServiceReply RepairService::model_info() const {
    std::lock_guard lock(mu_);
    if (!model_) return {503, {{"error", "model not loaded"}}};
    return {200,
            {{"digest", model_->digest},
             {"alphabet", alphabet_->labels()},
             {"alphabet_size", model_->alphabet_size},
             {"patch_size", model_->patch_size},
             {"T_max", model_->schedule.T_max},
             {"defaults", {{"scales", cfg_.scales}, {"steps", cfg_.sampler.steps}, {"seed", cfg_.sampler.seed}}}}};
}

ServiceReply RepairService::alphabet() const {
    std::lock_guard lock(mu_);
    if (!alphabet_) return {503, {{"error", "model not loaded"}}};
    json glyphs = json::array();
    for (int i = 0; i < alphabet_->size(); ++i) {
        Image preview(32, 32, 3, 1.0f);
        alphabet_->draw(preview, i, {0, 0, 32, 32}, corpus::GlyphStyle::canonical());
        glyphs.push_back({{"index", i}, {"label", alphabet_->label(i)}, {"preview", png_base64(preview)}});
    }
    return {200, {{"glyphs", glyphs}}};
}

ServiceReply RepairService::repair(const std::string& body) {
    json request;
    try {
        request = json::parse(body);
    } catch (const json::parse_error& e) {
        return {400, {{"error", "body is not JSON"}, {"message", e.what()}}};
    }
    if (!request.is_object()) return {400, {{"error", "body must be a JSON object"}}};
    try {
        return run_repair(request);
    } catch (const std::exception& e) {
        const auto id = incident_id();
        spdlog::error("incident {}: repair failed: {}", id, e.what());
        return {500, {{"error", "repair failed"}, {"incident", id}}};
    }
}

ServiceReply RepairService::run_repair(const json& request) {
    const auto t0 = Clock::now();
    FieldErrors errors;
    static const std::vector<std::string> known = {"image", "edits", "mode", "scales", "steps", "seed", "mask"};
    for (auto it = request.begin(); it != request.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) errors.add(it.key(), "unknown field");

    std::optional<Image> page;
    if (!request.contains("image"))
        errors.add("image", "required");
    else
        page = decode_image(request.at("image"), "image", 3, errors);

    sampler::DocumentRepairConfig dcfg;
    dcfg.scales = cfg_.scales;
    dcfg.sampler = cfg_.sampler;
    dcfg.sampler.solver = sampler::Solver::MultistepFast;
    if (request.contains("mode")) {
        try {
            dcfg.mode = sampler::parse_mode(request.at("mode").get<std::string>());
        } catch (const std::exception&) {
            errors.add("mode", "must be one of REPAIR, EDIT, TEXT_BLOCK");
        }
    }
    if (request.contains("scales")) {
        const auto& s = request.at("scales");
        try {
            if (s.is_array() && s.size() == 2)
                dcfg.scales = {s.at(0).get<double>(), s.at(1).get<double>()};
            else
                dcfg.scales = s.get<sampler::GuidanceScales>();
            dcfg.scales.validate();
        } catch (const std::exception&) {
            errors.add("scales", "must be {\"s_d\": x, \"s_cm\": y} or [s_d, s_cm] with finite non-negative values");
        }
    }
    if (request.contains("seed")) {
        const auto& v = request.at("seed");
        if (v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0))
            dcfg.sampler.seed = v.get<std::uint64_t>();
        else
            errors.add("seed", "must be a non-negative integer");
    }

    std::shared_ptr<const ServedModel> model;
    std::optional<corpus::Alphabet> alphabet;
    {
        std::lock_guard lock(mu_);
        model = model_;
        alphabet = alphabet_;
    }
    if (request.contains("steps")) {
        const auto& v = request.at("steps");
        const int t_max = model ? model->schedule.T_max : 1 << 30;
        if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<long long>() > t_max)
            errors.add("steps", "must be an integer in [1, " + std::to_string(t_max) + "]");
        else
            dcfg.sampler.steps = v.get<int>();
    }

    std::vector<sampler::Edit> edits;
    if (request.contains("edits")) {
        const auto& list = request.at("edits");
        if (!list.is_array()) errors.add("edits", "must be an array");
        for (std::size_t i = 0; list.is_array() && i < list.size(); ++i) {
            const std::string field = "edits[" + std::to_string(i) + "]";
            const auto& e = list[i];
            sampler::Edit edit;
            if (!e.is_object() || !e.contains("bbox") || !e.at("bbox").is_array() || e.at("bbox").size() != 4) {
                errors.add(field + ".bbox", "must be [x0, y0, x1, y1]");
                continue;
            }
            try {
                const auto& b = e.at("bbox");
                edit.bbox = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
            } catch (const std::exception&) {
                errors.add(field + ".bbox", "coordinates must be integers");
                continue;
            }
            if (!edit.bbox.valid()) errors.add(field + ".bbox", "needs x0 < x1 and y0 < y1");
            if (page && (edit.bbox.x0 < 0 || edit.bbox.y0 < 0 || edit.bbox.x1 > page->width() || edit.bbox.y1 > page->height()))
                errors.add(field + ".bbox", "lies outside the image");
            if (e.contains("text") && !e.at("text").is_string()) errors.add(field + ".text", "must be a string");
            edit.text = e.value("text", std::string());
            try {
                const auto chars = corpus::split_codepoints(edit.text);
                for (const auto& c : chars)
                    if (alphabet && !alphabet->contains(c)) errors.add(field + ".text", "'" + c + "' is not in the alphabet");
                if (dcfg.mode == sampler::RepairMode::Edit && chars.size() != 1)
                    errors.add(field + ".text", "EDIT needs exactly one character");
                if (dcfg.mode == sampler::RepairMode::TextBlock && chars.empty())
                    errors.add(field + ".text", "TEXT_BLOCK needs at least one character");
                if (dcfg.mode == sampler::RepairMode::Repair && chars.size() > 1)
                    errors.add(field + ".text", "REPAIR takes at most one character per box");
            } catch (const std::exception&) {
                errors.add(field + ".text", "invalid UTF-8");
            }
            edits.push_back(edit);
        }
    }
    if (request.contains("mask")) {
        if (auto m = decode_image(request.at("mask"), "mask", 1, errors)) {
            if (page && (m->height() != page->height() || m->width() != page->width())) {
                errors.add("mask", "must match the image size");
            } else {
                Mask mask(m->height(), m->width());
                for (int y = 0; y < m->height(); ++y)
                    for (int x = 0; x < m->width(); ++x) mask.at(y, x) = m->at(y, x) >= 0.5f;
                dcfg.extra_mask = std::move(mask);
            }
        }
    }
    const bool has_mask = dcfg.extra_mask && dcfg.extra_mask->area() > 0;
    const bool edits_given = request.contains("edits") && request.at("edits").is_array() && !request.at("edits").empty();
    if (!edits_given && (dcfg.mode != sampler::RepairMode::Repair || !has_mask)) {
        errors.add("edits", dcfg.mode == sampler::RepairMode::Repair ? "REPAIR needs at least one edit or a mask"
                                                                      : "at least one edit is required");
    }
    if (!errors.empty()) return errors.reply();
    if (!model) return {503, {{"error", "model not loaded"}, {"status", health().body.at("status")}}};

    dcfg.window = model->patch_size;
    const auto queued = Clock::now();
    if (!workers_.try_acquire_for(std::chrono::seconds(cfg_.service.queue_timeout_s)))
        return {503, {{"error", "inference queue timed out"}, {"timeout_s", cfg_.service.queue_timeout_s}}};
    const double queue_ms = ms_since(queued);
    sampler::DocumentRepairResult result;
    const auto infer_t0 = Clock::now();
    try {
        result = sampler::repair_document(model->fn, model->schedule, *alphabet, *page, edits, dcfg);
    } catch (const PreconditionError& e) {
        workers_.release();
        return {422, {{"error", "invalid request"}, {"fields", {{"edits", e.what()}}}}};
    } catch (...) {
        workers_.release();
        throw;
    }
    workers_.release();
    const double infer_ms = ms_since(infer_t0);

    json crops = json::array();
    for (const auto& e : edits)
        crops.push_back({{"bbox", {e.bbox.x0, e.bbox.y0, e.bbox.x1, e.bbox.y1}},
                         {"before", png_base64(page->crop(e.bbox))},
                         {"after", png_base64(result.repaired.crop(e.bbox))}});
    const json settings = {{"mode", sampler::to_string(dcfg.mode)},
                           {"scales", dcfg.scales},
                           {"sampler", dcfg.sampler},
                           {"window", dcfg.window},
                           {"app", cfg_.digest()}};
    return {200,
            {{"image", png_base64(result.repaired)},
             {"width", result.repaired.width()},
             {"height", result.repaired.height()},
             {"crops", crops},
             {"windows", result.windows.size()},
             {"seed", dcfg.sampler.seed},
             {"timing_ms", {{"queue", queue_ms}, {"inference", infer_ms}, {"total", ms_since(t0)}}},
             {"model_digest", model->digest},
             {"config_digest", io::sha256_hex(settings.dump())}}};
}

void RepairService::routes() {
    auto send = [](httplib::Response& res, const ServiceReply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server_->Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server_->Get("/model", [this, send](const httplib::Request&, httplib::Response& res) { send(res, model_info()); });
    server_->Get("/alphabet", [this, send](const httplib::Request&, httplib::Response& res) { send(res, alphabet()); });
    server_->Post("/repair", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, repair(req.body));
    });
    server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        const auto id = incident_id();
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            spdlog::error("incident {}: {}", id, e.what());
        } catch (...) {
            spdlog::error("incident {}: unknown error", id);
        }
        res.status = 500;
        res.set_content(json{{"error", "internal error"}, {"incident", id}}.dump(), "application/json");
    });
    server_->set_payload_max_length(64 << 20);
}

bool RepairService::listen(const std::string& host, int port) {
    spdlog::info("serving on http://{}:{}", host, port);
    return server_->listen(host, port);
}

int RepairService::start(const std::string& host) {
    const int port = server_->bind_to_any_port(host);
    if (port < 0) throw IoError("cannot bind " + host);
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void RepairService::stop() {
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace hdr::app
