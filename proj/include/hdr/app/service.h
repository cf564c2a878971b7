#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "hdr/app/config.h"
#include "hdr/corpus/alphabet.h"
#include "hdr/diffusion/schedule.h"
#include "hdr/diffusion/train.h"
#include "hdr/sampler/sampler.h"

namespace httplib {
class Server;
}

namespace hdr::app {

struct ServiceReply {
    int status = 200;
    nlohmann::json body;
};

// What the service needs from a checkpoint.
struct ServedModel {
    sampler::ModelFn fn;
    diffusion::NoiseSchedule schedule;
    std::string digest;
    int alphabet_size = 0;
    int patch_size = 0;
};

ServedModel served_model(const diffusion::LoadedDenoiser& loaded);

// The repair API. Handlers are plain functions of the request body so they can be tested without a socket;
// `listen` and `start` put them behind HTTP.
class RepairService {
public:
    static constexpr int kMaxWorkers = 64;

    explicit RepairService(AppConfig cfg);
    ~RepairService();
    RepairService(const RepairService&) = delete;
    RepairService& operator=(const RepairService&) = delete;

    // Loads the checkpoint on a background thread; /health reports "loading" until it is done.
    void load_async(std::filesystem::path checkpoint);
    void set_model(ServedModel model);

    ServiceReply health() const;
    ServiceReply model_info() const;
    ServiceReply alphabet() const;
    ServiceReply repair(const std::string& body);

    // Blocks serving on host:port until stop().
    bool listen(const std::string& host, int port);
    // Serves on an ephemeral port from a background thread and returns the port.
    int start(const std::string& host = "127.0.0.1");
    void stop();

private:
    void routes();
    ServiceReply run_repair(const nlohmann::json& request);

    AppConfig cfg_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    std::thread loader_;

    mutable std::mutex mu_;
    std::shared_ptr<const ServedModel> model_;
    std::optional<corpus::Alphabet> alphabet_;
    std::string load_error_;
    std::counting_semaphore<kMaxWorkers> workers_;
};

}  // namespace hdr::app
