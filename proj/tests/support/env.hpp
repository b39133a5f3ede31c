#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "docrag/workspace.hpp"
#include "scripted_backend.hpp"

namespace docrag::testkit {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "docrag") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Config test_config(std::size_t dim = 64) {
    Config c = default_config();
    c.endpoints = default_endpoints();
    c.prices = test_prices();
    c.pipeline.embedding_dim = dim;
    c.pipeline.window = 200;
    c.pipeline.overlap = 20;
    c.pipeline.workers = 4;
    return c;
}

inline GatewayOptions test_gateway_options(const Config& c) {
    GatewayOptions o = gateway_options(c);
    o.backoff = std::chrono::milliseconds(1);
    o.keep_request_log = true;
    return o;
}

// A workspace wired to the scripted backend, optionally through a cassette.
struct TestEnv {
    std::shared_ptr<ScriptedBackend> backend;
    std::shared_ptr<ScriptedTransport> transport;
    std::shared_ptr<FixtureCassette> cassette;
    std::unique_ptr<Workspace> ws;

    explicit TestEnv(Config config = test_config(), std::shared_ptr<FixtureCassette> cas = nullptr) {
        BackendOptions bo;
        bo.embedding_dim = config.pipeline.embedding_dim;
        backend = std::make_shared<ScriptedBackend>(bo);
        transport = std::make_shared<ScriptedTransport>(backend);
        cassette = std::move(cas);
        const GatewayOptions go = test_gateway_options(config);
        ws = std::make_unique<Workspace>(std::move(config), transport, cassette, go);
    }
};

}  // namespace docrag::testkit
