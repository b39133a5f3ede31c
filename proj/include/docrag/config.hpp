#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "docrag/gateway.hpp"

namespace docrag {

struct PipelineConfig {
    std::size_t window = 1200;
    std::size_t overlap = 100;
    std::size_t k_entities = 40;
    std::size_t k_chunks = 20;
    std::size_t context_budget = 8000;
    std::size_t embedding_dim = 1024;
    std::size_t extract_max_rounds = 2;
    std::size_t neighbor_radius = 1;
    std::size_t workers = 4;
    bool rerank = true;
    bool lenient = false;  // dangling asset paths are dropped with an issue instead of failing the document
};

struct GatewaySettings {
    int retries = 3;
    int backoff_ms = 500;
    std::string cassette;  // empty: no cassette
    std::string cassette_mode = "passthrough";
};

struct Config {
    std::vector<ModelEndpoint> endpoints;
    PriceTable prices;
    PipelineConfig pipeline;
    GatewaySettings gateway;
};

// One endpoint per role with the model name equal to the role name.
Config default_config();

// INI document: one section per role ([router_slm], [reasoning_llm], ...)
// with base_url, model, temperature, top_p, max_in_flight, api_key_env,
// price_prompt_per_1k, price_completion_per_1k; plus [pipeline] and
// [gateway]. Credentials are never read from the file, only the name of the
// variable that holds them.
Config load_config(const std::filesystem::path& path);

GatewayOptions gateway_options(const Config& config);

}  // namespace docrag
