#include "docrag/config.hpp"

#include <optional>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace docrag {

namespace pt = boost::property_tree;

namespace {

// Unlike ptree::get with a default, a present but unparseable value throws.
template <class T>
T read(const pt::ptree& section, const char* key, T fallback) {
    if (!section.get_child_optional(key)) return fallback;
    return section.get<T>(key);
}

std::optional<double> read_price(const pt::ptree& section, const char* key) {
    if (!section.get_child_optional(key)) return std::nullopt;
    return section.get<double>(key);
}

}  // namespace

Config default_config() {
    Config c;
    for (Role r : kAllRoles) {
        ModelEndpoint ep;
        ep.role = r;
        ep.model_name = std::string(to_string(r));
        c.endpoints.push_back(ep);
    }
    return c;
}

Config load_config(const std::filesystem::path& path) {
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(e.what());
    }

    Config c;
    try {
        for (Role r : kAllRoles) {
            const std::string name(to_string(r));
            ModelEndpoint ep;
            ep.role = r;
            ep.model_name = name;
            if (auto s = tree.get_child_optional(name)) {
                ep.base_url = read(*s, "base_url", ep.base_url);
                ep.model_name = read(*s, "model", ep.model_name);
                ep.temperature = read(*s, "temperature", ep.temperature);
                ep.top_p = read(*s, "top_p", ep.top_p);
                ep.max_in_flight = read(*s, "max_in_flight", ep.max_in_flight);
                ep.api_key_env = read(*s, "api_key_env", ep.api_key_env);
                if (s->count("api_key")) throw ConfigError("[" + name + "] api_key: credentials belong in the environment");
                auto prompt = read_price(*s, "price_prompt_per_1k");
                auto completion = read_price(*s, "price_completion_per_1k");
                if (prompt || completion) c.prices[ep.model_name] = Price{prompt.value_or(0.0), completion.value_or(0.0)};
            }
            if (ep.max_in_flight < 1) throw ConfigError("[" + name + "] max_in_flight must be at least 1");
            c.endpoints.push_back(ep);
        }

        PipelineConfig& p = c.pipeline;
        if (auto s = tree.get_child_optional("pipeline")) {
            p.window = read(*s, "window", p.window);
            p.overlap = read(*s, "overlap", p.overlap);
            p.k_entities = read(*s, "k_entities", p.k_entities);
            p.k_chunks = read(*s, "k_chunks", p.k_chunks);
            p.context_budget = read(*s, "context_budget", p.context_budget);
            p.embedding_dim = read(*s, "embedding_dim", p.embedding_dim);
            p.extract_max_rounds = read(*s, "extract_max_rounds", p.extract_max_rounds);
            p.neighbor_radius = read(*s, "neighbor_radius", p.neighbor_radius);
            p.workers = read(*s, "workers", p.workers);
            p.rerank = read(*s, "rerank", p.rerank);
            p.lenient = read(*s, "lenient", p.lenient);
        }
        if (p.window == 0 || p.overlap >= p.window) throw ConfigError("[pipeline] overlap must be smaller than window");
        if (p.k_entities == 0 || p.k_chunks == 0) throw ConfigError("[pipeline] k values must be positive");
        if (p.workers == 0) p.workers = 1;

        GatewaySettings& g = c.gateway;
        if (auto s = tree.get_child_optional("gateway")) {
            g.retries = read(*s, "retries", g.retries);
            g.backoff_ms = read(*s, "backoff_ms", g.backoff_ms);
            g.cassette = read(*s, "cassette", g.cassette);
            g.cassette_mode = read(*s, "cassette_mode", g.cassette_mode);
        }
        parse_cassette_mode(g.cassette_mode);
    } catch (const pt::ptree_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return c;
}

GatewayOptions gateway_options(const Config& config) {
    GatewayOptions o;
    o.max_attempts = std::max(1, config.gateway.retries);
    o.backoff = std::chrono::milliseconds(config.gateway.backoff_ms);
    o.embedding_dim = config.pipeline.embedding_dim;
    return o;
}

}  // namespace docrag
