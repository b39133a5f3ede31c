#pragma once

// Deterministic stand-in for the model endpoints. Replies follow the
// OpenAI-compatible wire shapes so the gateway parses them exactly as it
// would parse a live server.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docrag/gateway.hpp"

namespace docrag::testkit {

struct BackendOptions {
    std::size_t embedding_dim = 1024;
    std::uint64_t image_tokens = 85;  // prompt tokens charged per attached image
};

class ScriptedBackend {
public:
    explicit ScriptedBackend(BackendOptions options = {}) : options_(options) {}

    nlohmann::json handle(Role role, const std::string& path, const nlohmann::json& body) const;

    // Individual behaviours, exposed for oracles.
    std::string route_reply(const std::string& user) const;
    std::string extract_reply(const std::string& user) const;
    std::string perceive_reply(const std::string& image_bytes, const std::string& user) const;
    std::string reason_reply(const std::string& system, const std::string& user) const;
    std::vector<double> embed_text(const std::string& text) const;
    double rerank_score(const std::string& query, const std::string& document) const;

    const BackendOptions& options() const { return options_; }

private:
    BackendOptions options_;
};

std::uint64_t whitespace_tokens(const std::string& text);

// A chat-completion reply body carrying `content`.
nlohmann::json chat_reply(const std::string& content, std::uint64_t prompt_tokens = 1);

// Capitalized word runs, excluding sentence-leading function words.
std::vector<std::string> capitalized_runs(const std::string& sentence);
std::vector<std::string> split_sentences(const std::string& text);

// Fault hook: return a status code to fail the call (429/5xx -> transport
// error, anything else -> protocol error), or nullopt to let it through.
using FaultHook = std::function<std::optional<int>(Role role, const std::string& path, std::size_t call_index)>;

class ScriptedTransport final : public Transport {
public:
    explicit ScriptedTransport(std::shared_ptr<const ScriptedBackend> backend) : backend_(std::move(backend)) {}

    nlohmann::json post(const ModelEndpoint& endpoint, const std::string& path, const nlohmann::json& body) override;

    void set_fault(FaultHook hook) { fault_ = std::move(hook); }
    void set_delay(std::chrono::milliseconds d) { delay_ = d; }
    // Replaces the reply for one role with a fixed chat message.
    void set_override(Role role, std::string message);

    std::size_t calls() const { return calls_.load(); }
    std::size_t calls_for(Role role) const;
    std::size_t max_in_flight() const { return max_in_flight_.load(); }
    std::vector<nlohmann::json> bodies_for(Role role) const;

private:
    std::shared_ptr<const ScriptedBackend> backend_;
    FaultHook fault_;
    std::chrono::milliseconds delay_{0};
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
    mutable std::mutex mu_;
    std::map<Role, std::size_t> per_role_;
    std::map<Role, std::string> overrides_;
    std::map<Role, std::vector<nlohmann::json>> bodies_;
};

std::vector<ModelEndpoint> default_endpoints(int max_in_flight = 8);

// Prices used throughout the tests (per 1k tokens).
PriceTable test_prices();

}  // namespace docrag::testkit
