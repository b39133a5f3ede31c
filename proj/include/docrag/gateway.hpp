#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "docrag/errors.hpp"

namespace docrag {

enum class Role { router_slm, extractor_llm, embedder, reranker, perception_vlm, reasoning_llm };
enum class StageTag { routing, extraction, embedding, image_description, summary };

inline constexpr Role kAllRoles[] = {Role::router_slm,     Role::extractor_llm,  Role::embedder,
                                     Role::reranker,       Role::perception_vlm, Role::reasoning_llm};
inline constexpr StageTag kAllStages[] = {StageTag::routing, StageTag::extraction, StageTag::embedding,
                                          StageTag::image_description, StageTag::summary};

std::string_view to_string(Role role);
std::string_view to_string(StageTag stage);
Role parse_role(std::string_view name);
StageTag parse_stage(std::string_view name);
bool is_generative(Role role);

struct ModelEndpoint {
    Role role = Role::reasoning_llm;
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model_name;
    double temperature = 0.7;
    double top_p = 0.9;
    int max_in_flight = 8;
    // Name of the environment variable holding a bearer token; empty means none.
    std::string api_key_env;
};

struct ImageInput {
    std::string media_type;  // e.g. "image/png"
    std::string bytes;       // raw file content
    std::string source;      // storage path, for logs only
};

struct ChatRequest {
    std::string system;
    std::string user;
    std::vector<ImageInput> images;

    bool empty() const { return system.empty() && user.empty() && images.empty(); }
};

struct ModelCall {
    Role role = Role::reasoning_llm;
    std::string model_name;
    StageTag stage = StageTag::summary;
    std::string response;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;

    std::uint64_t total_tokens() const { return prompt_tokens + completion_tokens; }
};

// One ledger line; the response text is not kept.
struct CallSummary {
    Role role = Role::reasoning_llm;
    std::string model_name;
    StageTag stage = StageTag::summary;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;

    std::uint64_t total_tokens() const { return prompt_tokens + completion_tokens; }
    friend bool operator==(const CallSummary&, const CallSummary&) = default;
};

void to_json(nlohmann::json& j, const CallSummary& c);
void from_json(const nlohmann::json& j, CallSummary& c);

// Prices are in currency units per 1000 tokens.
struct Price {
    double prompt_per_1k = 0.0;
    double completion_per_1k = 0.0;
};
using PriceTable = std::map<std::string, Price>;

double call_cost(const CallSummary& call, const PriceTable& prices);

class CostLedger {
public:
    CostLedger() = default;
    CostLedger(const CostLedger& other);
    CostLedger& operator=(const CostLedger& other);

    void append(CallSummary call);
    void append(const ModelCall& call);
    void extend(const CostLedger& other);

    std::vector<CallSummary> entries() const;
    std::size_t size() const;
    std::uint64_t total_tokens() const;
    std::uint64_t tokens_for(StageTag stage) const;
    std::size_t count_for(StageTag stage) const;
    double total_cost(const PriceTable& prices) const;

    void save_jsonl(const std::string& path) const;
    static CostLedger load_jsonl(const std::string& path);

private:
    mutable std::mutex mu_;
    std::vector<CallSummary> entries_;
};

struct StageTotals {
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    std::size_t calls = 0;
    double cost = 0.0;

    std::uint64_t tokens() const { return prompt_tokens + completion_tokens; }
};

struct Savings {
    std::int64_t tokens_abs = 0;
    double cost_abs = 0.0;
    std::optional<double> tokens_rel;  // absent when the baseline total is zero
    std::optional<double> cost_rel;
};

struct CostReport {
    std::map<StageTag, StageTotals> stages;  // only stages that occur
    StageTotals total;
    std::optional<Savings> total_savings;
    std::map<StageTag, Savings> stage_savings;

    nlohmann::json to_json() const;
};

// Per-stage subtotals of `ledger`. With a baseline, savings are
// (baseline - ledger) / baseline per stage and overall.
CostReport ledger_report(const CostLedger& ledger, const PriceTable& prices, const CostLedger* baseline = nullptr);

// --- record/replay ---

struct CassetteRecord {
    std::string fingerprint;
    nlohmann::json response;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
};

class FixtureCassette {
public:
    enum class Mode { record, replay, passthrough };

    explicit FixtureCassette(Mode mode = Mode::passthrough) : mode_(mode) {}
    FixtureCassette(FixtureCassette&& other) noexcept : mode_(other.mode_), records_(std::move(other.records_)) {}

    static FixtureCassette load(const std::string& path, Mode mode);
    // Records are written sorted by fingerprint, one JSON object per line.
    void save(const std::string& path) const;

    Mode mode() const { return mode_; }
    std::optional<CassetteRecord> find(const std::string& fingerprint) const;
    void put(CassetteRecord record);
    std::size_t size() const;

private:
    Mode mode_;
    mutable std::shared_mutex mu_;
    std::map<std::string, CassetteRecord> records_;
};

FixtureCassette::Mode parse_cassette_mode(std::string_view name);

// sha256 over role name and the canonical (key-sorted) request JSON.
std::string request_fingerprint(Role role, const nlohmann::json& body);

// --- transport ---

// A failure worth retrying: connection refused, timeouts, 429 and 5xx.
class TransportError : public Error {
public:
    using Error::Error;
};

class Transport {
public:
    virtual ~Transport() = default;
    // POSTs `body` to endpoint.base_url + path and returns the parsed reply.
    virtual nlohmann::json post(const ModelEndpoint& endpoint, const std::string& path, const nlohmann::json& body) = 0;
};

class HttpTransport final : public Transport {
public:
    explicit HttpTransport(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}
    nlohmann::json post(const ModelEndpoint& endpoint, const std::string& path, const nlohmann::json& body) override;

private:
    std::chrono::seconds timeout_;
};

// --- gateway ---

struct GatewayOptions {
    int max_attempts = 3;
    std::chrono::milliseconds backoff{500};
    std::size_t embedding_dim = 1024;
    std::size_t embed_batch = 32;
    bool keep_request_log = false;
};

struct RequestLogEntry {
    Role role = Role::reasoning_llm;
    StageTag stage = StageTag::summary;
    std::string system;
    std::string user;
    std::size_t image_count = 0;
};

struct RerankResult {
    std::vector<std::pair<std::size_t, double>> ranking;  // (candidate index, score), best first
    bool degraded = false;
};

class Gateway {
public:
    Gateway(std::vector<ModelEndpoint> endpoints, std::shared_ptr<Transport> transport,
            std::shared_ptr<FixtureCassette> cassette = nullptr, GatewayOptions options = {});
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    // Every call is appended to the gateway ledger and, when given, to `slice`.
    ModelCall complete(Role role, const ChatRequest& request, StageTag stage, CostLedger* slice = nullptr);
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts, CostLedger* slice = nullptr);
    RerankResult rerank(const std::string& query, const std::vector<std::string>& candidates,
                        CostLedger* slice = nullptr);

    const ModelEndpoint& endpoint(Role role) const;
    const GatewayOptions& options() const { return options_; }
    const CostLedger& ledger() const { return ledger_; }
    std::vector<RequestLogEntry> request_log() const;
    std::shared_ptr<FixtureCassette> cassette() const { return cassette_; }

private:
    struct Limiter;

    CassetteRecord dispatch(Role role, const std::string& path, const nlohmann::json& body,
                            const std::function<CassetteRecord(const nlohmann::json&)>& parse);
    nlohmann::json post_with_retries(Role role, const std::string& path, const nlohmann::json& body);
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts, CostLedger* slice);
    void log_request(RequestLogEntry entry);

    std::map<Role, ModelEndpoint> endpoints_;
    std::map<Role, std::unique_ptr<Limiter>> limiters_;
    std::shared_ptr<Transport> transport_;
    std::shared_ptr<FixtureCassette> cassette_;
    GatewayOptions options_;
    CostLedger ledger_;
    mutable std::mutex log_mu_;
    std::vector<RequestLogEntry> request_log_;
};

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace docrag
