#include "docrag/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <openssl/evp.h>
#include <openssl/sha.h>

namespace docrag {

using nlohmann::json;

// ---------------------------------------------------------------------------
// enums

std::string_view to_string(Role role) {
    switch (role) {
        case Role::router_slm: return "router_slm";
        case Role::extractor_llm: return "extractor_llm";
        case Role::embedder: return "embedder";
        case Role::reranker: return "reranker";
        case Role::perception_vlm: return "perception_vlm";
        case Role::reasoning_llm: return "reasoning_llm";
    }
    return "unknown";
}

std::string_view to_string(StageTag stage) {
    switch (stage) {
        case StageTag::routing: return "routing";
        case StageTag::extraction: return "extraction";
        case StageTag::embedding: return "embedding";
        case StageTag::image_description: return "image_description";
        case StageTag::summary: return "summary";
    }
    return "unknown";
}

Role parse_role(std::string_view name) {
    for (Role r : kAllRoles)
        if (to_string(r) == name) return r;
    throw ConfigError("unknown model role '" + std::string(name) + "'");
}

StageTag parse_stage(std::string_view name) {
    for (StageTag s : kAllStages)
        if (to_string(s) == name) return s;
    throw ConfigError("unknown stage tag '" + std::string(name) + "'");
}

bool is_generative(Role role) {
    return role == Role::router_slm || role == Role::extractor_llm || role == Role::perception_vlm ||
           role == Role::reasoning_llm;
}

FixtureCassette::Mode parse_cassette_mode(std::string_view name) {
    if (name == "record") return FixtureCassette::Mode::record;
    if (name == "replay") return FixtureCassette::Mode::replay;
    if (name == "passthrough") return FixtureCassette::Mode::passthrough;
    throw ConfigError("unknown cassette mode '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// ledger

void to_json(json& j, const CallSummary& c) {
    j = json{{"role", to_string(c.role)},
             {"model", c.model_name},
             {"stage", to_string(c.stage)},
             {"prompt_tokens", c.prompt_tokens},
             {"completion_tokens", c.completion_tokens}};
}

void from_json(const json& j, CallSummary& c) {
    c.role = parse_role(j.at("role").get<std::string>());
    c.model_name = j.at("model").get<std::string>();
    c.stage = parse_stage(j.at("stage").get<std::string>());
    c.prompt_tokens = j.at("prompt_tokens").get<std::uint64_t>();
    c.completion_tokens = j.at("completion_tokens").get<std::uint64_t>();
}

double call_cost(const CallSummary& call, const PriceTable& prices) {
    auto it = prices.find(call.model_name);
    if (it == prices.end()) throw PriceUnknown(call.model_name);
    return (static_cast<double>(call.prompt_tokens) * it->second.prompt_per_1k +
            static_cast<double>(call.completion_tokens) * it->second.completion_per_1k) /
           1000.0;
}

CostLedger::CostLedger(const CostLedger& other) : entries_(other.entries()) {}

CostLedger& CostLedger::operator=(const CostLedger& other) {
    if (this != &other) {
        auto copy = other.entries();
        std::lock_guard lock(mu_);
        entries_ = std::move(copy);
    }
    return *this;
}

void CostLedger::append(CallSummary call) {
    std::lock_guard lock(mu_);
    entries_.push_back(std::move(call));
}

void CostLedger::append(const ModelCall& call) {
    append(CallSummary{call.role, call.model_name, call.stage, call.prompt_tokens, call.completion_tokens});
}

void CostLedger::extend(const CostLedger& other) {
    auto more = other.entries();
    std::lock_guard lock(mu_);
    entries_.insert(entries_.end(), more.begin(), more.end());
}

std::vector<CallSummary> CostLedger::entries() const {
    std::lock_guard lock(mu_);
    return entries_;
}

std::size_t CostLedger::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::uint64_t CostLedger::total_tokens() const {
    std::lock_guard lock(mu_);
    std::uint64_t sum = 0;
    for (const auto& e : entries_) sum += e.total_tokens();
    return sum;
}

std::uint64_t CostLedger::tokens_for(StageTag stage) const {
    std::lock_guard lock(mu_);
    std::uint64_t sum = 0;
    for (const auto& e : entries_)
        if (e.stage == stage) sum += e.total_tokens();
    return sum;
}

std::size_t CostLedger::count_for(StageTag stage) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const CallSummary& e) { return e.stage == stage; }));
}

double CostLedger::total_cost(const PriceTable& prices) const {
    std::lock_guard lock(mu_);
    double sum = 0.0;
    for (const auto& e : entries_) sum += call_cost(e, prices);
    return sum;
}

void CostLedger::save_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write ledger " + path);
    for (const auto& e : entries()) out << json(e).dump() << '\n';
}

CostLedger CostLedger::load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read ledger " + path);
    CostLedger ledger;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            ledger.append(json::parse(line).get<CallSummary>());
        } catch (const json::exception& e) {
            throw ProtocolError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return ledger;
}

namespace {

StageTotals accumulate(const std::vector<CallSummary>& entries, const PriceTable& prices,
                       std::map<StageTag, StageTotals>& stages) {
    StageTotals total;
    for (const auto& e : entries) {
        const double cost = call_cost(e, prices);
        auto& s = stages[e.stage];
        s.prompt_tokens += e.prompt_tokens;
        s.completion_tokens += e.completion_tokens;
        s.calls += 1;
        s.cost += cost;
    }
    // Grand totals are the sum of the stage subtotals so they agree exactly.
    for (const auto& [_, s] : stages) {
        total.prompt_tokens += s.prompt_tokens;
        total.completion_tokens += s.completion_tokens;
        total.calls += s.calls;
        total.cost += s.cost;
    }
    return total;
}

Savings savings_between(const StageTotals& baseline, const StageTotals& current) {
    Savings s;
    s.tokens_abs = static_cast<std::int64_t>(baseline.tokens()) - static_cast<std::int64_t>(current.tokens());
    s.cost_abs = baseline.cost - current.cost;
    if (baseline.tokens() > 0) s.tokens_rel = static_cast<double>(s.tokens_abs) / static_cast<double>(baseline.tokens());
    if (baseline.cost > 0.0) s.cost_rel = s.cost_abs / baseline.cost;
    return s;
}

json savings_json(const Savings& s) {
    json j{{"tokens_abs", s.tokens_abs}, {"cost_abs", s.cost_abs}};
    j["tokens_rel"] = s.tokens_rel ? json(*s.tokens_rel) : json(nullptr);
    j["cost_rel"] = s.cost_rel ? json(*s.cost_rel) : json(nullptr);
    return j;
}

json totals_json(const StageTotals& t) {
    return json{{"prompt_tokens", t.prompt_tokens},
                {"completion_tokens", t.completion_tokens},
                {"tokens", t.tokens()},
                {"calls", t.calls},
                {"cost", t.cost}};
}

}  // namespace

CostReport ledger_report(const CostLedger& ledger, const PriceTable& prices, const CostLedger* baseline) {
    CostReport report;
    report.total = accumulate(ledger.entries(), prices, report.stages);
    if (baseline == nullptr) return report;

    std::map<StageTag, StageTotals> base_stages;
    const StageTotals base_total = accumulate(baseline->entries(), prices, base_stages);
    if (base_total.tokens() > 0 || report.total.tokens() > 0)
        report.total_savings = savings_between(base_total, report.total);
    for (StageTag tag : kAllStages) {
        const bool in_base = base_stages.count(tag) > 0;
        const bool in_this = report.stages.count(tag) > 0;
        if (!in_base && !in_this) continue;
        const StageTotals b = in_base ? base_stages.at(tag) : StageTotals{};
        const StageTotals c = in_this ? report.stages.at(tag) : StageTotals{};
        report.stage_savings[tag] = savings_between(b, c);
    }
    return report;
}

json CostReport::to_json() const {
    json j;
    json st = json::object();
    for (const auto& [tag, t] : stages) st[std::string(docrag::to_string(tag))] = totals_json(t);
    j["stages"] = st;
    j["total"] = totals_json(total);
    if (total_savings) {
        j["total_savings"] = savings_json(*total_savings);
        json ss = json::object();
        for (const auto& [tag, s] : stage_savings) ss[std::string(docrag::to_string(tag))] = savings_json(s);
        j["stage_savings"] = ss;
    } else {
        j["total_savings"] = nullptr;
    }
    return j;
}

// ---------------------------------------------------------------------------
// cassette

FixtureCassette FixtureCassette::load(const std::string& path, Mode mode) {
    FixtureCassette cassette(mode);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        if (mode == Mode::replay) throw ConfigError("cannot open cassette " + path);
        return cassette;  // a record session may start from nothing
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            CassetteRecord r;
            r.fingerprint = j.at("fingerprint").get<std::string>();
            r.response = j.at("response");
            r.prompt_tokens = j.at("prompt_tokens").get<std::uint64_t>();
            r.completion_tokens = j.at("completion_tokens").get<std::uint64_t>();
            cassette.records_[r.fingerprint] = std::move(r);
        } catch (const json::exception& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad cassette record: " + e.what());
        }
    }
    return cassette;
}

void FixtureCassette::save(const std::string& path) const {
    std::shared_lock lock(mu_);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cassette " + path);
    for (const auto& [fp, r] : records_) {
        json j{{"fingerprint", fp},
               {"response", r.response},
               {"prompt_tokens", r.prompt_tokens},
               {"completion_tokens", r.completion_tokens}};
        out << j.dump() << '\n';
    }
}

std::optional<CassetteRecord> FixtureCassette::find(const std::string& fingerprint) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(fingerprint);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void FixtureCassette::put(CassetteRecord record) {
    std::unique_lock lock(mu_);
    records_[record.fingerprint] = std::move(record);
}

std::size_t FixtureCassette::size() const {
    std::shared_lock lock(mu_);
    return records_.size();
}

std::string request_fingerprint(Role role, const json& body) {
    // nlohmann::json objects are key-ordered, so dump() is canonical.
    const std::string canonical = std::string(to_string(role)) + "\n" + body.dump();
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(canonical.data()), canonical.size(), digest);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char b : digest) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xF]);
    }
    return out;
}

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view text) {
    if (text.empty()) return {};
    if (text.size() % 4 != 0) throw ProtocolError("malformed base64 payload");
    std::string out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw ProtocolError("malformed base64 payload");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes that stand in for '=' padding.
    if (text.back() == '=') --len;
    if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
    out.resize(len);
    return out;
}

// ---------------------------------------------------------------------------
// gateway

struct Gateway::Limiter {
    explicit Limiter(int cap) : capacity(std::max(1, cap)) {}

    void acquire() {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return in_flight < capacity; });
        ++in_flight;
    }
    void release() {
        {
            std::lock_guard lock(mu);
            --in_flight;
        }
        cv.notify_one();
    }

    int capacity;
    int in_flight = 0;
    std::mutex mu;
    std::condition_variable cv;
};

namespace {

std::uint64_t usage_field(const json& usage, const char* key) {
    auto it = usage.find(key);
    if (it == usage.end() || it->is_null()) return 0;
    if (!it->is_number_integer() && !it->is_number_unsigned()) throw ProtocolError(std::string("usage.") + key + " is not an integer");
    const auto v = it->get<std::int64_t>();
    if (v < 0) throw ProtocolError(std::string("usage.") + key + " is negative");
    return static_cast<std::uint64_t>(v);
}

json chat_body(const ModelEndpoint& ep, const ChatRequest& request) {
    json messages = json::array();
    if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
    if (request.images.empty()) {
        messages.push_back({{"role", "user"}, {"content", request.user}});
    } else {
        json parts = json::array();
        for (const auto& img : request.images) {
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + img.media_type + ";base64," + base64_encode(img.bytes)}}}});
        }
        parts.push_back({{"type", "text"}, {"text", request.user}});
        messages.push_back({{"role", "user"}, {"content", parts}});
    }
    return json{{"model", ep.model_name},
                {"messages", messages},
                {"temperature", ep.temperature},
                {"top_p", ep.top_p}};
}

}  // namespace

Gateway::Gateway(std::vector<ModelEndpoint> endpoints, std::shared_ptr<Transport> transport,
                 std::shared_ptr<FixtureCassette> cassette, GatewayOptions options)
    : transport_(std::move(transport)), cassette_(std::move(cassette)), options_(options) {
    for (auto& ep : endpoints) {
        if (endpoints_.count(ep.role)) throw ConfigError("role " + std::string(to_string(ep.role)) + " bound twice");
        if (ep.max_in_flight < 1) throw ConfigError("max_in_flight must be positive");
        if (ep.temperature < 0.0 || ep.temperature > 1.0) throw ConfigError("temperature must lie in [0,1]");
        if (ep.top_p <= 0.0 || ep.top_p > 1.0) throw ConfigError("top_p must lie in (0,1]");
        if (ep.model_name.empty()) ep.model_name = std::string(to_string(ep.role));
        limiters_[ep.role] = std::make_unique<Limiter>(ep.max_in_flight);
        endpoints_[ep.role] = std::move(ep);
    }
    if (!cassette_) cassette_ = std::make_shared<FixtureCassette>(FixtureCassette::Mode::passthrough);
}

Gateway::~Gateway() = default;

const ModelEndpoint& Gateway::endpoint(Role role) const {
    auto it = endpoints_.find(role);
    if (it == endpoints_.end()) throw ConfigError("no endpoint configured for role " + std::string(to_string(role)));
    return it->second;
}

std::vector<RequestLogEntry> Gateway::request_log() const {
    std::lock_guard lock(log_mu_);
    return request_log_;
}

void Gateway::log_request(RequestLogEntry entry) {
    if (!options_.keep_request_log) return;
    std::lock_guard lock(log_mu_);
    request_log_.push_back(std::move(entry));
}

json Gateway::post_with_retries(Role role, const std::string& path, const json& body) {
    if (!transport_) throw ConfigError("no transport configured");
    const ModelEndpoint& ep = endpoint(role);
    Limiter& limiter = *limiters_.at(role);
    std::string last_error;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        limiter.acquire();
        try {
            json reply = transport_->post(ep, path, body);
            limiter.release();
            return reply;
        } catch (const TransportError& e) {
            limiter.release();
            last_error = e.what();
        } catch (...) {
            limiter.release();
            throw;
        }
        if (attempt < options_.max_attempts) std::this_thread::sleep_for(options_.backoff * (1 << (attempt - 1)));
    }
    throw RetryExhausted(std::string(to_string(role)) + " failed after " + std::to_string(options_.max_attempts) +
                         " attempts: " + last_error);
}

CassetteRecord Gateway::dispatch(Role role, const std::string& path, const json& body,
                                 const std::function<CassetteRecord(const json&)>& parse) {
    const auto mode = cassette_->mode();
    std::string fp;
    if (mode != FixtureCassette::Mode::passthrough) {
        fp = request_fingerprint(role, body);
        if (mode == FixtureCassette::Mode::replay) {
            auto hit = cassette_->find(fp);
            if (!hit) throw FixtureMiss(fp);
            return *hit;
        }
    }
    CassetteRecord rec = parse(post_with_retries(role, path, body));
    if (mode == FixtureCassette::Mode::record) {
        rec.fingerprint = fp;
        cassette_->put(rec);
    }
    return rec;
}

ModelCall Gateway::complete(Role role, const ChatRequest& request, StageTag stage, CostLedger* slice) {
    if (!is_generative(role)) throw InvalidArgument("complete() needs a generative role, got " + std::string(to_string(role)));
    if (request.empty()) throw InvalidArgument("empty request");
    const ModelEndpoint& ep = endpoint(role);
    const json body = chat_body(ep, request);
    log_request({role, stage, request.system, request.user, request.images.size()});

    CassetteRecord rec = dispatch(role, "/chat/completions", body, [](const json& reply) {
        CassetteRecord r;
        try {
            const json& msg = reply.at("choices").at(0).at("message");
            const json& content = msg.at("content");
            if (!content.is_string()) throw ProtocolError("message content is not a string");
            r.response = content.get<std::string>();
            const json& usage = reply.at("usage");
            r.prompt_tokens = usage_field(usage, "prompt_tokens");
            r.completion_tokens = usage_field(usage, "completion_tokens");
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("malformed chat completion: ") + e.what());
        }
        return r;
    });
    if (!rec.response.is_string()) throw ProtocolError("cassette response for chat call is not a string");

    ModelCall call{role, ep.model_name, stage, rec.response.get<std::string>(), rec.prompt_tokens, rec.completion_tokens};
    ledger_.append(call);
    if (slice) slice->append(call);
    return call;
}

std::vector<std::vector<double>> Gateway::embed(const std::vector<std::string>& texts, CostLedger* slice) {
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i].find_first_not_of(" \t\r\n") == std::string::npos)
            throw InvalidArgument("embed input " + std::to_string(i) + " is blank");
    }
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    const std::size_t batch = std::max<std::size_t>(1, options_.embed_batch);
    for (std::size_t start = 0; start < texts.size(); start += batch) {
        const std::size_t stop = std::min(texts.size(), start + batch);
        std::vector<std::string> part(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                      texts.begin() + static_cast<std::ptrdiff_t>(stop));
        auto vecs = embed_batch(part, slice);
        for (auto& v : vecs) out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<double>> Gateway::embed_batch(const std::vector<std::string>& texts, CostLedger* slice) {
    const ModelEndpoint& ep = endpoint(Role::embedder);
    const json body{{"model", ep.model_name}, {"input", texts}};
    const std::size_t n = texts.size();
    CassetteRecord rec = dispatch(Role::embedder, "/embeddings", body, [n](const json& reply) {
        CassetteRecord r;
        try {
            const json& data = reply.at("data");
            if (!data.is_array() || data.size() != n) throw ProtocolError("embedding count does not match input count");
            std::vector<json> ordered(n);
            for (std::size_t i = 0; i < data.size(); ++i) {
                const std::size_t idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
                if (idx >= n || !ordered[idx].is_null()) throw ProtocolError("bad embedding index");
                ordered[idx] = data[i].at("embedding");
            }
            r.response = ordered;
            if (reply.contains("usage")) {
                r.prompt_tokens = usage_field(reply.at("usage"), "prompt_tokens");
                r.completion_tokens = 0;
            }
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("malformed embedding reply: ") + e.what());
        }
        return r;
    });

    std::vector<std::vector<double>> vecs;
    try {
        vecs = rec.response.get<std::vector<std::vector<double>>>();
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("embedding payload is not a list of vectors: ") + e.what());
    }
    if (vecs.size() != n) throw ProtocolError("embedding count does not match input count");
    for (const auto& v : vecs) {
        if (v.size() != options_.embedding_dim)
            throw ProtocolError("embedding of dimension " + std::to_string(v.size()) + ", expected " +
                                std::to_string(options_.embedding_dim));
    }
    CallSummary call{Role::embedder, ep.model_name, StageTag::embedding, rec.prompt_tokens, rec.completion_tokens};
    ledger_.append(call);
    if (slice) slice->append(call);
    return vecs;
}

RerankResult Gateway::rerank(const std::string& query, const std::vector<std::string>& candidates, CostLedger* slice) {
    if (candidates.empty()) throw InvalidArgument("rerank needs at least one candidate");
    RerankResult result;
    const std::size_t n = candidates.size();
    if (n == 1) {
        result.ranking.emplace_back(0, 1.0);
        return result;
    }
    try {
        const ModelEndpoint& ep = endpoint(Role::reranker);
        const json body{{"model", ep.model_name}, {"query", query}, {"documents", candidates}};
        CassetteRecord rec = dispatch(Role::reranker, "/rerank", body, [n](const json& reply) {
            CassetteRecord r;
            try {
                std::vector<double> scores(n, std::nan(""));
                for (const auto& item : reply.at("results")) {
                    const auto idx = item.at("index").get<std::size_t>();
                    if (idx >= n) throw ProtocolError("rerank index out of range");
                    scores[idx] = item.at("relevance_score").get<double>();
                }
                for (double s : scores)
                    if (std::isnan(s)) throw ProtocolError("rerank reply misses a candidate");
                r.response = scores;
                if (reply.contains("usage")) {
                    const json& u = reply.at("usage");
                    r.prompt_tokens = u.contains("prompt_tokens") ? usage_field(u, "prompt_tokens")
                                                                  : usage_field(u, "total_tokens");
                }
            } catch (const json::exception& e) {
                throw ProtocolError(std::string("malformed rerank reply: ") + e.what());
            }
            return r;
        });
        const auto scores = rec.response.get<std::vector<double>>();
        if (scores.size() != n) throw ProtocolError("rerank score count mismatch");
        for (std::size_t i = 0; i < n; ++i) result.ranking.emplace_back(i, scores[i]);
        std::stable_sort(result.ranking.begin(), result.ranking.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        CallSummary call{Role::reranker, ep.model_name, StageTag::embedding, rec.prompt_tokens, rec.completion_tokens};
        ledger_.append(call);
        if (slice) slice->append(call);
    } catch (const Error&) {
        result.ranking.clear();
        for (std::size_t i = 0; i < n; ++i) result.ranking.emplace_back(i, 0.0);
        result.degraded = true;
    } catch (const json::exception&) {
        result.ranking.clear();
        for (std::size_t i = 0; i < n; ++i) result.ranking.emplace_back(i, 0.0);
        result.degraded = true;
    }
    return result;
}

}  // namespace docrag
