#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "docrag/gateway.hpp"

namespace docrag {

enum class Complexity { Simple, Moderate, Complex };
enum class RetrievalMode { vector_local, graph, hypergraph };
enum class InstructionKey { simple_extract, moderate_compute, complex_integrate };
enum class Intent { factual_retrieval, comparative_reasoning, causal_analysis, aggregation, unanswerable_probe, other };

std::string_view to_string(Complexity c);
std::string_view to_string(RetrievalMode m);
std::string_view to_string(InstructionKey k);
std::string_view to_string(Intent i);
Complexity parse_complexity(std::string_view s);
RetrievalMode parse_mode(std::string_view s);
InstructionKey parse_instruction_key(std::string_view s);
Intent parse_intent(std::string_view s);

struct RouteTarget {
    RetrievalMode mode;
    InstructionKey instruction;
};

// Simple -> vector_local/simple_extract, Moderate -> graph/moderate_compute,
// Complex -> hypergraph/complex_integrate.
RouteTarget route_target(Complexity c);
Complexity complexity_for_mode(RetrievalMode m);

struct QueryFeatures {
    Intent intent = Intent::other;
    int entity_count = 0;
    int visual_ref_count = 0;
    int constraint_count = 0;
    bool needs_cross_chunk = false;
    bool needs_multi_step = false;

    friend bool operator==(const QueryFeatures&, const QueryFeatures&) = default;
};

nlohmann::json to_json(const QueryFeatures& f);

// Complex iff multi-step and (>=2 entities or >=2 visual refs or cross-chunk);
// Simple iff none of cross-chunk, multi-step, >1 entity, >1 visual ref;
// Moderate otherwise.
Complexity classify(const QueryFeatures& f);

// Deterministic features used when the router model's report is unusable.
QueryFeatures heuristic_features(std::string_view query);

// Accepts a JSON object (possibly wrapped in prose or a code fence) with the
// six feature keys; nullopt when any is missing or mistyped.
std::optional<QueryFeatures> parse_feature_report(std::string_view text);

// Trims list markers, drops blanks and case-insensitive duplicates, caps at
// four; fewer than two survivors means no decomposition.
std::vector<std::string> validate_sub_queries(const std::vector<std::string>& candidates);
std::vector<std::string> parse_sub_queries(std::string_view text);

std::string feature_prompt(std::string_view query);
std::string decomposition_prompt(std::string_view query);

inline constexpr std::size_t kMaxSubQueries = 4;

struct RoutingDecision {
    Complexity complexity = Complexity::Moderate;
    RetrievalMode mode = RetrievalMode::graph;
    InstructionKey instruction = InstructionKey::moderate_compute;
    std::vector<std::string> sub_queries;
    std::string rationale;
    QueryFeatures features;
    bool fallback = false;
};

nlohmann::json to_json(const RoutingDecision& d);

class ComplexityRouter {
public:
    explicit ComplexityRouter(Gateway& gateway) : gateway_(gateway) {}

    // Never throws on bad model output; `fallback` reports whether the
    // heuristic path was used.
    QueryFeatures extract_features(const std::string& query, bool& fallback, CostLedger* slice = nullptr) const;
    // Precondition: classify(features) == Complex.
    std::vector<std::string> decompose(const std::string& query, const QueryFeatures& features,
                                       CostLedger* slice = nullptr) const;
    RoutingDecision route(const std::string& query, CostLedger* slice = nullptr) const;

private:
    Gateway& gateway_;
};

std::string query_hash(std::string_view query);

// One line of the routing decision log.
nlohmann::json decision_log_record(const RoutingDecision& d, std::string_view query, int doc_pages);

}  // namespace docrag
