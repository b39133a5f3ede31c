#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docrag/corpus.hpp"
#include "docrag/data_linker.hpp"
#include "docrag/gateway.hpp"
#include "docrag/router.hpp"

namespace docrag {

inline constexpr std::string_view kAbstentionPhrase = "INSUFFICIENT EVIDENCE";
inline constexpr std::string_view kAbstentionClause =
    "If the provided context does not contain the required evidence, reply exactly: INSUFFICIENT EVIDENCE.";

struct VisualDescription {
    std::string text;
    AssetRef source;
    std::string prompt_used;
    bool degraded = false;
};

struct UnifiedContext {
    std::vector<VisualDescription> visual_texts;
    RetrievalContext retrieved;
    Intent intent = Intent::other;
    InstructionKey instruction = InstructionKey::moderate_compute;
    bool perception_degraded = false;  // every asset failed

    nlohmann::json to_json() const;
};

struct Citation {
    std::string doc_id;
    int page = 0;
    std::string block_id;

    auto operator<=>(const Citation&) const = default;
};

struct Answer {
    std::string query;
    std::string text;
    Complexity complexity_used = Complexity::Moderate;
    RetrievalMode mode = RetrievalMode::graph;
    bool abstained = false;
    std::vector<Citation> citations;
    CostLedger ledger_slice;

    // {query, answer, complexity, abstained, citations, tokens_by_stage}
    nlohmann::json record() const;
};

// What answer() fed to the reasoning call, for inspection.
struct AnswerTrace {
    RoutingDecision decision;
    UnifiedContext context;
    std::string system_prompt;
    std::string user_prompt;

    nlohmann::json to_json() const;
};

std::string build_instruction(InstructionKey key);
std::string perception_prompt(const std::string& query);
// Intent line, visual descriptions, facts, chunks, neighbor text, question.
std::string render_context(const UnifiedContext& context, const std::string& query);
bool is_abstention(std::string_view response);

struct AnswerOptions {
    std::optional<RetrievalMode> mode_override;  // skips the router
    std::optional<std::string> doc_filter;
};

class DprEngine {
public:
    DprEngine(const CorpusStore& corpus, const DataLinker& linker, const ComplexityRouter& router, Gateway& gateway)
        : corpus_(corpus), linker_(linker), router_(router), gateway_(gateway) {}

    // One perception call per asset, in asset order. Failures yield
    // caption-only entries marked degraded.
    std::vector<VisualDescription> perceive(const std::vector<AssetRef>& assets, const std::string& query,
                                            CostLedger* slice = nullptr) const;

    // Exactly one reasoning call.
    Answer reason(const UnifiedContext& context, const std::string& query, CostLedger* slice = nullptr,
                  AnswerTrace* trace = nullptr) const;

    // route -> retrieve (per sub-query) -> perceive -> reason. Hard failures
    // surface as StageError naming the stage.
    Answer answer(const std::string& query, const AnswerOptions& options = {}, AnswerTrace* trace = nullptr) const;

private:
    const CorpusStore& corpus_;
    const DataLinker& linker_;
    const ComplexityRouter& router_;
    Gateway& gateway_;
};

}  // namespace docrag
