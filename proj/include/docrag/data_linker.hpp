#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "docrag/corpus.hpp"
#include "docrag/gateway.hpp"
#include "docrag/knowledge_base.hpp"
#include "docrag/router.hpp"
#include "docrag/tokenizer.hpp"
#include "docrag/vector_index.hpp"

namespace docrag {

// Record ids used in the vector index.
std::string chunk_record_id(const std::string& chunk_id);
std::string asset_record_id(const std::string& doc_id, const std::string& block_id);
std::string entity_record_id(const std::string& canonical_name);
std::string relation_record_id(const Relation& r);
std::string hyperedge_record_id(const Hyperedge& h);

// Embedded and rendered forms.
std::string entity_payload(const Entity& e);      // "name (type): description"
std::string relation_payload(const Relation& r);  // "head predicate tail: description"
std::string hyperedge_fact(const Hyperedge& h);

struct ChunkExcerpt {
    std::string chunk_id;
    std::string doc_id;
    std::string text;
    std::vector<std::string> source_block_ids;
    double score = 0.0;
};

struct AssetRef {
    std::string doc_id;
    std::string block_id;
    std::string storage_path;
    std::string caption;
    int page = 0;
};

struct NeighborText {
    std::string doc_id;
    std::string block_id;
    int page = 0;
    std::string text;
};

struct RetrievalContext {
    std::string query;
    RetrievalMode mode = RetrievalMode::vector_local;
    std::vector<ChunkExcerpt> chunks;
    std::vector<std::string> entity_facts;
    std::vector<AssetRef> asset_refs;
    std::vector<NeighborText> neighbor_context;
    std::size_t token_budget_used = 0;
    // Every record the retrieval touched before packing (chunks, assets,
    // entities, relations, hyperedges).
    std::set<std::string> retrieved_ids;
    bool rerank_degraded = false;

    nlohmann::json to_json() const;
};

struct LinkerConfig {
    std::size_t k_entities = 40;
    std::size_t k_chunks = 20;
    std::size_t context_budget = 8000;
    std::size_t neighbor_radius = 1;
    bool rerank = true;
};

class DataLinker {
public:
    DataLinker(const CorpusStore& corpus, const KnowledgeGraph& graph, const VectorIndex& index, Gateway& gateway,
               std::shared_ptr<const TokenCounter> counter, LinkerConfig config = {});

    // Retrieval for one query; the result is packed to the context budget.
    // `doc_filter` restricts every record to one document.
    RetrievalContext retrieve(const std::string& query, RetrievalMode mode,
                              const std::optional<std::string>& doc_filter = std::nullopt,
                              CostLedger* slice = nullptr) const;

    // Same-page text blocks nearest to `block_id` above and below (up to
    // `radius` each), topped up from adjacent reading-order positions.
    std::vector<NeighborText> fetch_neighbor_context(const std::string& doc_id, const std::string& block_id,
                                                     std::size_t radius) const;

    RetrievalContext pack_context(RetrievalContext context, std::size_t budget_tokens) const;

    // Concatenates per-sub-query contexts (dedup by id), then packs.
    RetrievalContext merge_contexts(const std::string& query, const std::vector<RetrievalContext>& parts) const;

    const LinkerConfig& config() const { return config_; }

private:
    std::size_t tokens(const std::string& text) const { return counter_->count(text); }

    const CorpusStore& corpus_;
    const KnowledgeGraph& graph_;
    const VectorIndex& index_;
    Gateway& gateway_;
    std::shared_ptr<const TokenCounter> counter_;
    LinkerConfig config_;
};

}  // namespace docrag
