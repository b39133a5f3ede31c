#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "docrag/gateway.hpp"
#include "docrag/ingest.hpp"

namespace docrag {

enum class RecordKind { entity, relation, chunk, asset_text };

std::string_view to_string(RecordKind kind);
RecordKind parse_record_kind(std::string_view name);

struct RecordAttrs {
    std::string doc_id;
    std::string chunk_id;
    std::string block_id;
    std::string storage_path;
    std::optional<BoundingBox> bbox;
    int page = 0;
    std::optional<Span> span;
};

struct EmbeddingRecord {
    std::string record_id;
    RecordKind kind = RecordKind::chunk;
    std::vector<double> vector;  // unit length once indexed
    std::string payload_text;
    RecordAttrs attrs;
};

struct Hit {
    std::string record_id;
    double score = 0.0;
};

struct TopKResult {
    std::vector<Hit> hits;
    std::size_t k_requested = 0;
    std::size_t k_returned = 0;
    bool degraded = false;  // set when a rerank pass fell back to cosine order
};

struct SearchFilter {
    std::optional<std::set<RecordKind>> kinds;
    std::optional<std::set<std::string>> docs;  // matches attrs.doc_id
    std::function<bool(const EmbeddingRecord&)> predicate;

    bool admits(const EmbeddingRecord& r) const;
};

// Exact cosine search. Writers build a new snapshot and swap it in, so a
// search running during index() sees the state from before the batch.
class VectorIndex {
public:
    explicit VectorIndex(std::size_t dim = 1024);
    VectorIndex(VectorIndex&& other) noexcept : dim_(other.dim_), state_(other.snapshot()) {}
    VectorIndex& operator=(VectorIndex&& other) noexcept {
        auto snap = other.snapshot();
        std::lock_guard lock(mu_);
        dim_ = other.dim_;
        state_ = std::move(snap);
        return *this;
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const;

    // All-or-nothing: a wrong-dimension record rejects the whole batch with
    // DimensionError. Existing ids are replaced.
    void index(std::vector<EmbeddingRecord> records);
    void remove(const std::vector<std::string>& record_ids);
    // Removes chunk and asset records whose attrs.doc_id matches.
    void remove_document(const std::string& doc_id);

    std::optional<EmbeddingRecord> get(const std::string& record_id) const;
    std::vector<std::string> ids() const;

    // Ties are broken by record_id ascending. An empty index yields no hits.
    TopKResult search(std::span<const double> query, std::size_t k, const SearchFilter& filter = {}) const;

    void save(const std::filesystem::path& path) const;
    static VectorIndex load(const std::filesystem::path& path);

private:
    struct State {
        std::map<std::string, EmbeddingRecord> records;
    };

    std::shared_ptr<const State> snapshot() const;

    std::size_t dim_;
    mutable std::mutex mu_;
    std::shared_ptr<const State> state_;
};

// Embeds the query, recalls k_recall by cosine, reorders with the reranker
// and keeps k_final. A degraded reranker leaves the cosine order in place.
TopKResult search_then_rerank(const VectorIndex& index, Gateway& gateway, const std::string& query_text,
                              std::size_t k_recall, std::size_t k_final, const SearchFilter& filter = {},
                              CostLedger* slice = nullptr);

// Reorders an existing recall list with the reranker.
TopKResult rerank_hits(const VectorIndex& index, Gateway& gateway, const std::string& query_text, TopKResult recall,
                       std::size_t k_final, CostLedger* slice = nullptr);

}  // namespace docrag
