#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docrag/config.hpp"
#include "docrag/corpus.hpp"
#include "docrag/data_linker.hpp"
#include "docrag/dpr.hpp"
#include "docrag/gateway.hpp"
#include "docrag/knowledge_base.hpp"
#include "docrag/router.hpp"
#include "docrag/vector_index.hpp"

namespace docrag {

struct DocumentSource {
    std::string doc_id;
    std::filesystem::path layout_path;
    std::filesystem::path asset_root;  // defaults to the layout file's directory
};

struct DocumentReport {
    std::string doc_id;
    bool ok = true;
    std::string error;
    std::size_t blocks = 0;
    std::size_t chunks = 0;
    std::size_t assets_described = 0;
    std::vector<std::string> issues;
};

struct IngestSummary {
    std::vector<DocumentReport> documents;
    std::size_t total_documents = 0;
    std::size_t total_blocks = 0;
    std::size_t total_chunks = 0;
    std::size_t entities = 0;
    std::size_t relations = 0;
    std::size_t hyperedges = 0;

    bool all_ok() const;
    nlohmann::json to_json() const;
};

// The stores plus the services that read them. Not copyable: the linker and
// engine hold references into the stores.
class Workspace {
public:
    Workspace(Config config, std::shared_ptr<Transport> transport, std::shared_ptr<FixtureCassette> cassette = nullptr,
              GatewayOptions gateway_options = {});

    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;

    // Parse, chunk, describe assets, extract, merge, index. Re-ingesting a
    // doc_id replaces everything derived from it. A failing document is
    // reported and leaves the stores untouched.
    IngestSummary ingest(const std::vector<DocumentSource>& sources, CostLedger* slice = nullptr);
    DocumentReport ingest_document(const DocumentSource& source, CostLedger* slice = nullptr);

    Answer answer(const std::string& query, const AnswerOptions& options = {}, AnswerTrace* trace = nullptr) const;
    RoutingDecision route(const std::string& query, CostLedger* slice = nullptr) const;

    // corpus/, graph/ and index.bin under `dir`.
    void save(const std::filesystem::path& dir) const;
    void load(const std::filesystem::path& dir);

    const Config& config() const { return config_; }
    Gateway& gateway() const { return *gateway_; }
    const CorpusStore& corpus() const { return corpus_; }
    const KnowledgeGraph& graph() const { return graph_; }
    const VectorIndex& index() const { return index_; }
    const DataLinker& linker() const { return *linker_; }
    const DprEngine& engine() const { return *engine_; }
    const ComplexityRouter& router() const { return *router_; }

    IngestSummary summary() const;

private:
    void rebuild_services();

    Config config_;
    std::unique_ptr<Gateway> gateway_;
    std::shared_ptr<const TokenCounter> counter_;
    CorpusStore corpus_;
    KnowledgeGraph graph_;
    VectorIndex index_;
    std::unique_ptr<ComplexityRouter> router_;
    std::unique_ptr<DataLinker> linker_;
    std::unique_ptr<DprEngine> engine_;
    std::map<std::string, std::string> graph_payloads_;  // entity/relation record id -> embedded text
};

LinkerConfig linker_config(const PipelineConfig& p);

}  // namespace docrag
