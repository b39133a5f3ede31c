#include "docrag/workspace.hpp"

#include <algorithm>
#include <atomic>
#include <future>

namespace docrag {

using nlohmann::json;

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
    if (n == 0) return;
    workers = std::clamp<std::size_t>(workers, 1, n);
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
    };
    std::vector<std::future<void>> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.push_back(std::async(std::launch::async, run));
    std::exception_ptr first;
    try {
        run();
    } catch (...) {
        first = std::current_exception();
    }
    for (auto& f : pool) {
        try {
            f.get();
        } catch (...) {
            if (!first) first = std::current_exception();
        }
    }
    if (first) std::rethrow_exception(first);
}

struct ExtractionUnit {
    std::string text;
    Provenance provenance;
    bool is_chunk = false;
};

}  // namespace

bool IngestSummary::all_ok() const {
    return std::all_of(documents.begin(), documents.end(), [](const DocumentReport& d) { return d.ok; });
}

json IngestSummary::to_json() const {
    json docs = json::array();
    for (const auto& d : documents) {
        json j{{"doc_id", d.doc_id}, {"ok", d.ok}, {"blocks", d.blocks}, {"chunks", d.chunks},
               {"assets_described", d.assets_described}, {"issues", d.issues}};
        if (!d.ok) j["error"] = d.error;
        docs.push_back(std::move(j));
    }
    return {{"documents", docs},
            {"total_documents", total_documents},
            {"blocks", total_blocks},
            {"chunks", total_chunks},
            {"entities", entities},
            {"relations", relations},
            {"hyperedges", hyperedges}};
}

LinkerConfig linker_config(const PipelineConfig& p) {
    LinkerConfig c;
    c.k_entities = p.k_entities;
    c.k_chunks = p.k_chunks;
    c.context_budget = p.context_budget;
    c.neighbor_radius = p.neighbor_radius;
    c.rerank = p.rerank;
    return c;
}

Workspace::Workspace(Config config, std::shared_ptr<Transport> transport, std::shared_ptr<FixtureCassette> cassette,
                     GatewayOptions gateway_options)
    : config_(std::move(config)),
      gateway_(std::make_unique<Gateway>(config_.endpoints, std::move(transport), std::move(cassette), gateway_options)),
      counter_(default_token_counter()),
      index_(config_.pipeline.embedding_dim) {
    if (gateway_options.embedding_dim != config_.pipeline.embedding_dim)
        throw ConfigError("gateway and index embedding dimensions differ");
    rebuild_services();
}

void Workspace::rebuild_services() {
    router_ = std::make_unique<ComplexityRouter>(*gateway_);
    linker_ = std::make_unique<DataLinker>(corpus_, graph_, index_, *gateway_, counter_, linker_config(config_.pipeline));
    engine_ = std::make_unique<DprEngine>(corpus_, *linker_, *router_, *gateway_);
}

IngestSummary Workspace::ingest(const std::vector<DocumentSource>& sources, CostLedger* slice) {
    IngestSummary s;
    for (const auto& src : sources) {
        try {
            s.documents.push_back(ingest_document(src, slice));
        } catch (const Error& e) {
            DocumentReport r;
            r.doc_id = src.doc_id;
            r.ok = false;
            r.error = e.what();
            s.documents.push_back(std::move(r));
        }
    }
    IngestSummary totals = summary();
    totals.documents = std::move(s.documents);
    return totals;
}

IngestSummary Workspace::summary() const {
    IngestSummary s;
    s.total_documents = corpus_.document_ids().size();
    s.total_blocks = corpus_.total_blocks();
    s.total_chunks = corpus_.total_chunks();
    s.entities = graph_.entities().size();
    s.relations = graph_.relations().size();
    s.hyperedges = graph_.hyperedges().size();
    return s;
}

DocumentReport Workspace::ingest_document(const DocumentSource& src, CostLedger* slice) {
    const PipelineConfig& p = config_.pipeline;
    DocumentReport report;
    report.doc_id = src.doc_id;
    if (src.doc_id.empty()) throw InvalidArgument("document id must not be empty");

    const auto root = src.asset_root.empty() ? src.layout_path.parent_path() : src.asset_root;
    ParseResult parsed = parse_layout_file(src.layout_path, root, src.doc_id, ParseOptions{p.lenient});
    report.issues = parsed.issues;
    const TokenStream stream = serialize_text(parsed.blocks, *counter_);
    std::vector<Chunk> chunks = chunk(stream, p.window, p.overlap);

    // Asset descriptions.
    std::vector<const ContentBlock*> asset_blocks;
    for (const auto& b : parsed.blocks)
        if (b.is_asset()) asset_blocks.push_back(&b);
    std::vector<AugmentedAssetText> augmented(asset_blocks.size());
    std::vector<CostLedger> asset_ledgers(asset_blocks.size());
    std::vector<std::string> asset_issues(asset_blocks.size());
    parallel_for(asset_blocks.size(), p.workers, [&](std::size_t i) {
        const ContentBlock& b = *asset_blocks[i];
        try {
            augmented[i] = describe_asset(b, parsed.assets, *gateway_, &asset_ledgers[i]);
        } catch (const DescriptionUnavailable& e) {
            augmented[i] = AugmentedAssetText{b.block_id, b.content, "", b.content, false};
            asset_issues[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < asset_blocks.size(); ++i) {
        if (slice) slice->extend(asset_ledgers[i]);
        if (!asset_issues[i].empty()) report.issues.push_back(asset_issues[i]);
        if (augmented[i].description_available) ++report.assets_described;
    }

    // Triplet extraction over chunks and augmented asset text.
    std::vector<ExtractionUnit> units;
    for (const auto& c : chunks) units.push_back({c.text, {src.doc_id, c.chunk_id}, true});
    for (const auto& a : augmented)
        if (!a.combined.empty()) units.push_back({a.combined, {src.doc_id, a.block_id}, false});
    std::vector<std::optional<Extraction>> extractions(units.size());
    std::vector<CostLedger> unit_ledgers(units.size());
    const TripletExtractor extractor(*gateway_, p.extract_max_rounds);
    parallel_for(units.size(), p.workers, [&](std::size_t i) {
        try {
            extractions[i] = extractor.extract(units[i].text, &unit_ledgers[i]);
        } catch (const ExtractionEmpty&) {
        }
    });
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (slice) slice->extend(unit_ledgers[i]);
        if (!extractions[i]) report.issues.push_back("no triplets extracted from " + units[i].provenance.source_id);
    }

    // Build the next graph off to the side; nothing is committed until every
    // model call has succeeded.
    KnowledgeGraph next = graph_;
    next.remove_document(src.doc_id);
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (!extractions[i]) continue;
        auto [entities, relations] = to_graph_records(*extractions[i], units[i].provenance);
        next.merge_entities(entities);
        next.merge_relations(relations);
        if (units[i].is_chunk) {
            std::vector<std::string> names;
            for (const auto& e : entities) names.push_back(e.canonical_name);
            for (auto& h : build_hyperedges(units[i].provenance.source_id, src.doc_id, names, relations))
                next.add_hyperedge(std::move(h));
        }
    }

    // Document-scoped records.
    std::vector<EmbeddingRecord> doc_records;
    for (const auto& c : chunks) {
        EmbeddingRecord r;
        r.record_id = chunk_record_id(c.chunk_id);
        r.kind = RecordKind::chunk;
        r.payload_text = c.text;
        r.attrs.doc_id = src.doc_id;
        r.attrs.chunk_id = c.chunk_id;
        r.attrs.span = c.token_span;
        if (!c.source_block_ids.empty()) {
            r.attrs.block_id = c.source_block_ids.front();
            for (const auto& b : parsed.blocks)
                if (b.block_id == r.attrs.block_id) r.attrs.page = b.page;
        }
        doc_records.push_back(std::move(r));
    }
    for (std::size_t i = 0; i < asset_blocks.size(); ++i) {
        if (augmented[i].combined.empty()) continue;
        const ContentBlock& b = *asset_blocks[i];
        EmbeddingRecord r;
        r.record_id = asset_record_id(src.doc_id, b.block_id);
        r.kind = RecordKind::asset_text;
        r.payload_text = augmented[i].combined;
        r.attrs.doc_id = src.doc_id;
        r.attrs.block_id = b.block_id;
        r.attrs.storage_path = b.storage_path;
        r.attrs.bbox = b.bbox;
        r.attrs.page = b.page;
        doc_records.push_back(std::move(r));
    }

    // Graph records whose payload changed.
    std::map<std::string, std::pair<RecordKind, std::string>> wanted;
    for (const auto& [name, e] : next.entities()) wanted[entity_record_id(name)] = {RecordKind::entity, entity_payload(e)};
    for (const auto& [key, r] : next.relations()) wanted[relation_record_id(r)] = {RecordKind::relation, relation_payload(r)};
    std::vector<std::string> stale;
    for (const auto& [id, payload] : graph_payloads_)
        if (!wanted.count(id)) stale.push_back(id);
    for (const auto& [id, value] : wanted) {
        auto it = graph_payloads_.find(id);
        if (it != graph_payloads_.end() && it->second == value.second) continue;
        EmbeddingRecord r;
        r.record_id = id;
        r.kind = value.first;
        r.payload_text = value.second;
        doc_records.push_back(std::move(r));
    }

    std::vector<std::string> texts;
    texts.reserve(doc_records.size());
    for (const auto& r : doc_records) texts.push_back(r.payload_text);
    CostLedger embed_ledger;
    auto vectors = texts.empty() ? std::vector<std::vector<double>>{} : gateway_->embed(texts, &embed_ledger);
    if (slice) slice->extend(embed_ledger);
    for (std::size_t i = 0; i < doc_records.size(); ++i) doc_records[i].vector = std::move(vectors.at(i));

    // Commit.
    DocumentInfo info;
    info.doc_id = src.doc_id;
    info.source_path = src.layout_path.string();
    info.asset_root = root.string();
    for (const auto& b : parsed.blocks) info.page_count = std::max(info.page_count, b.page);
    info.block_count = parsed.blocks.size();
    info.chunk_count = chunks.size();
    report.blocks = parsed.blocks.size();
    report.chunks = chunks.size();

    index_.remove_document(src.doc_id);
    index_.remove(stale);
    index_.index(std::move(doc_records));
    for (const auto& id : stale) graph_payloads_.erase(id);
    for (const auto& [id, value] : wanted) graph_payloads_[id] = value.second;
    graph_ = std::move(next);
    corpus_.put_document(std::move(info), std::move(parsed.blocks), std::move(parsed.assets), std::move(chunks));
    return report;
}

Answer Workspace::answer(const std::string& query, const AnswerOptions& options, AnswerTrace* trace) const {
    return engine_->answer(query, options, trace);
}

RoutingDecision Workspace::route(const std::string& query, CostLedger* slice) const { return router_->route(query, slice); }

void Workspace::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    corpus_.save(dir / "corpus");
    graph_.save(dir / "graph");
    index_.save(dir / "index.bin");
}

void Workspace::load(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "index.bin")) throw ConfigError("no workspace at " + dir.string());
    VectorIndex loaded = VectorIndex::load(dir / "index.bin");
    if (loaded.dim() != config_.pipeline.embedding_dim)
        throw ConfigError("workspace index has dimension " + std::to_string(loaded.dim()) + ", config says " +
                          std::to_string(config_.pipeline.embedding_dim));
    corpus_ = CorpusStore::load(dir / "corpus");
    graph_ = KnowledgeGraph::load(dir / "graph");
    index_ = std::move(loaded);
    graph_payloads_.clear();
    for (const auto& id : index_.ids()) {
        if (id.rfind("entity:", 0) != 0 && id.rfind("relation:", 0) != 0) continue;
        graph_payloads_[id] = index_.get(id)->payload_text;
    }
}

}  // namespace docrag
