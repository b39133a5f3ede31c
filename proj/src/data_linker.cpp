#include "docrag/data_linker.hpp"

#include <algorithm>
#include <map>

namespace docrag {

using nlohmann::json;

std::string chunk_record_id(const std::string& chunk_id) { return "chunk:" + chunk_id; }
std::string asset_record_id(const std::string& doc_id, const std::string& block_id) { return "asset:" + doc_id + "/" + block_id; }
std::string entity_record_id(const std::string& canonical_name) { return "entity:" + canonical_name; }
std::string relation_record_id(const Relation& r) { return "relation:" + r.key(); }
std::string hyperedge_record_id(const Hyperedge& h) { return "hyperedge:" + h.key(); }

std::string entity_payload(const Entity& e) {
    std::string s = e.canonical_name;
    if (!e.entity_type.empty()) s += " (" + e.entity_type + ")";
    if (!e.description.empty()) s += ": " + e.description;
    return s;
}

std::string relation_payload(const Relation& r) {
    std::string s = r.head + " " + r.predicate + " " + r.tail;
    if (!r.description.empty()) s += ": " + r.description;
    return s;
}

std::string hyperedge_fact(const Hyperedge& h) {
    std::string s = "Co-occurring in " + h.source_chunk_id + ":";
    bool first = true;
    for (const auto& m : h.members) {
        s += first ? " " : ", ";
        s += m;
        first = false;
    }
    return s;
}

json RetrievalContext::to_json() const {
    json chunks_j = json::array();
    for (const auto& c : chunks)
        chunks_j.push_back({{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"score", c.score},
                            {"source_block_ids", c.source_block_ids}, {"text", c.text}});
    json assets_j = json::array();
    for (const auto& a : asset_refs)
        assets_j.push_back({{"doc_id", a.doc_id}, {"block_id", a.block_id}, {"storage_path", a.storage_path},
                            {"caption", a.caption}, {"page", a.page}});
    json neigh_j = json::array();
    for (const auto& n : neighbor_context)
        neigh_j.push_back({{"doc_id", n.doc_id}, {"block_id", n.block_id}, {"page", n.page}, {"text", n.text}});
    return json{{"query", query},
                {"mode", docrag::to_string(mode)},
                {"chunks", chunks_j},
                {"entity_facts", entity_facts},
                {"asset_refs", assets_j},
                {"neighbor_context", neigh_j},
                {"token_budget_used", token_budget_used},
                {"retrieved_ids", retrieved_ids},
                {"rerank_degraded", rerank_degraded}};
}

DataLinker::DataLinker(const CorpusStore& corpus, const KnowledgeGraph& graph, const VectorIndex& index,
                       Gateway& gateway, std::shared_ptr<const TokenCounter> counter, LinkerConfig config)
    : corpus_(corpus), graph_(graph), index_(index), gateway_(gateway), counter_(std::move(counter)), config_(config) {
    if (!counter_) counter_ = default_token_counter();
}

namespace {

// Insertion-ordered set of strings.
class OrderedSet {
public:
    bool add(const std::string& s) {
        if (!seen_.insert(s).second) return false;
        items_.push_back(s);
        return true;
    }
    bool contains(const std::string& s) const { return seen_.count(s) > 0; }
    const std::vector<std::string>& items() const { return items_; }

private:
    std::set<std::string> seen_;
    std::vector<std::string> items_;
};

double center_y(const BoundingBox& b) { return (b.y0 + b.y1) / 2.0; }

}  // namespace

std::vector<NeighborText> DataLinker::fetch_neighbor_context(const std::string& doc_id, const std::string& block_id,
                                                             std::size_t radius) const {
    const ContentBlock* target = corpus_.find_block(doc_id, block_id);
    if (!target) throw BlockNotFound(doc_id + "/" + block_id);
    if (radius == 0) return {};
    const auto& blocks = corpus_.blocks(doc_id);
    const auto pos = static_cast<std::size_t>(target - blocks.data());
    const double cy = center_y(target->bbox);

    struct Candidate {
        double distance;
        std::size_t index;
    };
    std::vector<Candidate> above, below;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (i == pos || b.page != target->page || !b.in_text_stream() || b.content.empty()) continue;
        if (center_y(b.bbox) < cy) {
            above.push_back({std::max(0.0, target->bbox.y0 - b.bbox.y1), i});
        } else {
            below.push_back({std::max(0.0, b.bbox.y0 - target->bbox.y1), i});
        }
    }
    auto nearest = [&](std::vector<Candidate>& v) {
        std::sort(v.begin(), v.end(), [](const Candidate& a, const Candidate& b) {
            return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
        });
        if (v.size() > radius) v.resize(radius);
    };
    nearest(above);
    nearest(below);

    // Top up across page boundaries in reading order.
    std::set<std::size_t> chosen;
    for (const auto& c : above) chosen.insert(c.index);
    for (const auto& c : below) chosen.insert(c.index);
    for (std::size_t i = pos; above.size() < radius && i-- > 0;) {
        const auto& b = blocks[i];
        if (b.page == target->page || !b.in_text_stream() || b.content.empty() || chosen.count(i)) continue;
        above.push_back({0.0, i});
        chosen.insert(i);
    }
    for (std::size_t i = pos + 1; below.size() < radius && i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.page == target->page || !b.in_text_stream() || b.content.empty() || chosen.count(i)) continue;
        below.push_back({0.0, i});
        chosen.insert(i);
    }

    std::vector<std::size_t> order;
    for (const auto& c : above) order.push_back(c.index);
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> tail;
    for (const auto& c : below) tail.push_back(c.index);
    std::sort(tail.begin(), tail.end());
    order.insert(order.end(), tail.begin(), tail.end());

    std::vector<NeighborText> out;
    for (std::size_t i : order) out.push_back({doc_id, blocks[i].block_id, blocks[i].page, blocks[i].content});
    return out;
}

RetrievalContext DataLinker::retrieve(const std::string& query, RetrievalMode mode,
                                      const std::optional<std::string>& doc_filter, CostLedger* slice) const {
    RetrievalContext ctx;
    ctx.query = query;
    ctx.mode = mode;
    if (index_.size() == 0) return ctx;

    const auto in_doc = [&](const std::set<Provenance>& prov) {
        if (!doc_filter) return true;
        return std::any_of(prov.begin(), prov.end(), [&](const Provenance& p) { return p.doc_id == *doc_filter; });
    };

    const auto qv = gateway_.embed({query}, slice);

    // Local evidence: chunks and described assets.
    SearchFilter local;
    local.kinds = std::set<RecordKind>{RecordKind::chunk, RecordKind::asset_text};
    if (doc_filter) local.docs = std::set<std::string>{*doc_filter};
    TopKResult local_hits = index_.search(qv.at(0), config_.k_chunks, local);
    if (config_.rerank && !local_hits.hits.empty()) {
        local_hits = rerank_hits(index_, gateway_, query, std::move(local_hits), config_.k_chunks, slice);
        ctx.rerank_degraded = local_hits.degraded;
    }

    OrderedSet chunk_ids;
    std::map<std::string, double> chunk_scores;
    OrderedSet asset_keys;  // "doc/block"
    auto add_asset = [&](const std::string& doc, const std::string& block) {
        const ContentBlock* b = corpus_.find_block(doc, block);
        if (!b || !b->is_asset() || !corpus_.assets(doc).contains(b->storage_path)) return;
        if (asset_keys.add(doc + "/" + block)) {
            ctx.asset_refs.push_back({doc, block, b->storage_path, b->content, b->page});
            ctx.retrieved_ids.insert(asset_record_id(doc, block));
        }
    };

    for (const auto& h : local_hits.hits) {
        auto rec = index_.get(h.record_id);
        if (!rec) continue;
        if (rec->kind == RecordKind::chunk) {
            if (chunk_ids.add(rec->attrs.chunk_id)) chunk_scores[rec->attrs.chunk_id] = h.score;
        } else {
            add_asset(rec->attrs.doc_id, rec->attrs.block_id);
        }
    }

    OrderedSet facts;
    if (mode != RetrievalMode::vector_local) {
        // Entity and relation hits.
        SearchFilter ent_filter;
        ent_filter.kinds = std::set<RecordKind>{RecordKind::entity};
        ent_filter.predicate = [&](const EmbeddingRecord& r) {
            const Entity* e = graph_.find_entity(r.record_id.substr(7));
            return e != nullptr && in_doc(e->provenance);
        };
        SearchFilter rel_filter;
        rel_filter.kinds = std::set<RecordKind>{RecordKind::relation};
        rel_filter.predicate = [&](const EmbeddingRecord& r) {
            auto it = graph_.relations().find(r.record_id.substr(9));
            return it != graph_.relations().end() && in_doc(it->second.provenance);
        };

        OrderedSet hit_entities;
        for (const auto& h : index_.search(qv.at(0), config_.k_entities, ent_filter).hits)
            hit_entities.add(h.record_id.substr(7));
        std::vector<const Relation*> hit_relations;
        for (const auto& h : index_.search(qv.at(0), config_.k_entities, rel_filter).hits) {
            const Relation& r = graph_.relations().at(h.record_id.substr(9));
            hit_relations.push_back(&r);
            hit_entities.add(r.head);
            hit_entities.add(r.tail);
        }

        OrderedSet expanded;
        auto add_entity_fact = [&](const std::string& name) {
            const Entity* e = graph_.find_entity(name);
            if (!e) return;
            if (ctx.retrieved_ids.insert(entity_record_id(name)).second) facts.add(entity_payload(*e));
        };
        auto add_relation_fact = [&](const Relation& r) {
            if (ctx.retrieved_ids.insert(relation_record_id(r)).second) facts.add(relation_payload(r));
        };

        for (const auto& name : hit_entities.items()) {
            expanded.add(name);
            add_entity_fact(name);
        }
        for (const Relation* r : hit_relations) add_relation_fact(*r);
        // One hop.
        for (const auto& name : hit_entities.items()) {
            for (const Relation* r : graph_.relations_of(name)) {
                if (!in_doc(r->provenance)) continue;
                add_relation_fact(*r);
                const std::string& other = r->head == name ? r->tail : r->head;
                const Entity* oe = graph_.find_entity(other);
                if (oe && in_doc(oe->provenance) && expanded.add(other)) add_entity_fact(other);
            }
        }
        // Provenance of every expanded entity.
        for (const auto& name : expanded.items()) {
            const Entity* e = graph_.find_entity(name);
            if (!e) continue;
            for (const auto& p : e->provenance) {
                if (doc_filter && p.doc_id != *doc_filter) continue;
                if (corpus_.find_chunk(p.source_id)) {
                    chunk_ids.add(p.source_id);
                } else {
                    add_asset(p.doc_id, p.source_id);
                }
            }
        }

        if (mode == RetrievalMode::hypergraph) {
            OrderedSet members;
            for (const auto& name : hit_entities.items()) {
                for (const Hyperedge* h : graph_.hyperedges_of(name)) {
                    if (doc_filter && h->doc_id != *doc_filter) continue;
                    if (!ctx.retrieved_ids.insert(hyperedge_record_id(*h)).second) continue;
                    facts.add(hyperedge_fact(*h));
                    if (corpus_.find_chunk(h->source_chunk_id)) chunk_ids.add(h->source_chunk_id);
                    for (const auto& m : h->members) {
                        add_entity_fact(m);
                        members.add(m);
                    }
                }
            }
            // Members pull in the chunks they were extracted from.
            for (const auto& name : members.items()) {
                const Entity* e = graph_.find_entity(name);
                if (!e) continue;
                for (const auto& p : e->provenance) {
                    if (doc_filter && p.doc_id != *doc_filter) continue;
                    if (corpus_.find_chunk(p.source_id)) chunk_ids.add(p.source_id);
                }
            }
        }
    }

    for (const auto& id : chunk_ids.items()) {
        if (ctx.chunks.size() == config_.k_chunks) break;
        const Chunk* c = corpus_.find_chunk(id);
        if (!c) continue;
        auto score = chunk_scores.find(id);
        ctx.chunks.push_back({c->chunk_id, c->doc_id, c->text, c->source_block_ids,
                              score == chunk_scores.end() ? 0.0 : score->second});
        ctx.retrieved_ids.insert(chunk_record_id(id));
    }
    ctx.entity_facts = facts.items();

    // Bridge each asset to the text around it.
    OrderedSet neighbor_keys;
    for (const auto& a : ctx.asset_refs) {
        for (auto& n : fetch_neighbor_context(a.doc_id, a.block_id, config_.neighbor_radius)) {
            if (neighbor_keys.add(n.doc_id + "/" + n.block_id)) {
                ctx.retrieved_ids.insert("block:" + n.doc_id + "/" + n.block_id);
                ctx.neighbor_context.push_back(std::move(n));
            }
        }
    }

    return pack_context(std::move(ctx), config_.context_budget);
}

RetrievalContext DataLinker::pack_context(RetrievalContext ctx, std::size_t budget_tokens) const {
    if (budget_tokens == 0) throw InvalidArgument("context budget must be positive");
    std::size_t used = 0;
    bool full = false;
    auto admit = [&](const std::string& text) {
        if (full) return false;
        const std::size_t n = tokens(text);
        if (used + n > budget_tokens) {
            full = true;
            return false;
        }
        used += n;
        return true;
    };

    std::vector<ChunkExcerpt> chunks;
    for (auto& c : ctx.chunks)
        if (admit(c.text)) chunks.push_back(std::move(c));
    std::vector<std::string> facts;
    for (auto& f : ctx.entity_facts)
        if (admit(f)) facts.push_back(std::move(f));
    std::vector<NeighborText> neighbors;
    for (auto& n : ctx.neighbor_context)
        if (admit(n.text)) neighbors.push_back(std::move(n));

    ctx.chunks = std::move(chunks);
    ctx.entity_facts = std::move(facts);
    ctx.neighbor_context = std::move(neighbors);
    ctx.token_budget_used = used;
    return ctx;
}

RetrievalContext DataLinker::merge_contexts(const std::string& query, const std::vector<RetrievalContext>& parts) const {
    RetrievalContext merged;
    merged.query = query;
    std::set<std::string> chunk_seen, fact_seen, asset_seen, neighbor_seen;
    for (const auto& p : parts) {
        if (static_cast<int>(p.mode) > static_cast<int>(merged.mode)) merged.mode = p.mode;
        merged.rerank_degraded = merged.rerank_degraded || p.rerank_degraded;
        merged.retrieved_ids.insert(p.retrieved_ids.begin(), p.retrieved_ids.end());
        for (const auto& c : p.chunks)
            if (merged.chunks.size() < config_.k_chunks && chunk_seen.insert(c.chunk_id).second) merged.chunks.push_back(c);
        for (const auto& f : p.entity_facts)
            if (fact_seen.insert(f).second) merged.entity_facts.push_back(f);
        for (const auto& a : p.asset_refs)
            if (asset_seen.insert(a.doc_id + "/" + a.block_id).second) merged.asset_refs.push_back(a);
        for (const auto& n : p.neighbor_context)
            if (neighbor_seen.insert(n.doc_id + "/" + n.block_id).second) merged.neighbor_context.push_back(n);
    }
    return pack_context(std::move(merged), config_.context_budget);
}

}  // namespace docrag
