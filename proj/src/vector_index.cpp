#include "docrag/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace docrag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'D', 'R', 'V', 'X'};
constexpr std::uint32_t kFormatVersion = 1;

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void check_attrs(const EmbeddingRecord& r) {
    switch (r.kind) {
        case RecordKind::chunk:
            if (r.attrs.doc_id.empty() || !r.attrs.span)
                throw InvalidArgument("chunk record '" + r.record_id + "' needs doc_id and span");
            break;
        case RecordKind::asset_text:
            if (r.attrs.storage_path.empty() || !r.attrs.bbox || r.attrs.page < 1)
                throw InvalidArgument("asset record '" + r.record_id + "' needs storage path, bbox and page");
            break;
        default: break;
    }
}

json attrs_json(const RecordAttrs& a) {
    json j = json::object();
    if (!a.doc_id.empty()) j["doc_id"] = a.doc_id;
    if (!a.chunk_id.empty()) j["chunk_id"] = a.chunk_id;
    if (!a.block_id.empty()) j["block_id"] = a.block_id;
    if (!a.storage_path.empty()) j["storage_path"] = a.storage_path;
    if (a.bbox) j["bbox"] = {a.bbox->x0, a.bbox->y0, a.bbox->x1, a.bbox->y1};
    if (a.page > 0) j["page"] = a.page;
    if (a.span) j["span"] = {a.span->start, a.span->end};
    return j;
}

RecordAttrs attrs_from(const json& j) {
    RecordAttrs a;
    a.doc_id = j.value("doc_id", "");
    a.chunk_id = j.value("chunk_id", "");
    a.block_id = j.value("block_id", "");
    a.storage_path = j.value("storage_path", "");
    if (j.contains("bbox")) {
        const auto b = j.at("bbox").get<std::vector<double>>();
        a.bbox = BoundingBox{b.at(0), b.at(1), b.at(2), b.at(3)};
    }
    a.page = j.value("page", 0);
    if (j.contains("span")) {
        const auto s = j.at("span").get<std::vector<std::size_t>>();
        a.span = Span{s.at(0), s.at(1)};
    }
    return a;
}

}  // namespace

std::string_view to_string(RecordKind kind) {
    switch (kind) {
        case RecordKind::entity: return "entity";
        case RecordKind::relation: return "relation";
        case RecordKind::chunk: return "chunk";
        case RecordKind::asset_text: return "asset_text";
    }
    return "chunk";
}

RecordKind parse_record_kind(std::string_view name) {
    if (name == "entity") return RecordKind::entity;
    if (name == "relation") return RecordKind::relation;
    if (name == "chunk") return RecordKind::chunk;
    if (name == "asset_text") return RecordKind::asset_text;
    throw InvalidArgument("unknown record kind '" + std::string(name) + "'");
}

bool SearchFilter::admits(const EmbeddingRecord& r) const {
    if (kinds && !kinds->count(r.kind)) return false;
    if (docs && !docs->count(r.attrs.doc_id)) return false;
    if (predicate && !predicate(r)) return false;
    return true;
}

VectorIndex::VectorIndex(std::size_t dim) : dim_(dim), state_(std::make_shared<const State>()) {
    if (dim_ == 0) throw ConfigError("index dimension must be positive");
}

std::shared_ptr<const VectorIndex::State> VectorIndex::snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
}

std::size_t VectorIndex::size() const { return snapshot()->records.size(); }

void VectorIndex::index(std::vector<EmbeddingRecord> records) {
    for (auto& r : records) {
        if (r.vector.size() != dim_) throw DimensionError(r.record_id, dim_, r.vector.size());
        check_attrs(r);
        const double norm = l2(r.vector);
        if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("record '" + r.record_id + "' has a zero or non-finite vector");
        for (double& x : r.vector) x /= norm;
    }
    std::lock_guard lock(mu_);
    auto next = std::make_shared<State>(*state_);
    for (auto& r : records) next->records[r.record_id] = std::move(r);
    state_ = std::move(next);
}

void VectorIndex::remove(const std::vector<std::string>& record_ids) {
    std::lock_guard lock(mu_);
    auto next = std::make_shared<State>(*state_);
    for (const auto& id : record_ids) next->records.erase(id);
    state_ = std::move(next);
}

void VectorIndex::remove_document(const std::string& doc_id) {
    std::lock_guard lock(mu_);
    auto next = std::make_shared<State>(*state_);
    for (auto it = next->records.begin(); it != next->records.end();) {
        const bool doc_scoped = it->second.kind == RecordKind::chunk || it->second.kind == RecordKind::asset_text;
        it = (doc_scoped && it->second.attrs.doc_id == doc_id) ? next->records.erase(it) : std::next(it);
    }
    state_ = std::move(next);
}

std::optional<EmbeddingRecord> VectorIndex::get(const std::string& record_id) const {
    auto snap = snapshot();
    auto it = snap->records.find(record_id);
    if (it == snap->records.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> VectorIndex::ids() const {
    auto snap = snapshot();
    std::vector<std::string> out;
    out.reserve(snap->records.size());
    for (const auto& [id, _] : snap->records) out.push_back(id);
    return out;
}

TopKResult VectorIndex::search(std::span<const double> query, std::size_t k, const SearchFilter& filter) const {
    if (query.size() != dim_) throw DimensionError("<query>", dim_, query.size());
    if (k < 1) throw InvalidArgument("k must be at least 1");
    TopKResult result;
    result.k_requested = k;

    const double norm = l2(query);
    if (!(norm > 0.0)) throw InvalidArgument("query vector is zero");
    std::vector<double> q(query.begin(), query.end());
    for (double& x : q) x /= norm;

    auto snap = snapshot();
    std::vector<Hit> scored;
    scored.reserve(snap->records.size());
    for (const auto& [id, r] : snap->records) {
        if (!filter.admits(r)) continue;
        double dot = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) dot += q[i] * r.vector[i];
        scored.push_back({id, dot});
    }
    const auto better = [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.record_id < b.record_id;
    };
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
    scored.resize(take);
    result.hits = std::move(scored);
    result.k_returned = result.hits.size();
    return result;
}

void VectorIndex::save(const fs::path& path) const {
    auto snap = snapshot();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write index " + path.string());
    const std::uint32_t version = kFormatVersion;
    const auto dim = static_cast<std::uint32_t>(dim_);
    const auto count = static_cast<std::uint64_t>(snap->records.size());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    json sidecar = json::array();
    for (const auto& [id, r] : snap->records) {
        out.write(reinterpret_cast<const char*>(r.vector.data()), static_cast<std::streamsize>(dim_ * sizeof(double)));
        sidecar.push_back({{"record_id", id}, {"kind", to_string(r.kind)}, {"payload", r.payload_text}, {"attrs", attrs_json(r.attrs)}});
    }
    std::ofstream meta(path.string() + ".json", std::ios::binary | std::ios::trunc);
    meta << sidecar.dump() << '\n';
}

VectorIndex VectorIndex::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read index " + path.string());
    char magic[4];
    std::uint32_t version = 0, dim = 0;
    std::uint64_t count = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(path.string() + " is not a vector index file");
    if (version != kFormatVersion) throw Error(path.string() + ": unsupported index version " + std::to_string(version));

    std::ifstream meta_in(path.string() + ".json", std::ios::binary);
    if (!meta_in) throw Error("missing index sidecar for " + path.string());
    const json sidecar = json::parse(meta_in);
    if (sidecar.size() != count) throw Error(path.string() + ": sidecar and vector counts differ");

    VectorIndex idx(dim);
    auto state = std::make_shared<State>();
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord r;
        r.vector.resize(dim);
        in.read(reinterpret_cast<char*>(r.vector.data()), static_cast<std::streamsize>(dim * sizeof(double)));
        if (!in) throw Error(path.string() + ": truncated vector data");
        const json& m = sidecar[i];
        r.record_id = m.at("record_id").get<std::string>();
        r.kind = parse_record_kind(m.at("kind").get<std::string>());
        r.payload_text = m.at("payload").get<std::string>();
        r.attrs = attrs_from(m.at("attrs"));
        state->records[r.record_id] = std::move(r);
    }
    idx.state_ = std::move(state);
    return idx;
}

TopKResult rerank_hits(const VectorIndex& index, Gateway& gateway, const std::string& query_text, TopKResult recall,
                       std::size_t k_final, CostLedger* slice) {
    TopKResult out;
    out.k_requested = k_final;
    if (recall.hits.empty()) return out;
    std::vector<std::string> payloads;
    payloads.reserve(recall.hits.size());
    for (const auto& h : recall.hits) {
        auto rec = index.get(h.record_id);
        payloads.push_back(rec ? rec->payload_text : std::string());
    }
    const RerankResult rr = gateway.rerank(query_text, payloads, slice);
    out.degraded = rr.degraded;
    for (const auto& [idx, score] : rr.ranking) {
        if (out.hits.size() == k_final) break;
        out.hits.push_back({recall.hits[idx].record_id, rr.degraded ? recall.hits[idx].score : score});
    }
    out.k_returned = out.hits.size();
    return out;
}

TopKResult search_then_rerank(const VectorIndex& index, Gateway& gateway, const std::string& query_text,
                              std::size_t k_recall, std::size_t k_final, const SearchFilter& filter,
                              CostLedger* slice) {
    if (k_final > k_recall) throw InvalidArgument("k_final must not exceed k_recall");
    const auto qv = gateway.embed({query_text}, slice);
    TopKResult recall = index.search(qv.at(0), k_recall, filter);
    return rerank_hits(index, gateway, query_text, std::move(recall), k_final, slice);
}

}  // namespace docrag
