#include "docrag/corpus.hpp"

#include <algorithm>
#include <fstream>

#include "docrag/errors.hpp"

namespace docrag {

namespace fs = std::filesystem;
using nlohmann::json;

void CorpusStore::put_document(DocumentInfo info, std::vector<ContentBlock> blocks, AssetRepository assets,
                               std::vector<Chunk> chunks) {
    remove_document(info.doc_id);
    info.block_count = blocks.size();
    info.chunk_count = chunks.size();
    const std::string id = info.doc_id;
    for (std::size_t i = 0; i < chunks.size(); ++i) chunk_index_[chunks[i].chunk_id] = {id, i};
    docs_[id] = Entry{std::move(info), std::move(blocks), std::move(assets), std::move(chunks)};
}

void CorpusStore::remove_document(const std::string& doc_id) {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) return;
    for (const auto& c : it->second.chunks) chunk_index_.erase(c.chunk_id);
    docs_.erase(it);
}

const DocumentInfo& CorpusStore::document(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) throw InvalidArgument("unknown document '" + doc_id + "'");
    return it->second.info;
}

std::vector<std::string> CorpusStore::document_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : docs_) ids.push_back(id);
    return ids;
}

const std::vector<ContentBlock>& CorpusStore::blocks(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) throw InvalidArgument("unknown document '" + doc_id + "'");
    return it->second.blocks;
}

const AssetRepository& CorpusStore::assets(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) throw InvalidArgument("unknown document '" + doc_id + "'");
    return it->second.assets;
}

const std::vector<Chunk>& CorpusStore::chunks(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) throw InvalidArgument("unknown document '" + doc_id + "'");
    return it->second.chunks;
}

const ContentBlock* CorpusStore::find_block(const std::string& doc_id, const std::string& block_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) return nullptr;
    for (const auto& b : it->second.blocks)
        if (b.block_id == block_id) return &b;
    return nullptr;
}

const Chunk* CorpusStore::find_chunk(const std::string& chunk_id) const {
    auto it = chunk_index_.find(chunk_id);
    if (it == chunk_index_.end()) return nullptr;
    return &docs_.at(it->second.first).chunks[it->second.second];
}

std::size_t CorpusStore::total_blocks() const {
    std::size_t n = 0;
    for (const auto& [_, e] : docs_) n += e.blocks.size();
    return n;
}

std::size_t CorpusStore::total_chunks() const {
    std::size_t n = 0;
    for (const auto& [_, e] : docs_) n += e.chunks.size();
    return n;
}

void CorpusStore::save(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream docs(dir / "documents.jsonl", std::ios::binary | std::ios::trunc);
    std::ofstream blocks(dir / "blocks.jsonl", std::ios::binary | std::ios::trunc);
    std::ofstream chunks(dir / "chunks.jsonl", std::ios::binary | std::ios::trunc);
    if (!docs || !blocks || !chunks) throw Error("cannot write corpus files under " + dir.string());
    for (const auto& [id, e] : docs_) {
        docs << json{{"doc_id", id},
                     {"source_path", e.info.source_path},
                     {"asset_root", e.info.asset_root},
                     {"page_count", e.info.page_count},
                     {"block_count", e.info.block_count},
                     {"chunk_count", e.info.chunk_count}}
                    .dump()
             << '\n';
        for (const auto& b : e.blocks) blocks << json(b).dump() << '\n';
        for (const auto& c : e.chunks) chunks << json(c).dump() << '\n';
    }
}

namespace {

template <typename F>
void for_each_line(const fs::path& path, F&& f) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        f(json::parse(line));
    }
}

}  // namespace

CorpusStore CorpusStore::load(const fs::path& dir) {
    CorpusStore store;
    std::map<std::string, Entry> entries;
    for_each_line(dir / "documents.jsonl", [&](const json& j) {
        Entry e;
        e.info.doc_id = j.at("doc_id").get<std::string>();
        e.info.source_path = j.value("source_path", "");
        e.info.asset_root = j.value("asset_root", "");
        e.info.page_count = j.value("page_count", 0);
        e.assets = AssetRepository(e.info.asset_root);
        entries[e.info.doc_id] = std::move(e);
    });
    for_each_line(dir / "blocks.jsonl", [&](const json& j) {
        auto b = j.get<ContentBlock>();
        auto it = entries.find(b.doc_id);
        if (it == entries.end()) throw InvalidArgument("block of unknown document " + b.doc_id);
        if (b.is_asset()) it->second.assets.add(b.storage_path);
        it->second.blocks.push_back(std::move(b));
    });
    for_each_line(dir / "chunks.jsonl", [&](const json& j) {
        auto c = j.get<Chunk>();
        auto it = entries.find(c.doc_id);
        if (it == entries.end()) throw InvalidArgument("chunk of unknown document " + c.doc_id);
        it->second.chunks.push_back(std::move(c));
    });
    for (auto& [id, e] : entries) {
        std::sort(e.blocks.begin(), e.blocks.end(), reading_order_less);
        store.put_document(std::move(e.info), std::move(e.blocks), std::move(e.assets), std::move(e.chunks));
    }
    return store;
}

}  // namespace docrag
