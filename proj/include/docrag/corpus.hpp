#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docrag/ingest.hpp"

namespace docrag {

struct DocumentInfo {
    std::string doc_id;
    std::string source_path;
    std::string asset_root;
    int page_count = 0;
    std::size_t block_count = 0;
    std::size_t chunk_count = 0;
};

// Blocks, chunks and asset repositories for every ingested document.
class CorpusStore {
public:
    void put_document(DocumentInfo info, std::vector<ContentBlock> blocks, AssetRepository assets,
                      std::vector<Chunk> chunks);
    void remove_document(const std::string& doc_id);

    bool has_document(const std::string& doc_id) const { return docs_.count(doc_id) > 0; }
    const DocumentInfo& document(const std::string& doc_id) const;
    std::vector<std::string> document_ids() const;

    // Blocks of one document in reading order.
    const std::vector<ContentBlock>& blocks(const std::string& doc_id) const;
    const AssetRepository& assets(const std::string& doc_id) const;
    const std::vector<Chunk>& chunks(const std::string& doc_id) const;

    const ContentBlock* find_block(const std::string& doc_id, const std::string& block_id) const;
    const Chunk* find_chunk(const std::string& chunk_id) const;

    std::size_t total_blocks() const;
    std::size_t total_chunks() const;

    // documents.jsonl, blocks.jsonl and chunks.jsonl under `dir`.
    void save(const std::filesystem::path& dir) const;
    static CorpusStore load(const std::filesystem::path& dir);

private:
    struct Entry {
        DocumentInfo info;
        std::vector<ContentBlock> blocks;
        AssetRepository assets;
        std::vector<Chunk> chunks;
    };
    std::map<std::string, Entry> docs_;
    std::map<std::string, std::pair<std::string, std::size_t>> chunk_index_;  // chunk id -> (doc, position)
};

}  // namespace docrag
