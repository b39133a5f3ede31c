#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "docrag/tokenizer.hpp"

namespace docrag {

enum class BlockType { text, image, table, equation };

std::string_view to_string(BlockType type);
BlockType parse_block_type(std::string_view name);

struct BoundingBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// One parsed layout region: type T, content C, box B, page P, storage path S.
struct ContentBlock {
    std::string block_id;
    BlockType type = BlockType::text;
    std::string content;       // text, or caption for assets (may be empty)
    BoundingBox bbox;
    int page = 1;              // 1-based
    std::string storage_path;  // relative to the asset root; empty for text
    std::string doc_id;
    std::size_t source_index = 0;  // position in the input array

    // Equations without an image join the textual stream.
    bool in_text_stream() const { return storage_path.empty() && (type == BlockType::text || type == BlockType::equation); }
    bool is_asset() const { return !storage_path.empty(); }

    friend bool operator==(const ContentBlock&, const ContentBlock&) = default;
};

void to_json(nlohmann::json& j, const ContentBlock& b);
void from_json(const nlohmann::json& j, ContentBlock& b);

// Total order: page, then y0, then x0, with the remaining box edges and the
// input position as tie breakers.
bool reading_order_less(const ContentBlock& a, const ContentBlock& b);

class AssetRepository {
public:
    AssetRepository() = default;
    explicit AssetRepository(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const { return root_; }
    const std::map<std::string, std::string>& entries() const { return entries_; }

    // Registers `storage_path` if the file exists under the root.
    bool add(const std::string& storage_path);
    bool contains(const std::string& storage_path) const { return entries_.count(storage_path) > 0; }
    std::string media_type(const std::string& storage_path) const;
    std::filesystem::path resolve(const std::string& storage_path) const { return root_ / storage_path; }
    // Throws AssetMissing when the file is not registered or cannot be read.
    std::string read_bytes(const std::string& storage_path) const;

private:
    std::filesystem::path root_;
    std::map<std::string, std::string> entries_;  // storage path -> media type
};

std::string media_type_for(const std::string& path);

struct ParseOptions {
    bool lenient = false;  // dangling asset paths are collected instead of thrown
};

struct ParseResult {
    std::vector<ContentBlock> blocks;
    AssetRepository assets;
    std::vector<std::string> issues;  // lenient-mode asset problems; affected blocks are dropped
};

// Input: an array of content-list objects with type, text/caption, bbox,
// page_idx (0-based) and, for assets, img_path.
ParseResult parse_layout(const nlohmann::json& document, const std::filesystem::path& asset_root,
                         const std::string& doc_id, const ParseOptions& options = {});
ParseResult parse_layout_file(const std::filesystem::path& path, const std::filesystem::path& asset_root,
                              const std::string& doc_id, const ParseOptions& options = {});

struct BlockTokenRange {
    std::string block_id;
    std::size_t begin = 0;  // token offsets, half-open
    std::size_t end = 0;
};

struct TokenStream {
    std::string doc_id;
    std::string text;                 // text blocks joined by blank lines
    std::vector<TokenSpan> tokens;    // byte ranges into `text`
    std::vector<BlockTokenRange> blocks;

    std::size_t size() const { return tokens.size(); }
    std::string_view token(std::size_t i) const { return std::string_view(text).substr(tokens[i].begin, tokens[i].end - tokens[i].begin); }
    // Block ids whose token ranges intersect [begin, end).
    std::vector<std::string> blocks_in(std::size_t begin, std::size_t end) const;
};

TokenStream serialize_text(const std::vector<ContentBlock>& blocks, const TokenCounter& counter);

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    friend bool operator==(const Span&, const Span&) = default;
};

struct Chunk {
    std::string chunk_id;
    std::string text;
    Span token_span;
    std::vector<std::string> source_block_ids;
    std::string doc_id;
};

void to_json(nlohmann::json& j, const Chunk& c);
void from_json(const nlohmann::json& j, Chunk& c);

inline constexpr std::size_t kDefaultWindow = 1200;
inline constexpr std::size_t kDefaultOverlap = 100;

// Window positions over a stream of n tokens; throws ConfigError when
// overlap >= window.
std::vector<Span> chunk_spans(std::size_t n, std::size_t window = kDefaultWindow, std::size_t overlap = kDefaultOverlap);

std::vector<Chunk> chunk(const TokenStream& stream, std::size_t window = kDefaultWindow,
                         std::size_t overlap = kDefaultOverlap);

}  // namespace docrag
