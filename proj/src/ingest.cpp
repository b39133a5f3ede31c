#include "docrag/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

#include "docrag/errors.hpp"

namespace docrag {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(BlockType type) {
    switch (type) {
        case BlockType::text: return "text";
        case BlockType::image: return "image";
        case BlockType::table: return "table";
        case BlockType::equation: return "equation";
    }
    return "text";
}

BlockType parse_block_type(std::string_view name) {
    if (name == "image") return BlockType::image;
    if (name == "table") return BlockType::table;
    if (name == "equation" || name == "interline_equation") return BlockType::equation;
    // Textual layout categories all feed the text stream.
    static const std::set<std::string_view> textual{"text", "title", "list", "code", "header", "footer",
                                                    "page_number", "aside_text", "page_footnote", "ref_text"};
    if (textual.count(name)) return BlockType::text;
    throw InvalidArgument("unknown block type '" + std::string(name) + "'");
}

void to_json(json& j, const ContentBlock& b) {
    j = json{{"block_id", b.block_id},
             {"type", to_string(b.type)},
             {"content", b.content},
             {"bbox", {b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1}},
             {"page", b.page},
             {"storage_path", b.storage_path},
             {"doc_id", b.doc_id},
             {"source_index", b.source_index}};
}

void from_json(const json& j, ContentBlock& b) {
    b.block_id = j.at("block_id").get<std::string>();
    b.type = parse_block_type(j.at("type").get<std::string>());
    b.content = j.at("content").get<std::string>();
    const auto box = j.at("bbox").get<std::vector<double>>();
    if (box.size() != 4) throw InvalidArgument("bbox must have four numbers");
    b.bbox = {box[0], box[1], box[2], box[3]};
    b.page = j.at("page").get<int>();
    b.storage_path = j.at("storage_path").get<std::string>();
    b.doc_id = j.at("doc_id").get<std::string>();
    b.source_index = j.value("source_index", std::size_t{0});
}

bool reading_order_less(const ContentBlock& a, const ContentBlock& b) {
    return std::tie(a.page, a.bbox.y0, a.bbox.x0, a.bbox.y1, a.bbox.x1, a.source_index, a.block_id) <
           std::tie(b.page, b.bbox.y0, b.bbox.x0, b.bbox.y1, b.bbox.x1, b.source_index, b.block_id);
}

// ---------------------------------------------------------------------------

std::string media_type_for(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    if (ext == ".bmp") return "image/bmp";
    if (ext == ".svg") return "image/svg+xml";
    return "application/octet-stream";
}

bool AssetRepository::add(const std::string& storage_path) {
    std::error_code ec;
    if (!fs::is_regular_file(resolve(storage_path), ec)) return false;
    entries_[storage_path] = media_type_for(storage_path);
    return true;
}

std::string AssetRepository::media_type(const std::string& storage_path) const {
    auto it = entries_.find(storage_path);
    if (it == entries_.end()) throw AssetMissing(storage_path);
    return it->second;
}

std::string AssetRepository::read_bytes(const std::string& storage_path) const {
    if (!contains(storage_path)) throw AssetMissing(storage_path);
    std::ifstream in(resolve(storage_path), std::ios::binary);
    if (!in) throw AssetMissing(storage_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---------------------------------------------------------------------------

namespace {

std::string caption_of(const json& obj, const char* list_key) {
    std::string out;
    auto append = [&](const std::string& s) {
        if (s.empty()) return;
        if (!out.empty()) out += ' ';
        out += s;
    };
    if (auto it = obj.find(list_key); it != obj.end()) {
        if (it->is_array()) {
            for (const auto& part : *it)
                if (part.is_string()) append(part.get<std::string>());
        } else if (it->is_string()) {
            append(it->get<std::string>());
        }
    }
    if (out.empty()) {
        if (auto it = obj.find("caption"); it != obj.end() && it->is_string()) append(it->get<std::string>());
    }
    return out;
}

std::string block_id_for(std::size_t index) {
    std::ostringstream os;
    os << 'b' << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

}  // namespace

ParseResult parse_layout(const json& document, const fs::path& asset_root, const std::string& doc_id,
                         const ParseOptions& options) {
    if (!document.is_array()) throw SchemaError(0, "layout document must be a JSON array");
    ParseResult result;
    result.assets = AssetRepository(asset_root);
    std::set<std::string> seen_ids;

    for (std::size_t i = 0; i < document.size(); ++i) {
        const json& obj = document[i];
        if (!obj.is_object()) throw SchemaError(i, "block is not an object");

        ContentBlock b;
        b.doc_id = doc_id;
        b.source_index = i;

        auto type_it = obj.find("type");
        if (type_it == obj.end() || !type_it->is_string()) throw SchemaError(i, "missing field 'type'");
        try {
            b.type = parse_block_type(type_it->get<std::string>());
        } catch (const InvalidArgument& e) {
            throw SchemaError(i, e.what());
        }

        auto bbox_it = obj.find("bbox");
        if (bbox_it == obj.end() || !bbox_it->is_array() || bbox_it->size() != 4)
            throw SchemaError(i, "missing or malformed field 'bbox'");
        for (const auto& v : *bbox_it)
            if (!v.is_number()) throw SchemaError(i, "bbox entries must be numbers");
        b.bbox = {(*bbox_it)[0].get<double>(), (*bbox_it)[1].get<double>(), (*bbox_it)[2].get<double>(),
                  (*bbox_it)[3].get<double>()};
        if (!(b.bbox.x0 < b.bbox.x1) || !(b.bbox.y0 < b.bbox.y1)) throw SchemaError(i, "degenerate bbox");

        if (auto p = obj.find("page_idx"); p != obj.end() && p->is_number_integer()) {
            b.page = p->get<int>() + 1;
        } else if (auto q = obj.find("page"); q != obj.end() && q->is_number_integer()) {
            b.page = q->get<int>();
        } else {
            throw SchemaError(i, "missing field 'page_idx'");
        }
        if (b.page < 1) throw SchemaError(i, "page index out of range");

        if (auto id = obj.find("block_id"); id != obj.end() && id->is_string()) {
            b.block_id = id->get<std::string>();
        } else {
            b.block_id = block_id_for(i);
        }
        if (!seen_ids.insert(b.block_id).second) throw SchemaError(i, "duplicate block_id '" + b.block_id + "'");

        std::string img_path;
        if (auto ip = obj.find("img_path"); ip != obj.end() && ip->is_string()) img_path = ip->get<std::string>();

        switch (b.type) {
            case BlockType::text: {
                auto t = obj.find("text");
                if (t == obj.end() || !t->is_string()) throw SchemaError(i, "text block lacks 'text'");
                b.content = t->get<std::string>();
                break;
            }
            case BlockType::equation: {
                if (auto t = obj.find("text"); t != obj.end() && t->is_string()) b.content = t->get<std::string>();
                b.storage_path = img_path;
                if (img_path.empty() && b.content.empty()) throw SchemaError(i, "equation has neither text nor img_path");
                break;
            }
            case BlockType::image:
            case BlockType::table: {
                if (img_path.empty()) throw SchemaError(i, "asset block lacks 'img_path'");
                b.storage_path = img_path;
                b.content = caption_of(obj, b.type == BlockType::image ? "image_caption" : "table_caption");
                break;
            }
        }

        if (b.is_asset() && !result.assets.add(b.storage_path)) {
            if (!options.lenient) throw AssetMissing(b.storage_path);
            result.issues.push_back("block " + std::to_string(i) + ": asset not found: " + b.storage_path);
            continue;
        }
        result.blocks.push_back(std::move(b));
    }

    std::sort(result.blocks.begin(), result.blocks.end(), reading_order_less);
    return result;
}

ParseResult parse_layout_file(const fs::path& path, const fs::path& asset_root, const std::string& doc_id,
                              const ParseOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open layout file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(0, std::string("layout file is not valid JSON: ") + e.what());
    }
    return parse_layout(doc, asset_root, doc_id, options);
}

// ---------------------------------------------------------------------------

std::vector<std::string> TokenStream::blocks_in(std::size_t begin, std::size_t end) const {
    std::vector<std::string> out;
    for (const auto& r : blocks)
        if (r.begin < end && begin < r.end) out.push_back(r.block_id);
    return out;
}

TokenStream serialize_text(const std::vector<ContentBlock>& blocks, const TokenCounter& counter) {
    TokenStream stream;
    for (const auto& b : blocks) {
        if (stream.doc_id.empty()) stream.doc_id = b.doc_id;
        if (!b.in_text_stream()) continue;
        const auto spans = counter.segment(b.content);
        if (spans.empty()) continue;
        if (!stream.text.empty()) stream.text += "\n\n";
        const std::size_t base = stream.text.size();
        stream.text += b.content;
        const std::size_t first = stream.tokens.size();
        for (const auto& s : spans) stream.tokens.push_back({base + s.begin, base + s.end});
        stream.blocks.push_back({b.block_id, first, stream.tokens.size()});
    }
    return stream;
}

void to_json(json& j, const Chunk& c) {
    j = json{{"chunk_id", c.chunk_id},
             {"text", c.text},
             {"token_span", {c.token_span.start, c.token_span.end}},
             {"source_block_ids", c.source_block_ids},
             {"doc_id", c.doc_id}};
}

void from_json(const json& j, Chunk& c) {
    c.chunk_id = j.at("chunk_id").get<std::string>();
    c.text = j.at("text").get<std::string>();
    const auto span = j.at("token_span").get<std::vector<std::size_t>>();
    if (span.size() != 2) throw InvalidArgument("token_span must have two entries");
    c.token_span = {span[0], span[1]};
    c.source_block_ids = j.at("source_block_ids").get<std::vector<std::string>>();
    c.doc_id = j.at("doc_id").get<std::string>();
}

std::vector<Span> chunk_spans(std::size_t n, std::size_t window, std::size_t overlap) {
    if (window == 0) throw ConfigError("chunk window must be positive");
    if (overlap >= window) throw ConfigError("chunk overlap must be smaller than the window");
    std::vector<Span> spans;
    const std::size_t stride = window - overlap;
    for (std::size_t start = 0; start < n; start += stride) {
        const std::size_t end = std::min(start + window, n);
        spans.push_back({start, end});
        if (end == n) break;
    }
    return spans;
}

std::vector<Chunk> chunk(const TokenStream& stream, std::size_t window, std::size_t overlap) {
    const auto spans = chunk_spans(stream.size(), window, overlap);
    std::vector<Chunk> chunks;
    chunks.reserve(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const Span s = spans[i];
        Chunk c;
        std::ostringstream id;
        id << stream.doc_id << "#c" << std::setw(4) << std::setfill('0') << i;
        c.chunk_id = id.str();
        c.doc_id = stream.doc_id;
        c.token_span = s;
        const std::size_t b = stream.tokens[s.start].begin;
        const std::size_t e = stream.tokens[s.end - 1].end;
        c.text = stream.text.substr(b, e - b);
        c.source_block_ids = stream.blocks_in(s.start, s.end);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

}  // namespace docrag
