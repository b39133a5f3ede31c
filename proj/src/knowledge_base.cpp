#include "docrag/knowledge_base.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace docrag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string collapse_ws(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char ch : s) {
        if (is_space(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(ch);
    }
    return out;
}

std::string join_distinct(const std::vector<std::string>& parts) {
    std::vector<std::string> seen;
    std::string out;
    for (const auto& p : parts) {
        if (p.empty() || std::find(seen.begin(), seen.end(), p) != seen.end()) continue;
        seen.push_back(p);
        if (!out.empty()) out += "\n";
        out += p;
    }
    return out;
}

}  // namespace

std::string normalize_name(std::string_view surface) {
    std::string folded;
    folded.reserve(surface.size());
    for (char ch : surface) folded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    std::string s = collapse_ws(folded);
    std::size_t b = 0, e = s.size();
    auto strip = [](unsigned char c) { return c < 0x80 && (std::ispunct(c) || is_space(c)); };
    while (b < e && strip(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && strip(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// ---------------------------------------------------------------------------
// records

void Entity::refresh() {
    entity_type.clear();
    std::vector<std::string> descs;
    provenance.clear();
    for (const auto& m : mentions) {
        if (entity_type.empty() && !m.entity_type.empty()) entity_type = m.entity_type;
        descs.push_back(m.description);
        provenance.insert(m.provenance);
    }
    description = join_distinct(descs);
}

void Relation::refresh() {
    std::vector<std::string> descs;
    provenance.clear();
    for (const auto& m : mentions) {
        descs.push_back(m.description);
        provenance.insert(m.provenance);
    }
    description = join_distinct(descs);
}

std::string Hyperedge::key() const {
    std::string k = source_chunk_id + "|";
    bool first = true;
    for (const auto& m : members) {
        if (!first) k += ",";
        k += m;
        first = false;
    }
    return k;
}

bool operator==(const Entity& a, const Entity& b) {
    return a.canonical_name == b.canonical_name && a.entity_type == b.entity_type && a.description == b.description &&
           a.provenance == b.provenance && a.mentions == b.mentions;
}

bool operator==(const Relation& a, const Relation& b) {
    return a.head == b.head && a.tail == b.tail && a.predicate == b.predicate && a.description == b.description &&
           a.provenance == b.provenance && a.mentions == b.mentions;
}

bool operator==(const Hyperedge& a, const Hyperedge& b) {
    return a.members == b.members && a.source_chunk_id == b.source_chunk_id && a.doc_id == b.doc_id &&
           a.weight == b.weight;
}

bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.entities_ == b.entities_ && a.relations_ == b.relations_ && a.hyperedges_ == b.hyperedges_;
}

// ---------------------------------------------------------------------------
// graph

void KnowledgeGraph::merge_entities(const std::vector<Entity>& batch) {
    for (const auto& incoming : batch) {
        const std::string name = normalize_name(incoming.canonical_name);
        if (name.empty()) continue;
        auto [it, inserted] = entities_.try_emplace(name);
        Entity& node = it->second;
        if (inserted) node.canonical_name = name;

        std::vector<EntityMention> mentions = incoming.mentions;
        if (mentions.empty()) {
            for (const auto& p : incoming.provenance)
                mentions.push_back({incoming.entity_type, incoming.description, p});
        }
        for (auto& m : mentions) {
            if (std::find(node.mentions.begin(), node.mentions.end(), m) == node.mentions.end())
                node.mentions.push_back(std::move(m));
        }
        node.refresh();
        if (node.mentions.empty()) entities_.erase(it);  // provenance must be non-empty
    }
}

void KnowledgeGraph::merge_relations(const std::vector<Relation>& batch) {
    for (const auto& incoming : batch) {
        Relation r;
        r.head = normalize_name(incoming.head);
        r.tail = normalize_name(incoming.tail);
        r.predicate = collapse_ws(trim(incoming.predicate));
        if (r.head.empty() || r.tail.empty() || r.predicate.empty()) continue;
        if (!entities_.count(r.head) || !entities_.count(r.tail))
            throw InvalidArgument("relation " + r.key() + " references an unknown entity");

        auto [it, inserted] = relations_.try_emplace(r.key(), r);
        Relation& node = it->second;
        std::vector<RelationMention> mentions = incoming.mentions;
        if (mentions.empty()) {
            for (const auto& p : incoming.provenance) mentions.push_back({incoming.description, p});
        }
        for (auto& m : mentions) {
            if (std::find(node.mentions.begin(), node.mentions.end(), m) == node.mentions.end())
                node.mentions.push_back(std::move(m));
        }
        node.refresh();
        if (node.mentions.empty()) {
            relations_.erase(it);
            continue;
        }
        entity_relations_[node.head].insert(node.key());
        entity_relations_[node.tail].insert(node.key());
    }
}

void KnowledgeGraph::add_hyperedge(Hyperedge edge) {
    if (edge.members.size() < 2) return;
    for (const auto& m : edge.members)
        if (!entities_.count(m)) throw InvalidArgument("hyperedge member '" + m + "' is not an entity");
    const std::string key = edge.key();
    for (const auto& m : edge.members) entity_hyperedges_[m].insert(key);
    hyperedges_[key] = std::move(edge);
}

void KnowledgeGraph::remove_document(const std::string& doc_id) {
    for (auto it = entities_.begin(); it != entities_.end();) {
        auto& ms = it->second.mentions;
        ms.erase(std::remove_if(ms.begin(), ms.end(), [&](const EntityMention& m) { return m.provenance.doc_id == doc_id; }),
                 ms.end());
        if (ms.empty()) {
            it = entities_.erase(it);
        } else {
            it->second.refresh();
            ++it;
        }
    }
    for (auto it = relations_.begin(); it != relations_.end();) {
        auto& ms = it->second.mentions;
        ms.erase(std::remove_if(ms.begin(), ms.end(), [&](const RelationMention& m) { return m.provenance.doc_id == doc_id; }),
                 ms.end());
        const bool dangling = !entities_.count(it->second.head) || !entities_.count(it->second.tail);
        if (ms.empty() || dangling) {
            it = relations_.erase(it);
        } else {
            it->second.refresh();
            ++it;
        }
    }
    for (auto it = hyperedges_.begin(); it != hyperedges_.end();) {
        bool drop = it->second.doc_id == doc_id;
        for (const auto& m : it->second.members) drop = drop || !entities_.count(m);
        it = drop ? hyperedges_.erase(it) : std::next(it);
    }
    rebuild_adjacency();
}

void KnowledgeGraph::rebuild_adjacency() {
    entity_relations_.clear();
    entity_hyperedges_.clear();
    for (const auto& [key, r] : relations_) {
        entity_relations_[r.head].insert(key);
        entity_relations_[r.tail].insert(key);
    }
    for (const auto& [key, h] : hyperedges_)
        for (const auto& m : h.members) entity_hyperedges_[m].insert(key);
}

const Entity* KnowledgeGraph::find_entity(std::string_view name) const {
    auto it = entities_.find(normalize_name(name));
    return it == entities_.end() ? nullptr : &it->second;
}

std::vector<const Relation*> KnowledgeGraph::relations_of(const std::string& canonical_name) const {
    std::vector<const Relation*> out;
    auto it = entity_relations_.find(canonical_name);
    if (it == entity_relations_.end()) return out;
    for (const auto& key : it->second) out.push_back(&relations_.at(key));
    return out;
}

std::vector<const Hyperedge*> KnowledgeGraph::hyperedges_of(const std::string& canonical_name) const {
    std::vector<const Hyperedge*> out;
    auto it = entity_hyperedges_.find(canonical_name);
    if (it == entity_hyperedges_.end()) return out;
    for (const auto& key : it->second) out.push_back(&hyperedges_.at(key));
    return out;
}

bool KnowledgeGraph::referentially_closed() const {
    for (const auto& [_, r] : relations_)
        if (!entities_.count(r.head) || !entities_.count(r.tail)) return false;
    for (const auto& [_, h] : hyperedges_)
        for (const auto& m : h.members)
            if (!entities_.count(m)) return false;
    return true;
}

namespace {

json prov_json(const Provenance& p) { return json::array({p.doc_id, p.source_id}); }
Provenance prov_from(const json& j) { return {j.at(0).get<std::string>(), j.at(1).get<std::string>()}; }

template <typename F>
void read_lines(const fs::path& path, F&& f) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::string line;
    while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) f(json::parse(line));
}

}  // namespace

void KnowledgeGraph::save(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream ents(dir / "entities.jsonl", std::ios::binary | std::ios::trunc);
    std::ofstream rels(dir / "relations.jsonl", std::ios::binary | std::ios::trunc);
    std::ofstream hyps(dir / "hyperedges.jsonl", std::ios::binary | std::ios::trunc);
    if (!ents || !rels || !hyps) throw Error("cannot write graph files under " + dir.string());
    for (const auto& [name, e] : entities_) {
        json mentions = json::array();
        for (const auto& m : e.mentions)
            mentions.push_back({{"type", m.entity_type}, {"description", m.description}, {"provenance", prov_json(m.provenance)}});
        ents << json{{"name", name}, {"type", e.entity_type}, {"description", e.description}, {"mentions", mentions}}.dump()
             << '\n';
    }
    for (const auto& [_, r] : relations_) {
        json mentions = json::array();
        for (const auto& m : r.mentions)
            mentions.push_back({{"description", m.description}, {"provenance", prov_json(m.provenance)}});
        rels << json{{"head", r.head}, {"tail", r.tail}, {"predicate", r.predicate}, {"description", r.description},
                     {"mentions", mentions}}
                    .dump()
             << '\n';
    }
    for (const auto& [_, h] : hyperedges_) {
        hyps << json{{"members", h.members}, {"source_chunk_id", h.source_chunk_id}, {"doc_id", h.doc_id}, {"weight", h.weight}}
                    .dump()
             << '\n';
    }
}

KnowledgeGraph KnowledgeGraph::load(const fs::path& dir) {
    KnowledgeGraph g;
    read_lines(dir / "entities.jsonl", [&](const json& j) {
        Entity e;
        e.canonical_name = j.at("name").get<std::string>();
        for (const auto& m : j.at("mentions"))
            e.mentions.push_back({m.at("type").get<std::string>(), m.at("description").get<std::string>(),
                                  prov_from(m.at("provenance"))});
        g.merge_entities({e});
    });
    read_lines(dir / "relations.jsonl", [&](const json& j) {
        Relation r;
        r.head = j.at("head").get<std::string>();
        r.tail = j.at("tail").get<std::string>();
        r.predicate = j.at("predicate").get<std::string>();
        for (const auto& m : j.at("mentions"))
            r.mentions.push_back({m.at("description").get<std::string>(), prov_from(m.at("provenance"))});
        g.merge_relations({r});
    });
    read_lines(dir / "hyperedges.jsonl", [&](const json& j) {
        Hyperedge h;
        h.members = j.at("members").get<std::set<std::string>>();
        h.source_chunk_id = j.at("source_chunk_id").get<std::string>();
        h.doc_id = j.at("doc_id").get<std::string>();
        h.weight = j.at("weight").get<double>();
        g.add_hyperedge(std::move(h));
    });
    return g;
}

// ---------------------------------------------------------------------------
// extraction

namespace {

std::string strip_quotes(std::string s) {
    s = trim(s);
    while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
        s = trim(std::string_view(s).substr(1, s.size() - 2));
    }
    return s;
}

std::vector<std::string> split_on(std::string_view s, std::string_view delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + delim.size();
    }
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

Extraction parse_extraction(std::string_view output) {
    Extraction ex;
    std::vector<std::string> pieces;
    for (const auto& line : split_on(output, "\n"))
        for (auto& part : split_on(line, "##")) pieces.push_back(std::move(part));

    for (auto& raw : pieces) {
        std::string rec = trim(raw);
        if (rec.empty()) continue;
        if (rec.front() == '(' && rec.back() == ')') rec = trim(std::string_view(rec).substr(1, rec.size() - 2));
        auto fields = split_on(rec, kRecordDelimiter);
        for (auto& f : fields) f = strip_quotes(f);
        const std::string kind = fields.empty() ? "" : lower(fields[0]);
        if (kind == "entity" && (fields.size() == 3 || fields.size() == 4) && !fields[1].empty()) {
            ex.entities.push_back({fields[1], fields[2], fields.size() == 4 ? fields[3] : ""});
        } else if (kind == "relation" && (fields.size() == 4 || fields.size() == 5) && !fields[1].empty() &&
                   !fields[2].empty()) {
            ex.relations.push_back({fields[1], fields[2], fields[3], fields.size() == 5 ? fields[4] : ""});
        } else {
            ++ex.malformed;
        }
    }
    return ex;
}

std::string extraction_prompt(std::string_view text) {
    std::string p =
        "Extract the named entities and the relations between them from the text below.\n"
        "Write one record per line and nothing else, using exactly these formats:\n"
        "entity<|>NAME<|>TYPE<|>DESCRIPTION\n"
        "relation<|>HEAD<|>TAIL<|>PREDICATE<|>DESCRIPTION\n"
        "Use names exactly as they appear in the text.\n\nText:\n";
    p += text;
    return p;
}

std::string reextraction_prompt(std::string_view text, const std::vector<std::string>& violations) {
    std::string p = extraction_prompt(text);
    p += "\n\nYour previous output had these problems:\n";
    for (const auto& v : violations) p += "- " + v + "\n";
    p += "Return the corrected records.";
    return p;
}

JudgeVerdict judge_extraction(const Extraction& ex, std::string_view text) {
    JudgeVerdict verdict;
    const std::string norm_text = normalize_name(text);
    if (ex.empty()) {
        verdict.violations.push_back("no parseable entity or relation records");
        return verdict;
    }

    std::set<std::string> listed;
    for (const auto& e : ex.entities) {
        const std::string n = normalize_name(e.name);
        if (n.empty()) {
            verdict.violations.push_back("entity with an empty name");
            continue;
        }
        if (norm_text.find(n) == std::string::npos && normalize_name(e.description).find(n) == std::string::npos) {
            verdict.violations.push_back("entity '" + e.name + "' does not occur in the text");
            continue;
        }
        listed.insert(n);
        verdict.valid.entities.push_back(e);
    }
    for (const auto& r : ex.relations) {
        const std::string h = normalize_name(r.head);
        const std::string t = normalize_name(r.tail);
        if (trim(r.predicate).empty()) {
            verdict.violations.push_back("relation " + r.head + " -> " + r.tail + " has no predicate");
            continue;
        }
        auto resolvable = [&](const std::string& n) {
            return !n.empty() && (listed.count(n) > 0 || norm_text.find(n) != std::string::npos);
        };
        if (!resolvable(h) || !resolvable(t)) {
            verdict.violations.push_back("relation " + r.head + " -> " + r.tail + " names an endpoint not found in the text");
            continue;
        }
        verdict.valid.relations.push_back(r);
    }
    return verdict;
}

void close_over_relations(Extraction& ex) {
    std::set<std::string> known;
    for (const auto& e : ex.entities) known.insert(normalize_name(e.name));
    for (const auto& r : ex.relations) {
        for (const auto* endpoint : {&r.head, &r.tail}) {
            const std::string n = normalize_name(*endpoint);
            if (!n.empty() && known.insert(n).second) ex.entities.push_back({*endpoint, "", ""});
        }
    }
}

namespace {

void append_unique(Extraction& into, const Extraction& from) {
    for (const auto& e : from.entities) {
        const bool dup = std::any_of(into.entities.begin(), into.entities.end(), [&](const ExtractedEntity& x) {
            return normalize_name(x.name) == normalize_name(e.name) && x.type == e.type && x.description == e.description;
        });
        if (!dup) into.entities.push_back(e);
    }
    for (const auto& r : from.relations) {
        const bool dup = std::any_of(into.relations.begin(), into.relations.end(), [&](const ExtractedRelation& x) {
            return normalize_name(x.head) == normalize_name(r.head) && normalize_name(x.tail) == normalize_name(r.tail) &&
                   x.predicate == r.predicate && x.description == r.description;
        });
        if (!dup) into.relations.push_back(r);
    }
}

}  // namespace

Extraction TripletExtractor::judge_and_retry(Extraction current, std::string_view text, CostLedger* slice) const {
    Extraction accepted;
    accepted.malformed = current.malformed;
    std::size_t rounds = 0;
    while (true) {
        JudgeVerdict verdict = judge_extraction(current, text);
        append_unique(accepted, verdict.valid);
        if (verdict.violations.empty()) break;
        if (rounds == max_rounds_) {
            accepted.dropped_invalid += verdict.violations.size();
            break;
        }
        ++rounds;
        const ModelCall call = gateway_.complete(
            Role::extractor_llm, ChatRequest{"You are a precise information extraction engine.", reextraction_prompt(text, verdict.violations), {}},
            StageTag::extraction, slice);
        current = parse_extraction(call.response);
        accepted.malformed += current.malformed;
    }
    accepted.extra_rounds = rounds;
    return accepted;
}

Extraction TripletExtractor::extract(std::string_view text, CostLedger* slice) const {
    if (trim(text).empty()) throw InvalidArgument("extraction input is empty");
    const ModelCall call = gateway_.complete(
        Role::extractor_llm, ChatRequest{"You are a precise information extraction engine.", extraction_prompt(text), {}},
        StageTag::extraction, slice);
    Extraction result = judge_and_retry(parse_extraction(call.response), text, slice);
    if (result.empty()) throw ExtractionEmpty("no valid records after " + std::to_string(result.extra_rounds + 1) + " rounds");
    close_over_relations(result);
    return result;
}

std::pair<std::vector<Entity>, std::vector<Relation>> to_graph_records(const Extraction& ex, const Provenance& prov) {
    std::vector<Entity> entities;
    for (const auto& e : ex.entities) {
        Entity ent;
        ent.canonical_name = normalize_name(e.name);
        if (ent.canonical_name.empty()) continue;
        ent.mentions.push_back({trim(e.type), trim(e.description), prov});
        ent.refresh();
        entities.push_back(std::move(ent));
    }
    std::vector<Relation> relations;
    for (const auto& r : ex.relations) {
        Relation rel;
        rel.head = normalize_name(r.head);
        rel.tail = normalize_name(r.tail);
        rel.predicate = collapse_ws(trim(r.predicate));
        rel.mentions.push_back({trim(r.description), prov});
        rel.refresh();
        relations.push_back(std::move(rel));
    }
    return {std::move(entities), std::move(relations)};
}

std::vector<Hyperedge> build_hyperedges(const std::string& chunk_id, const std::string& doc_id,
                                        const std::vector<std::string>& entity_names,
                                        const std::vector<Relation>& relations) {
    std::set<std::string> members;
    for (const auto& n : entity_names) {
        auto c = normalize_name(n);
        if (!c.empty()) members.insert(std::move(c));
    }
    if (members.size() < 2) return {};
    std::set<std::string> inside;
    for (const auto& r : relations) {
        const auto h = normalize_name(r.head), t = normalize_name(r.tail);
        if (members.count(h) && members.count(t)) inside.insert(h + "|" + collapse_ws(trim(r.predicate)) + "|" + t);
    }
    Hyperedge edge;
    edge.members = std::move(members);
    edge.source_chunk_id = chunk_id;
    edge.doc_id = doc_id;
    edge.weight = static_cast<double>(inside.size()) + 1.0;
    return {std::move(edge)};
}

// ---------------------------------------------------------------------------
// assets

std::string combine_caption(const std::string& caption, const std::string& description) {
    if (caption.empty()) return description;
    if (description.empty()) return caption;
    return caption + std::string(kDescriptionSeparator) + description;
}

AugmentedAssetText describe_asset(const ContentBlock& block, const AssetRepository& repo, Gateway& gateway,
                                  CostLedger* slice) {
    if (!block.is_asset()) throw InvalidArgument("block " + block.block_id + " has no asset");
    ImageInput image{repo.media_type(block.storage_path), repo.read_bytes(block.storage_path), block.storage_path};

    std::string prompt = "Describe this " + std::string(to_string(block.type)) +
                         " in detail: every visible value, label, axis, row, column and relationship.";
    if (!block.content.empty()) prompt += "\nCaption: " + block.content;

    AugmentedAssetText out;
    out.block_id = block.block_id;
    out.caption = block.content;
    try {
        const ModelCall call = gateway.complete(Role::perception_vlm, ChatRequest{"", prompt, {std::move(image)}},
                                                StageTag::image_description, slice);
        out.description = trim(call.response);
    } catch (const Error& e) {
        throw DescriptionUnavailable("block " + block.block_id + ": " + e.what());
    }
    out.description_available = !out.description.empty();
    out.combined = combine_caption(out.caption, out.description);
    return out;
}

}  // namespace docrag
