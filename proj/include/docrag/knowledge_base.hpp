#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "docrag/gateway.hpp"
#include "docrag/ingest.hpp"

namespace docrag {

// Where a graph record came from: a chunk id or an asset block id within a document.
struct Provenance {
    std::string doc_id;
    std::string source_id;
    auto operator<=>(const Provenance&) const = default;
};

// Case-folded, whitespace-collapsed, outer punctuation stripped. Two surface
// forms denote the same entity iff their normalizations are byte-equal.
std::string normalize_name(std::string_view surface);

struct EntityMention {
    std::string entity_type;
    std::string description;
    Provenance provenance;
    auto operator<=>(const EntityMention&) const = default;
};

struct Entity {
    std::string canonical_name;
    std::string entity_type;  // from the earliest mention that names one
    std::string description;  // distinct mention descriptions, in arrival order
    std::set<Provenance> provenance;
    std::vector<EntityMention> mentions;

    void refresh();
};

struct RelationMention {
    std::string description;
    Provenance provenance;
    auto operator<=>(const RelationMention&) const = default;
};

struct Relation {
    std::string head;
    std::string tail;
    std::string predicate;
    std::string description;
    std::set<Provenance> provenance;
    std::vector<RelationMention> mentions;

    std::string key() const { return head + "|" + predicate + "|" + tail; }
    void refresh();
};

struct Hyperedge {
    std::set<std::string> members;
    std::string source_chunk_id;
    std::string doc_id;
    double weight = 1.0;

    std::string key() const;
};

class KnowledgeGraph {
public:
    // Hard-match merge: names are normalized, equal names collapse into one
    // node, provenance is unioned and mention lists deduplicated.
    void merge_entities(const std::vector<Entity>& batch);
    // Endpoints are normalized; both must already exist.
    void merge_relations(const std::vector<Relation>& batch);
    void add_hyperedge(Hyperedge edge);

    // Drops every mention and hyperedge that came from `doc_id`; records left
    // without provenance disappear.
    void remove_document(const std::string& doc_id);

    const std::map<std::string, Entity>& entities() const { return entities_; }
    const std::map<std::string, Relation>& relations() const { return relations_; }
    const std::map<std::string, Hyperedge>& hyperedges() const { return hyperedges_; }

    const Entity* find_entity(std::string_view name) const;
    std::vector<const Relation*> relations_of(const std::string& canonical_name) const;
    std::vector<const Hyperedge*> hyperedges_of(const std::string& canonical_name) const;

    // Every relation endpoint and hyperedge member names an existing entity.
    bool referentially_closed() const;

    void save(const std::filesystem::path& dir) const;
    static KnowledgeGraph load(const std::filesystem::path& dir);

    friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b);

private:
    void rebuild_adjacency();

    std::map<std::string, Entity> entities_;
    std::map<std::string, Relation> relations_;
    std::map<std::string, Hyperedge> hyperedges_;
    std::map<std::string, std::set<std::string>> entity_relations_;   // name -> relation keys
    std::map<std::string, std::set<std::string>> entity_hyperedges_;  // name -> hyperedge keys
};

bool operator==(const Entity& a, const Entity& b);
bool operator==(const Relation& a, const Relation& b);
bool operator==(const Hyperedge& a, const Hyperedge& b);

// --- extraction ---

struct ExtractedEntity {
    std::string name;
    std::string type;
    std::string description;
};

struct ExtractedRelation {
    std::string head;
    std::string tail;
    std::string predicate;
    std::string description;
};

struct Extraction {
    std::vector<ExtractedEntity> entities;
    std::vector<ExtractedRelation> relations;
    std::size_t malformed = 0;     // records dropped by the parser
    std::size_t extra_rounds = 0;  // re-extraction calls made by the judge loop
    std::size_t dropped_invalid = 0;

    bool empty() const { return entities.empty() && relations.empty(); }
};

inline constexpr std::string_view kRecordDelimiter = "<|>";

// Parses "entity<|>name<|>type<|>description" and
// "relation<|>head<|>tail<|>predicate<|>description" records, one per line
// (or separated by "##"). Anything else counts as malformed.
Extraction parse_extraction(std::string_view model_output);

std::string extraction_prompt(std::string_view text);
std::string reextraction_prompt(std::string_view text, const std::vector<std::string>& violations);

struct JudgeVerdict {
    Extraction valid;
    std::vector<std::string> violations;
};

// Structural validation: names non-empty and present in the source text (or,
// for entities, in their own description); predicates non-empty; relation
// endpoints listed or present in the text.
JudgeVerdict judge_extraction(const Extraction& extraction, std::string_view text);

// Adds entities for relation endpoints the extractor did not list.
void close_over_relations(Extraction& extraction);

class TripletExtractor {
public:
    explicit TripletExtractor(Gateway& gateway, std::size_t max_rounds = 2) : gateway_(gateway), max_rounds_(max_rounds) {}

    // One extraction call plus up to max_rounds judge-driven retries.
    // Throws ExtractionEmpty when nothing valid survives.
    Extraction extract(std::string_view text, CostLedger* slice = nullptr) const;
    Extraction judge_and_retry(Extraction initial, std::string_view text, CostLedger* slice = nullptr) const;

private:
    Gateway& gateway_;
    std::size_t max_rounds_;
};

// Converts an extraction into graph records carrying `provenance`.
std::pair<std::vector<Entity>, std::vector<Relation>> to_graph_records(const Extraction& extraction,
                                                                       const Provenance& provenance);

// One hyperedge over all entities of a chunk when there are at least two;
// weight = relations among the members + 1.
std::vector<Hyperedge> build_hyperedges(const std::string& chunk_id, const std::string& doc_id,
                                        const std::vector<std::string>& entity_names,
                                        const std::vector<Relation>& relations);

// --- multimodal augmentation ---

inline constexpr std::string_view kDescriptionSeparator = "\nDescription: ";

struct AugmentedAssetText {
    std::string block_id;
    std::string caption;
    std::string description;
    std::string combined;
    bool description_available = false;
};

std::string combine_caption(const std::string& caption, const std::string& description);

// Sends the asset bytes to the perception role. Throws AssetMissing when the
// file cannot be read and DescriptionUnavailable when the model call fails.
AugmentedAssetText describe_asset(const ContentBlock& block, const AssetRepository& repo, Gateway& gateway,
                                  CostLedger* slice = nullptr);

}  // namespace docrag
