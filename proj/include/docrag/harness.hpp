#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "docrag/gateway.hpp"
#include "docrag/router.hpp"

namespace docrag {

class Workspace;

inline constexpr std::string_view kUnanswerable = "UNANSWERABLE";

struct BenchmarkItem {
    std::string item_id;
    std::string doc_id;
    std::string question;
    std::string gold_answer;
    std::map<std::string, std::string> tags;  // dimension -> value

    bool unanswerable() const { return gold_answer == kUnanswerable; }
};

void to_json(nlohmann::json& j, const BenchmarkItem& item);
void from_json(const nlohmann::json& j, BenchmarkItem& item);

// Allowed tag values per dimension.
using TagVocabulary = std::map<std::string, std::set<std::string>>;

const TagVocabulary& docbench_vocabulary();
const TagVocabulary& mmlongbench_vocabulary();
// Throws InvalidArgument on a dimension or value outside the vocabulary.
void check_tags(const BenchmarkItem& item, const TagVocabulary& vocabulary);

// Native records: DocBench {question, answer, type, evidence?} with the
// document's domain supplied by the caller; MMLongBench {doc_id, doc_type,
// question, answer, evidence_sources, evidence_pages, answer_format}.
BenchmarkItem from_docbench(const nlohmann::json& native, const std::string& doc_id, const std::string& domain,
                            std::size_t index);
BenchmarkItem from_mmlongbench(const nlohmann::json& native, std::size_t index);

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path);
void save_benchmark(const std::filesystem::path& path, const std::vector<BenchmarkItem>& items);

enum class JudgeKind { exact, normalized, model };
std::string_view to_string(JudgeKind k);
JudgeKind parse_judge(std::string_view s);

// Case folding, punctuation removal, whitespace collapsing.
std::string fold_answer(std::string_view s);
std::optional<double> parse_number(std::string_view s);

bool judge_exact(std::string_view answer, std::string_view gold);
// Numbers on both sides compare within 1e-6; otherwise folded strings match.
bool judge_normalized(std::string_view answer, std::string_view gold);
bool judge_model(Gateway& gateway, std::string_view question, std::string_view answer, std::string_view gold,
                 CostLedger* slice = nullptr);

struct ItemResult {
    BenchmarkItem item;
    std::string answer;
    std::string complexity;
    bool abstained = false;
    bool correct = false;
    bool missing_document = false;
    std::string error;
    nlohmann::json answer_record;
    CostLedger ledger;
};

struct TagScore {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
    std::vector<ItemResult> items;
    std::map<std::string, std::map<std::string, TagScore>> per_tag;
    TagScore overall;
    std::optional<double> abstention_precision;  // absent when nothing abstained
    std::optional<double> abstention_recall;     // absent when no item is unanswerable
    std::vector<std::string> missing_documents;

    nlohmann::json to_json() const;
    std::string table() const;
};

// Scores finished items. An abstention is correct iff the gold answer is
// UNANSWERABLE; a substantive answer to an UNANSWERABLE item is wrong.
EvalReport score_items(std::vector<ItemResult> results, JudgeKind judge, Gateway* gateway = nullptr);

// Answers every item (restricted to its document) with up to `workers`
// concurrent queries, then scores.
EvalReport run_eval(const Workspace& ws, const std::vector<BenchmarkItem>& items, JudgeKind judge,
                    std::size_t workers = 1);

// --- routing distribution ---

struct PageBucket {
    int lo = 0;                // exclusive
    std::optional<int> hi;     // inclusive; none = unbounded

    std::string label() const;
    bool contains(int pages) const { return pages > lo && (!hi || pages <= *hi); }
};

std::vector<PageBucket> default_page_buckets();
// "0-20,20-50,50-100,100-200,200+"
std::vector<PageBucket> parse_page_buckets(std::string_view spec);

struct BucketCounts {
    PageBucket bucket;
    std::map<RetrievalMode, std::size_t> counts;
    std::size_t total() const;
    std::optional<std::map<RetrievalMode, double>> proportions() const;  // absent when empty
};

struct RoutingDistribution {
    std::vector<BucketCounts> buckets;
    std::size_t decisions = 0;
    std::size_t skipped_lines = 0;

    nlohmann::json to_json() const;
    std::string table() const;
};

RoutingDistribution routing_distribution(const std::vector<nlohmann::json>& records, const std::vector<PageBucket>& buckets);
RoutingDistribution load_routing_distribution(const std::filesystem::path& log, const std::vector<PageBucket>& buckets);
std::string compare_distributions(const std::string& label_a, const RoutingDistribution& a, const std::string& label_b,
                                  const RoutingDistribution& b);

// --- cost tables ---

// Token table and money table with absolute and relative savings of
// `candidate` against `baseline`.
std::string cost_tables(const std::string& baseline_label, const CostLedger& baseline, const std::string& candidate_label,
                        const CostLedger& candidate, const PriceTable& prices);
nlohmann::json cost_report_json(const std::string& baseline_label, const CostLedger& baseline,
                                const std::string& candidate_label, const CostLedger& candidate, const PriceTable& prices);

}  // namespace docrag
