#include "docrag/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include <fmt/format.h>

#include "docrag/workspace.hpp"

namespace docrag {

using nlohmann::json;

void to_json(json& j, const BenchmarkItem& item) {
    j = json{{"item_id", item.item_id},
             {"doc_id", item.doc_id},
             {"question", item.question},
             {"gold_answer", item.gold_answer},
             {"tags", item.tags}};
}

void from_json(const json& j, BenchmarkItem& item) {
    item.item_id = j.at("item_id").get<std::string>();
    item.doc_id = j.at("doc_id").get<std::string>();
    item.question = j.at("question").get<std::string>();
    item.gold_answer = j.at("gold_answer").get<std::string>();
    item.tags = j.value("tags", std::map<std::string, std::string>{});
    if (item.item_id.empty() || item.doc_id.empty() || item.question.empty())
        throw InvalidArgument("benchmark item needs item_id, doc_id and question");
}

const TagVocabulary& docbench_vocabulary() {
    static const TagVocabulary v{
        {"domain", {"academia", "finance", "government", "laws", "news"}},
        {"type", {"text-only", "multimodal", "meta-data", "unanswerable"}},
    };
    return v;
}

const TagVocabulary& mmlongbench_vocabulary() {
    static const TagVocabulary v{
        {"domain", {"research report", "tutorial", "academic paper", "guidebook", "brochure", "administration",
                    "financial report"}},
        {"location", {"single-page", "cross-page", "unanswerable"}},
        {"format", {"str", "int", "float", "list", "none"}},
        {"source", {"text", "layout", "chart", "table", "image", "mixed", "none"}},
    };
    return v;
}

void check_tags(const BenchmarkItem& item, const TagVocabulary& vocabulary) {
    for (const auto& [dim, value] : item.tags) {
        auto it = vocabulary.find(dim);
        if (it == vocabulary.end()) throw InvalidArgument(item.item_id + ": unknown tag dimension '" + dim + "'");
        if (!it->second.count(value))
            throw InvalidArgument(item.item_id + ": tag " + dim + "='" + value + "' is not in the vocabulary");
    }
}

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string answer_text(const json& a) {
    if (a.is_string()) return a.get<std::string>();
    if (a.is_null()) return std::string(kUnanswerable);
    return a.dump();
}

}  // namespace

BenchmarkItem from_docbench(const json& native, const std::string& doc_id, const std::string& domain, std::size_t index) {
    BenchmarkItem item;
    item.item_id = doc_id + "-q" + std::to_string(index);
    item.doc_id = doc_id;
    item.question = native.at("question").get<std::string>();
    const std::string type = lower(native.value("type", "text-only"));
    item.gold_answer = type == "unanswerable" ? std::string(kUnanswerable) : answer_text(native.at("answer"));
    item.tags["domain"] = lower(domain);
    item.tags["type"] = type;
    check_tags(item, docbench_vocabulary());
    return item;
}

BenchmarkItem from_mmlongbench(const json& native, std::size_t index) {
    BenchmarkItem item;
    std::string doc = native.at("doc_id").get<std::string>();
    if (auto dot = doc.rfind('.'); dot != std::string::npos) doc.resize(dot);
    item.item_id = doc + "-q" + std::to_string(index);
    item.doc_id = doc;
    item.question = native.at("question").get<std::string>();
    const std::string format = lower(native.value("answer_format", "str"));
    const std::string raw_answer = answer_text(native.at("answer"));
    const bool unanswerable = format == "none" || lower(raw_answer) == "not answerable";
    item.gold_answer = unanswerable ? std::string(kUnanswerable) : raw_answer;
    if (native.contains("doc_type")) item.tags["domain"] = lower(native.at("doc_type").get<std::string>());
    item.tags["format"] = format;

    std::vector<int> pages;
    if (native.contains("evidence_pages")) {
        const json& ep = native.at("evidence_pages");
        // Upstream stores this list as a string such as "[3, 4]".
        const json parsed = ep.is_string() ? json::parse(ep.get<std::string>(), nullptr, false) : ep;
        if (parsed.is_array())
            for (const auto& p : parsed)
                if (p.is_number_integer()) pages.push_back(p.get<int>());
    }
    item.tags["location"] = unanswerable ? "unanswerable" : (pages.size() > 1 ? "cross-page" : "single-page");

    std::vector<std::string> sources;
    if (native.contains("evidence_sources")) {
        const json& es = native.at("evidence_sources");
        json parsed = es;
        if (es.is_string()) {
            // Upstream writes Python list literals such as "['Chart']".
            std::string text = es.get<std::string>();
            parsed = json::parse(text, nullptr, false);
            if (parsed.is_discarded()) {
                std::replace(text.begin(), text.end(), '\'', '"');
                parsed = json::parse(text, nullptr, false);
            }
        }
        if (parsed.is_array())
            for (const auto& s : parsed)
                if (s.is_string()) sources.push_back(lower(s.get<std::string>()));
    }
    if (sources.empty()) {
        item.tags["source"] = "none";
    } else if (sources.size() > 1) {
        item.tags["source"] = "mixed";
    } else {
        std::string s = sources.front();
        if (s == "pure-text (plain-text)" || s == "pure-text") s = "text";
        if (s == "generalized-text (layout)") s = "layout";
        if (s == "figure") s = "image";
        item.tags["source"] = s;
    }
    check_tags(item, mmlongbench_vocabulary());
    return item;
}

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read benchmark " + path.string());
    std::vector<BenchmarkItem> items;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            BenchmarkItem item = json::parse(line).get<BenchmarkItem>();
            if (!ids.insert(item.item_id).second) throw InvalidArgument("duplicate item_id " + item.item_id);
            items.push_back(std::move(item));
        } catch (const json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return items;
}

void save_benchmark(const std::filesystem::path& path, const std::vector<BenchmarkItem>& items) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& item : items) out << json(item).dump() << '\n';
}

std::string_view to_string(JudgeKind k) {
    switch (k) {
        case JudgeKind::exact: return "exact";
        case JudgeKind::normalized: return "normalized";
        case JudgeKind::model: return "model";
    }
    return "normalized";
}

JudgeKind parse_judge(std::string_view s) {
    if (s == "exact") return JudgeKind::exact;
    if (s == "normalized") return JudgeKind::normalized;
    if (s == "model") return JudgeKind::model;
    throw InvalidArgument("unknown judge '" + std::string(s) + "'");
}

std::string fold_answer(std::string_view s) {
    std::string out;
    bool space = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        // Keep a decimal point between digits; drop other punctuation.
        const bool decimal = c == '.' && i > 0 && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i - 1])) &&
                             std::isdigit(static_cast<unsigned char>(s[i + 1]));
        if (std::ispunct(c) && !decimal) {
            space = space || !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

std::optional<double> parse_number(std::string_view s) {
    std::string t;
    for (char c : trim(s))
        if (c != ',' && c != '$' && c != '%') t += c;
    if (t.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool judge_exact(std::string_view answer, std::string_view gold) { return trim(answer) == trim(gold); }

bool judge_normalized(std::string_view answer, std::string_view gold) {
    if (judge_exact(answer, gold)) return true;
    const auto a = parse_number(answer);
    const auto g = parse_number(gold);
    if (a && g) return std::fabs(*a - *g) <= 1e-6;
    return fold_answer(answer) == fold_answer(gold);
}

bool judge_model(Gateway& gateway, std::string_view question, std::string_view answer, std::string_view gold,
                 CostLedger* slice) {
    const std::string user = "Question: " + std::string(question) + "\nReference answer: " + std::string(gold) +
                             "\nCandidate answer: " + std::string(answer) +
                             "\nDoes the candidate answer agree with the reference? Reply YES or NO.";
    const ModelCall call = gateway.complete(Role::reasoning_llm, ChatRequest{"You grade answers.", user, {}},
                                            StageTag::summary, slice);
    return lower(trim(call.response)).rfind("yes", 0) == 0;
}

EvalReport score_items(std::vector<ItemResult> results, JudgeKind judge, Gateway* gateway) {
    if (judge == JudgeKind::model && gateway == nullptr) throw InvalidArgument("model judge needs a gateway");
    EvalReport report;
    std::size_t abstained = 0, abstained_right = 0, unanswerable = 0;
    for (auto& r : results) {
        if (r.missing_document) {
            r.correct = false;
            report.missing_documents.push_back(r.item.doc_id);
        } else if (!r.error.empty()) {
            r.correct = false;
        } else if (r.item.unanswerable() || r.abstained) {
            r.correct = r.item.unanswerable() && r.abstained;
        } else {
            switch (judge) {
                case JudgeKind::exact: r.correct = judge_exact(r.answer, r.item.gold_answer); break;
                case JudgeKind::normalized: r.correct = judge_normalized(r.answer, r.item.gold_answer); break;
                case JudgeKind::model:
                    r.correct = judge_model(*gateway, r.item.question, r.answer, r.item.gold_answer);
                    break;
            }
        }
        ++report.overall.total;
        if (r.correct) ++report.overall.correct;
        for (const auto& [dim, value] : r.item.tags) {
            TagScore& t = report.per_tag[dim][value];
            ++t.total;
            if (r.correct) ++t.correct;
        }
        if (r.item.unanswerable()) ++unanswerable;
        if (r.abstained) {
            ++abstained;
            if (r.item.unanswerable()) ++abstained_right;
        }
    }
    if (abstained) report.abstention_precision = static_cast<double>(abstained_right) / static_cast<double>(abstained);
    if (unanswerable) report.abstention_recall = static_cast<double>(abstained_right) / static_cast<double>(unanswerable);
    std::sort(report.missing_documents.begin(), report.missing_documents.end());
    report.missing_documents.erase(std::unique(report.missing_documents.begin(), report.missing_documents.end()),
                                   report.missing_documents.end());
    report.items = std::move(results);
    return report;
}

EvalReport run_eval(const Workspace& ws, const std::vector<BenchmarkItem>& items, JudgeKind judge, std::size_t workers) {
    std::vector<ItemResult> results(items.size());
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            ItemResult& r = results[i];
            r.item = items[i];
            if (!ws.corpus().has_document(r.item.doc_id)) {
                r.missing_document = true;
                continue;
            }
            try {
                AnswerOptions opts;
                opts.doc_filter = r.item.doc_id;
                const Answer a = ws.answer(r.item.question, opts);
                r.answer = a.text;
                r.abstained = a.abstained;
                r.complexity = std::string(to_string(a.complexity_used));
                r.answer_record = a.record();
                r.ledger = a.ledger_slice;
            } catch (const Error& e) {
                r.error = e.what();
            }
        }
    };
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, items.size()));
    std::vector<std::future<void>> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.push_back(std::async(std::launch::async, run));
    run();
    for (auto& f : pool) f.get();
    return score_items(std::move(results), judge, judge == JudgeKind::model ? &ws.gateway() : nullptr);
}

json EvalReport::to_json() const {
    json items_j = json::array();
    for (const auto& r : items) {
        json j{{"item_id", r.item.item_id}, {"doc_id", r.item.doc_id}, {"question", r.item.question},
               {"gold_answer", r.item.gold_answer}, {"answer", r.answer}, {"abstained", r.abstained},
               {"correct", r.correct}, {"complexity", r.complexity}, {"tags", r.item.tags}};
        if (r.missing_document) j["missing_document"] = true;
        if (!r.error.empty()) j["error"] = r.error;
        if (!r.answer_record.is_null()) j["tokens_by_stage"] = r.answer_record.at("tokens_by_stage");
        items_j.push_back(std::move(j));
    }
    json tags = json::object();
    for (const auto& [dim, values] : per_tag)
        for (const auto& [value, s] : values)
            tags[dim][value] = {{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}};
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"items", items_j},
            {"per_tag", tags},
            {"overall", {{"correct", overall.correct}, {"total", overall.total}, {"accuracy", overall.accuracy()}}},
            {"abstention_precision", opt(abstention_precision)},
            {"abstention_recall", opt(abstention_recall)},
            {"missing_documents", missing_documents}};
}

std::string EvalReport::table() const {
    std::string out = fmt::format("{:<14} {:<20} {:>8} {:>9}\n", "Dimension", "Value", "Items", "Accuracy");
    for (const auto& [dim, values] : per_tag)
        for (const auto& [value, s] : values)
            out += fmt::format("{:<14} {:<20} {:>8} {:>8.2f}%\n", dim, value, s.total, 100.0 * s.accuracy());
    out += fmt::format("{:<14} {:<20} {:>8} {:>8.2f}%\n", "overall", "", overall.total, 100.0 * overall.accuracy());
    auto pct = [](const std::optional<double>& v) { return v ? fmt::format("{:.2f}%", 100.0 * *v) : std::string("n/a"); };
    out += "Abstention precision " + pct(abstention_precision) + ", recall " + pct(abstention_recall) + "\n";
    if (!missing_documents.empty()) {
        out += "Missing documents:";
        for (const auto& d : missing_documents) out += " " + d;
        out += "\n";
    }
    return out;
}

// --- routing distribution ---

std::string PageBucket::label() const { return hi ? fmt::format("({}, {}]", lo, *hi) : fmt::format("> {}", lo); }

std::vector<PageBucket> default_page_buckets() { return {{0, 20}, {20, 50}, {50, 100}, {100, 200}, {200, std::nullopt}}; }

std::vector<PageBucket> parse_page_buckets(std::string_view spec) {
    std::vector<PageBucket> out;
    std::stringstream ss{std::string(spec)};
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        try {
            if (!part.empty() && part.back() == '+') {
                out.push_back({std::stoi(part.substr(0, part.size() - 1)), std::nullopt});
                continue;
            }
            const auto dash = part.find('-');
            if (dash == std::string::npos) throw InvalidArgument("bucket '" + part + "' is not lo-hi or lo+");
            PageBucket b{std::stoi(part.substr(0, dash)), std::stoi(part.substr(dash + 1))};
            if (*b.hi <= b.lo) throw InvalidArgument("bucket '" + part + "' is empty");
            out.push_back(b);
        } catch (const std::logic_error&) {
            throw InvalidArgument("bad page bucket '" + part + "'");
        }
    }
    if (out.empty()) throw InvalidArgument("no page buckets given");
    for (std::size_t i = 1; i < out.size(); ++i)
        if (!out[i - 1].hi || *out[i - 1].hi > out[i].lo) throw InvalidArgument("page buckets overlap");
    return out;
}

std::size_t BucketCounts::total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : counts) n += c;
    return n;
}

std::optional<std::map<RetrievalMode, double>> BucketCounts::proportions() const {
    const std::size_t n = total();
    if (n == 0) return std::nullopt;
    std::map<RetrievalMode, double> p;
    for (RetrievalMode m : {RetrievalMode::vector_local, RetrievalMode::graph, RetrievalMode::hypergraph}) {
        auto it = counts.find(m);
        p[m] = static_cast<double>(it == counts.end() ? 0 : it->second) / static_cast<double>(n);
    }
    return p;
}

RoutingDistribution routing_distribution(const std::vector<json>& records, const std::vector<PageBucket>& buckets) {
    RoutingDistribution d;
    for (const auto& b : buckets) d.buckets.push_back({b, {}});
    for (const auto& r : records) {
        try {
            const RetrievalMode mode = parse_mode(r.at("mode").get<std::string>());
            const int pages = r.at("doc_pages").get<int>();
            auto it = std::find_if(d.buckets.begin(), d.buckets.end(), [&](const BucketCounts& b) { return b.bucket.contains(pages); });
            if (it == d.buckets.end()) {
                ++d.skipped_lines;
                continue;
            }
            ++it->counts[mode];
            ++d.decisions;
        } catch (const std::exception&) {
            ++d.skipped_lines;
        }
    }
    return d;
}

RoutingDistribution load_routing_distribution(const std::filesystem::path& log, const std::vector<PageBucket>& buckets) {
    std::ifstream in(log);
    if (!in) throw ConfigError("cannot read decision log " + log.string());
    std::vector<json> records;
    std::size_t malformed = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            ++malformed;
            continue;
        }
        records.push_back(std::move(j));
    }
    RoutingDistribution d = routing_distribution(records, buckets);
    d.skipped_lines += malformed;
    if (d.decisions == 0) throw InvalidArgument("decision log " + log.string() + " has no usable decisions");
    return d;
}

json RoutingDistribution::to_json() const {
    json bs = json::array();
    for (const auto& b : buckets) {
        json counts_j = json::object();
        for (RetrievalMode m : {RetrievalMode::vector_local, RetrievalMode::graph, RetrievalMode::hypergraph}) {
            auto it = b.counts.find(m);
            counts_j[std::string(docrag::to_string(m))] = it == b.counts.end() ? 0 : it->second;
        }
        json j{{"bucket", b.bucket.label()}, {"lo", b.bucket.lo}, {"hi", b.bucket.hi ? json(*b.bucket.hi) : json(nullptr)},
               {"total", b.total()}, {"counts", counts_j}};
        if (auto p = b.proportions()) {
            json pj = json::object();
            for (const auto& [m, v] : *p) pj[std::string(docrag::to_string(m))] = v;
            j["proportions"] = pj;
        }
        bs.push_back(std::move(j));
    }
    return {{"buckets", bs}, {"decisions", decisions}, {"skipped_lines", skipped_lines}};
}

std::string RoutingDistribution::table() const {
    std::string out = fmt::format("{:<12} {:>6} {:>14} {:>8} {:>11}\n", "Pages", "Count", "vector_local", "graph", "hypergraph");
    for (const auto& b : buckets) {
        const auto p = b.proportions();
        if (!p) continue;
        out += fmt::format("{:<12} {:>6} {:>13.1f}% {:>7.1f}% {:>10.1f}%\n", b.bucket.label(), b.total(),
                           100.0 * p->at(RetrievalMode::vector_local), 100.0 * p->at(RetrievalMode::graph),
                           100.0 * p->at(RetrievalMode::hypergraph));
    }
    if (skipped_lines) out += fmt::format("{} log lines skipped\n", skipped_lines);
    return out;
}

std::string compare_distributions(const std::string& label_a, const RoutingDistribution& a, const std::string& label_b,
                                  const RoutingDistribution& b) {
    std::string out = fmt::format("{:<12} {:>18} {:>18}\n", "Pages", label_a + " hyper", label_b + " hyper");
    const std::size_t n = std::min(a.buckets.size(), b.buckets.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto pa = a.buckets[i].proportions();
        const auto pb = b.buckets[i].proportions();
        if (!pa && !pb) continue;
        auto cell = [](const auto& p) {
            return p ? fmt::format("{:.1f}%", 100.0 * p->at(RetrievalMode::hypergraph)) : std::string("-");
        };
        out += fmt::format("{:<12} {:>18} {:>18}\n", a.buckets[i].bucket.label(), cell(pa), cell(pb));
    }
    return out;
}

// --- cost tables ---

namespace {

std::string ktokens(std::uint64_t t) { return fmt::format("{:.1f}k", static_cast<double>(t) / 1000.0); }

std::string rel(const std::optional<double>& v) { return v ? fmt::format("{:.1f}%", 100.0 * *v) : std::string("-"); }

}  // namespace

std::string cost_tables(const std::string& baseline_label, const CostLedger& baseline, const std::string& candidate_label,
                        const CostLedger& candidate, const PriceTable& prices) {
    const CostReport base = ledger_report(baseline, prices);
    const CostReport cand = ledger_report(candidate, prices, &baseline);
    auto stage = [](const CostReport& r, StageTag t) {
        auto it = r.stages.find(t);
        return it == r.stages.end() ? StageTotals{} : it->second;
    };

    std::string out = "Token consumption\n";
    out += fmt::format("{:<18} {:>12} {:>12} {:>14} {:>14}\n", "Stage", baseline_label, candidate_label, "Savings (Abs.)",
                       "Savings (Rel.)");
    for (const auto& [tag, s] : cand.stage_savings)
        out += fmt::format("{:<18} {:>12} {:>12} {:>14} {:>14}\n", to_string(tag), ktokens(stage(base, tag).tokens()),
                           ktokens(stage(cand, tag).tokens()),
                           fmt::format("{:.1f}k", static_cast<double>(s.tokens_abs) / 1000.0), rel(s.tokens_rel));
    const Savings total = cand.total_savings.value_or(Savings{});
    out += fmt::format("{:<18} {:>12} {:>12} {:>14} {:>14}\n", "Total", ktokens(base.total.tokens()),
                       ktokens(cand.total.tokens()), fmt::format("{:.1f}k", static_cast<double>(total.tokens_abs) / 1000.0),
                       rel(total.tokens_rel));

    out += "\nMonetary cost\n";
    out += fmt::format("{:<18} {:>12} {:>12} {:>14} {:>14}\n", "Stage", baseline_label, candidate_label, "Savings (Abs.)",
                       "Savings (Rel.)");
    for (const auto& [tag, s] : cand.stage_savings)
        out += fmt::format("{:<18} {:>12.4f} {:>12.4f} {:>14.4f} {:>14}\n", to_string(tag), stage(base, tag).cost,
                           stage(cand, tag).cost, s.cost_abs, rel(s.cost_rel));
    out += fmt::format("{:<18} {:>12.4f} {:>12.4f} {:>14.4f} {:>14}\n", "Total", base.total.cost, cand.total.cost,
                       total.cost_abs, rel(total.cost_rel));
    return out;
}

json cost_report_json(const std::string& baseline_label, const CostLedger& baseline, const std::string& candidate_label,
                      const CostLedger& candidate, const PriceTable& prices) {
    return {{"baseline", {{"label", baseline_label}, {"report", ledger_report(baseline, prices).to_json()}}},
            {"candidate", {{"label", candidate_label}, {"report", ledger_report(candidate, prices, &baseline).to_json()}}}};
}

}  // namespace docrag
