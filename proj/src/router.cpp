#include "docrag/router.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

namespace docrag {

using nlohmann::json;

std::string_view to_string(Complexity c) {
    switch (c) {
        case Complexity::Simple: return "Simple";
        case Complexity::Moderate: return "Moderate";
        case Complexity::Complex: return "Complex";
    }
    return "Moderate";
}

std::string_view to_string(RetrievalMode m) {
    switch (m) {
        case RetrievalMode::vector_local: return "vector_local";
        case RetrievalMode::graph: return "graph";
        case RetrievalMode::hypergraph: return "hypergraph";
    }
    return "graph";
}

std::string_view to_string(InstructionKey k) {
    switch (k) {
        case InstructionKey::simple_extract: return "simple_extract";
        case InstructionKey::moderate_compute: return "moderate_compute";
        case InstructionKey::complex_integrate: return "complex_integrate";
    }
    return "moderate_compute";
}

std::string_view to_string(Intent i) {
    switch (i) {
        case Intent::factual_retrieval: return "factual_retrieval";
        case Intent::comparative_reasoning: return "comparative_reasoning";
        case Intent::causal_analysis: return "causal_analysis";
        case Intent::aggregation: return "aggregation";
        case Intent::unanswerable_probe: return "unanswerable_probe";
        case Intent::other: return "other";
    }
    return "other";
}

Complexity parse_complexity(std::string_view s) {
    for (auto c : {Complexity::Simple, Complexity::Moderate, Complexity::Complex})
        if (to_string(c) == s) return c;
    throw InvalidArgument("unknown complexity '" + std::string(s) + "'");
}

RetrievalMode parse_mode(std::string_view s) {
    for (auto m : {RetrievalMode::vector_local, RetrievalMode::graph, RetrievalMode::hypergraph})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown retrieval mode '" + std::string(s) + "'");
}

InstructionKey parse_instruction_key(std::string_view s) {
    for (auto k : {InstructionKey::simple_extract, InstructionKey::moderate_compute, InstructionKey::complex_integrate})
        if (to_string(k) == s) return k;
    throw InvalidArgument("unknown instruction key '" + std::string(s) + "'");
}

Intent parse_intent(std::string_view s) {
    for (auto i : {Intent::factual_retrieval, Intent::comparative_reasoning, Intent::causal_analysis,
                   Intent::aggregation, Intent::unanswerable_probe, Intent::other})
        if (to_string(i) == s) return i;
    throw InvalidArgument("unknown intent '" + std::string(s) + "'");
}

RouteTarget route_target(Complexity c) {
    switch (c) {
        case Complexity::Simple: return {RetrievalMode::vector_local, InstructionKey::simple_extract};
        case Complexity::Moderate: return {RetrievalMode::graph, InstructionKey::moderate_compute};
        case Complexity::Complex: return {RetrievalMode::hypergraph, InstructionKey::complex_integrate};
    }
    return {RetrievalMode::graph, InstructionKey::moderate_compute};
}

Complexity complexity_for_mode(RetrievalMode m) {
    switch (m) {
        case RetrievalMode::vector_local: return Complexity::Simple;
        case RetrievalMode::graph: return Complexity::Moderate;
        case RetrievalMode::hypergraph: return Complexity::Complex;
    }
    return Complexity::Moderate;
}

json to_json(const QueryFeatures& f) {
    return json{{"intent", to_string(f.intent)},
                {"entity_count", f.entity_count},
                {"visual_ref_count", f.visual_ref_count},
                {"constraint_count", f.constraint_count},
                {"needs_cross_chunk", f.needs_cross_chunk},
                {"needs_multi_step", f.needs_multi_step}};
}

Complexity classify(const QueryFeatures& f) {
    if (f.needs_multi_step && (f.entity_count >= 2 || f.visual_ref_count >= 2 || f.needs_cross_chunk))
        return Complexity::Complex;
    if (!f.needs_cross_chunk && !f.needs_multi_step && f.entity_count <= 1 && f.visual_ref_count <= 1)
        return Complexity::Simple;
    return Complexity::Moderate;
}

// ---------------------------------------------------------------------------
// heuristics

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

struct Word {
    std::string text;
    bool quoted = false;
};

// Words of the query; characters inside double quotes are marked.
std::vector<Word> words_of(std::string_view q) {
    std::vector<Word> out;
    std::string cur;
    bool in_quote = false;
    auto flush = [&] {
        if (!cur.empty()) out.push_back({cur, in_quote});
        cur.clear();
    };
    for (char ch : q) {
        const auto c = static_cast<unsigned char>(ch);
        if (ch == '"') {
            flush();
            in_quote = !in_quote;
        } else if (std::isalnum(c) || c >= 0x80 || ch == '-' || ch == '\'') {
            cur.push_back(ch);
        } else {
            flush();
        }
    }
    flush();
    return out;
}

const std::set<std::string>& function_words() {
    static const std::set<std::string> words{
        "what", "which", "who",  "whom",  "whose",   "how",     "why",   "when",     "where",   "is",   "are",
        "was",  "were",  "do",   "does",  "did",     "can",     "could", "should",   "would",   "will", "the",
        "a",    "an",    "in",   "on",    "of",      "for",     "to",    "and",      "or",      "if",   "compare",
        "explain", "describe", "list", "give", "name", "according", "based", "please", "summarize", "find", "tell",
        "i",    "it",    "this", "that",  "these",   "those",   "there", "between",  "from",    "by",   "with"};
    return words;
}

int count_quoted_spans(std::string_view q) {
    const auto n = std::count(q.begin(), q.end(), '"');
    return static_cast<int>(n / 2);
}

int count_capitalized_runs(const std::vector<Word>& words) {
    int runs = 0;
    bool in_run = false;
    for (const auto& w : words) {
        const bool cap = !w.quoted && std::isupper(static_cast<unsigned char>(w.text[0])) &&
                         !function_words().count(lower(w.text));
        if (cap && !in_run) ++runs;
        in_run = cap;
    }
    return runs;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

int count_visual_refs(const std::vector<Word>& words) {
    static const std::set<std::string> lexemes{"figure", "figures", "fig", "table", "tables", "chart", "charts",
                                               "image", "images", "graph", "graphs", "diagram", "diagrams",
                                               "plot", "plots", "picture", "pictures", "photo", "photos"};
    int n = 0;
    for (const auto& w : words) n += lexemes.count(lower(w.text)) ? 1 : 0;
    return n;
}

bool has_multi_step_marker(const std::vector<Word>& words) {
    for (const auto& w : words) {
        const std::string t = lower(w.text);
        if (starts_with(t, "compar") || t == "why" || starts_with(t, "trend") || starts_with(t, "differ")) return true;
    }
    return false;
}

int count_constraints(std::string_view query) {
    const std::string q = lower(query);
    int n = 0;
    static const std::regex word_markers(R"(\b(if|between|at least|at most|more than|less than|no more than)\b)");
    n += static_cast<int>(std::distance(std::sregex_iterator(q.begin(), q.end(), word_markers), std::sregex_iterator()));
    static const std::regex year_range(R"(\b(1[89]|20)\d\d\s*(-|–|to|through)\s*(1[89]|20)\d\d\b)");
    n += static_cast<int>(std::distance(std::sregex_iterator(q.begin(), q.end(), year_range), std::sregex_iterator()));
    return n;
}

Intent heuristic_intent(const std::vector<Word>& words) {
    bool comparative = false, causal = false, aggregate = false;
    for (std::size_t i = 0; i < words.size(); ++i) {
        const std::string t = lower(words[i].text);
        if (starts_with(t, "compar") || starts_with(t, "differ") || t == "versus" || t == "vs") comparative = true;
        if (t == "why" || starts_with(t, "caus") || t == "because" || t == "reason") causal = true;
        if (t == "total" || t == "sum" || t == "average" || t == "count" ||
            (t == "how" && i + 1 < words.size() && (lower(words[i + 1].text) == "many" || lower(words[i + 1].text) == "much")))
            aggregate = true;
    }
    if (comparative) return Intent::comparative_reasoning;
    if (causal) return Intent::causal_analysis;
    if (aggregate) return Intent::aggregation;
    return Intent::factual_retrieval;
}

}  // namespace

QueryFeatures heuristic_features(std::string_view query) {
    const auto words = words_of(query);
    QueryFeatures f;
    f.entity_count = count_capitalized_runs(words) + count_quoted_spans(query);
    f.visual_ref_count = count_visual_refs(words);
    f.needs_multi_step = has_multi_step_marker(words);
    f.needs_cross_chunk = f.entity_count >= 2;
    f.constraint_count = count_constraints(query);
    f.intent = heuristic_intent(words);
    return f;
}

// ---------------------------------------------------------------------------
// model report parsing

std::optional<QueryFeatures> parse_feature_report(std::string_view text) {
    const auto open = text.find('{');
    const auto close = text.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
    json j;
    try {
        j = json::parse(text.substr(open, close - open + 1));
    } catch (const json::parse_error&) {
        return std::nullopt;
    }
    if (!j.is_object()) return std::nullopt;
    auto count_of = [&](const char* key) -> std::optional<int> {
        auto it = j.find(key);
        if (it == j.end() || !it->is_number_integer()) return std::nullopt;
        const auto v = it->get<long long>();
        if (v < 0 || v > 1000) return std::nullopt;
        return static_cast<int>(v);
    };
    auto flag_of = [&](const char* key) -> std::optional<bool> {
        auto it = j.find(key);
        if (it == j.end() || !it->is_boolean()) return std::nullopt;
        return it->get<bool>();
    };
    auto intent_it = j.find("intent");
    if (intent_it == j.end() || !intent_it->is_string()) return std::nullopt;
    QueryFeatures f;
    try {
        f.intent = parse_intent(intent_it->get<std::string>());
    } catch (const InvalidArgument&) {
        return std::nullopt;
    }
    const auto e = count_of("entity_count"), v = count_of("visual_ref_count"), c = count_of("constraint_count");
    const auto x = flag_of("needs_cross_chunk"), m = flag_of("needs_multi_step");
    if (!e || !v || !c || !x || !m) return std::nullopt;
    f.entity_count = *e;
    f.visual_ref_count = *v;
    f.constraint_count = *c;
    f.needs_cross_chunk = *x;
    f.needs_multi_step = *m;
    return f;
}

std::vector<std::string> validate_sub_queries(const std::vector<std::string>& candidates) {
    static const std::regex marker(R"(^\s*(?:[-*•]+|\(?\d+[.):]|[Qq]\d+[.):]?|[Ss]ub-?(?:query|question)\s*\d*[.):]?)\s*)");
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& raw : candidates) {
        std::string s = std::regex_replace(raw, marker, "", std::regex_constants::format_first_only);
        const auto b = s.find_first_not_of(" \t\r\n\"");
        const auto e = s.find_last_not_of(" \t\r\n\"");
        if (b == std::string::npos) continue;
        s = s.substr(b, e - b + 1);
        std::string key;
        bool space = false;
        for (char ch : lower(s)) {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                space = !key.empty();
                continue;
            }
            if (space) key.push_back(' ');
            space = false;
            key.push_back(ch);
        }
        if (!seen.insert(key).second) continue;
        out.push_back(std::move(s));
        if (out.size() == kMaxSubQueries) break;
    }
    if (out.size() < 2) out.clear();
    return out;
}

std::vector<std::string> parse_sub_queries(std::string_view text) {
    std::vector<std::string> raw;
    const auto open = text.find('[');
    const auto close = text.rfind(']');
    if (open != std::string_view::npos && close != std::string_view::npos && close > open) {
        try {
            const json j = json::parse(text.substr(open, close - open + 1));
            if (j.is_array()) {
                for (const auto& item : j)
                    if (item.is_string()) raw.push_back(item.get<std::string>());
                return raw;
            }
        } catch (const json::parse_error&) {
        }
    }
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        raw.emplace_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return raw;
}

std::string feature_prompt(std::string_view query) {
    std::string p =
        "Analyse the question below. Reply with one JSON object and nothing else, with keys:\n"
        "\"intent\": one of factual_retrieval, comparative_reasoning, causal_analysis, aggregation, "
        "unanswerable_probe, other;\n"
        "\"entity_count\": number of distinct entities mentioned;\n"
        "\"visual_ref_count\": number of references to figures, tables, charts or images;\n"
        "\"constraint_count\": number of conditions or ranges restricting the answer;\n"
        "\"needs_cross_chunk\": true if evidence must be gathered from several places;\n"
        "\"needs_multi_step\": true if answering needs computation, comparison or several reasoning steps.\n\n"
        "Question: ";
    p += query;
    return p;
}

std::string decomposition_prompt(std::string_view query) {
    std::string p =
        "Split the question below into 2 to 4 self-contained sub-questions that can each be answered on "
        "their own. Write one sub-question per line and nothing else.\n\nQuestion: ";
    p += query;
    return p;
}

// ---------------------------------------------------------------------------

QueryFeatures ComplexityRouter::extract_features(const std::string& query, bool& fallback, CostLedger* slice) const {
    if (query.find_first_not_of(" \t\r\n") == std::string::npos) throw InvalidArgument("query is empty");
    fallback = false;
    try {
        const ModelCall call = gateway_.complete(
            Role::router_slm, ChatRequest{"You classify questions about documents.", feature_prompt(query), {}},
            StageTag::routing, slice);
        if (auto f = parse_feature_report(call.response)) return *f;
    } catch (const Error&) {
        // the router must never fail the query; fall through to heuristics
    }
    fallback = true;
    return heuristic_features(query);
}

std::vector<std::string> ComplexityRouter::decompose(const std::string& query, const QueryFeatures& features,
                                                     CostLedger* slice) const {
    if (classify(features) != Complexity::Complex) throw InvalidArgument("decompose() requires a Complex query");
    try {
        const ModelCall call = gateway_.complete(
            Role::router_slm, ChatRequest{"You break complex questions into simpler ones.", decomposition_prompt(query), {}},
            StageTag::routing, slice);
        return validate_sub_queries(parse_sub_queries(call.response));
    } catch (const Error&) {
        return {};
    }
}

RoutingDecision ComplexityRouter::route(const std::string& query, CostLedger* slice) const {
    RoutingDecision d;
    d.features = extract_features(query, d.fallback, slice);
    if (d.fallback) {
        // Unreliable features: take the middle path and skip decomposition.
        d.complexity = Complexity::Moderate;
        d.rationale = "router output unusable; heuristic features, moderate path";
    } else {
        d.complexity = classify(d.features);
        d.rationale = "classified from router features";
        if (d.complexity == Complexity::Complex) d.sub_queries = decompose(query, d.features, slice);
    }
    const RouteTarget t = route_target(d.complexity);
    d.mode = t.mode;
    d.instruction = t.instruction;
    return d;
}

json to_json(const RoutingDecision& d) {
    return json{{"complexity", to_string(d.complexity)},
                {"mode", to_string(d.mode)},
                {"instruction", to_string(d.instruction)},
                {"sub_queries", d.sub_queries},
                {"rationale", d.rationale},
                {"features", to_json(d.features)},
                {"fallback", d.fallback}};
}

std::string query_hash(std::string_view query) {
    return request_fingerprint(Role::router_slm, json(std::string(query))).substr(0, 16);
}

json decision_log_record(const RoutingDecision& d, std::string_view query, int doc_pages) {
    return json{{"query_hash", query_hash(query)},
                {"label", to_string(d.complexity)},
                {"mode", to_string(d.mode)},
                {"sub_query_count", d.sub_queries.size()},
                {"fallback", d.fallback},
                {"doc_pages", doc_pages}};
}

}  // namespace docrag
