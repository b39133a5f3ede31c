#include <doctest.h>

#include "docrag/router.hpp"
#include "helpers.hpp"

using namespace docrag;
using namespace docrag::testkit;
using nlohmann::json;

namespace {

std::string report(const char* intent, int e, int v, int c, bool x, bool m) {
    return json{{"intent", intent},
                {"entity_count", e},
                {"visual_ref_count", v},
                {"constraint_count", c},
                {"needs_cross_chunk", x},
                {"needs_multi_step", m}}
        .dump();
}

struct Labeled {
    const char* query;
    QueryFeatures expect;
};

}  // namespace

TEST_CASE("classification rule examples") {
    CHECK(classify(QueryFeatures{}) == Complexity::Simple);
    CHECK(classify(QueryFeatures{Intent::other, 3, 0, 0, false, true}) == Complexity::Complex);
    CHECK(classify(QueryFeatures{Intent::other, 1, 0, 0, true, false}) == Complexity::Moderate);
    CHECK(classify(QueryFeatures{Intent::other, 1, 0, 0, false, true}) == Complexity::Moderate);
    CHECK(classify(QueryFeatures{Intent::other, 0, 2, 0, false, false}) == Complexity::Moderate);
    CHECK(classify(QueryFeatures{Intent::other, 0, 2, 0, false, true}) == Complexity::Complex);
    CHECK(classify(QueryFeatures{Intent::other, 1, 1, 3, false, false}) == Complexity::Simple);
}

TEST_CASE("label mapping is total and invertible") {
    CHECK(route_target(Complexity::Simple).mode == RetrievalMode::vector_local);
    CHECK(route_target(Complexity::Simple).instruction == InstructionKey::simple_extract);
    CHECK(route_target(Complexity::Moderate).mode == RetrievalMode::graph);
    CHECK(route_target(Complexity::Moderate).instruction == InstructionKey::moderate_compute);
    CHECK(route_target(Complexity::Complex).mode == RetrievalMode::hypergraph);
    CHECK(route_target(Complexity::Complex).instruction == InstructionKey::complex_integrate);
    for (Complexity c : {Complexity::Simple, Complexity::Moderate, Complexity::Complex}) {
        CHECK(complexity_for_mode(route_target(c).mode) == c);
        CHECK(parse_complexity(to_string(c)) == c);
    }
    CHECK_THROWS_AS(parse_mode("deep"), ConfigError);
}

TEST_CASE("fallback heuristics on a hand-labelled query set") {
    using I = Intent;
    const std::vector<Labeled> set{
        {"What is the revenue of Acme Corp?", {I::factual_retrieval, 1, 0, 0, false, false}},
        {"Compare the margins of Acme and Beta Labs.", {I::comparative_reasoning, 2, 0, 0, true, true}},
        {"Why did revenue fall in Table 3?", {I::causal_analysis, 1, 1, 0, false, true}},
        {"How many employees does Gamma have?", {I::aggregation, 1, 0, 0, false, false}},
        {"Show the chart of sales between 2019 and 2021.", {I::factual_retrieval, 1, 1, 1, false, false}},
        {"what is the trend in revenue from 2018 to 2022?", {I::factual_retrieval, 0, 0, 1, false, true}},
        {"Describe the \"Northwind\" project.", {I::factual_retrieval, 1, 0, 0, false, false}},
        {"Is the difference between Figure 2 and Figure 5 significant?", {I::comparative_reasoning, 2, 2, 1, true, true}},
        {"List all figures in the appendix.", {I::factual_retrieval, 0, 1, 0, false, false}},
        {"What is the average margin if revenue exceeds at least 5 million?", {I::aggregation, 0, 0, 2, false, false}},
        {"Who founded Delta Air Lines and Echo Foods?", {I::factual_retrieval, 2, 0, 0, true, false}},
        {"Explain why the photos differ.", {I::comparative_reasoning, 0, 1, 0, false, true}},
        {"What is the total of all graphs?", {I::aggregation, 0, 1, 0, false, false}},
        {"Summarize the report.", {I::factual_retrieval, 0, 0, 0, false, false}},
        {"What caused the drop in Q3 sales?", {I::causal_analysis, 1, 0, 0, false, false}},
        {"How much did Foxtrot spend versus Golf?", {I::comparative_reasoning, 2, 0, 0, true, false}},
        {"Which diagram shows the India and Japan offices?", {I::factual_retrieval, 2, 1, 0, true, false}},
        {"Compare trends in sales more than 10 percent.", {I::comparative_reasoning, 0, 0, 1, false, true}},
        {"What is the reason for the image on page 4?", {I::causal_analysis, 0, 1, 0, false, false}},
        {"Give the count of rows in Table 7 and Table 8.", {I::aggregation, 2, 2, 0, true, false}},
    };
    REQUIRE(set.size() == 20);
    for (const auto& item : set) {
        CAPTURE(item.query);
        const QueryFeatures f = heuristic_features(item.query);
        CHECK(f.intent == item.expect.intent);
        CHECK(f.entity_count == item.expect.entity_count);
        CHECK(f.visual_ref_count == item.expect.visual_ref_count);
        CHECK(f.constraint_count == item.expect.constraint_count);
        CHECK(f.needs_cross_chunk == item.expect.needs_cross_chunk);
        CHECK(f.needs_multi_step == item.expect.needs_multi_step);
    }

    // The same set through a router whose model output is garbage.
    auto t = std::make_shared<SequenceTransport>();
    for (std::size_t i = 0; i < set.size(); ++i) t->queue(Role::router_slm, "I think this is a hard one.");
    Gateway g(default_endpoints(), t, nullptr, fast_options());
    ComplexityRouter router(g);
    for (const auto& item : set) {
        bool fallback = false;
        CHECK(router.extract_features(item.query, fallback) == item.expect);
        CHECK(fallback);
    }
}

TEST_CASE("feature reports from the model") {
    auto t = std::make_shared<SequenceTransport>();
    t->queue(Role::router_slm, "Here you go:\n```json\n" + report("factual_retrieval", 1, 0, 0, false, false) + "\n```");
    t->queue(Role::router_slm, report("comparative_reasoning", 3, 2, 1, true, true));
    Gateway g(default_endpoints(), t, nullptr, fast_options());
    ComplexityRouter router(g);
    bool fallback = true;
    const QueryFeatures a = router.extract_features("What is the report's title?", fallback);
    CHECK_FALSE(fallback);
    CHECK(a.intent == Intent::factual_retrieval);
    CHECK(a.entity_count == 1);
    CHECK_FALSE(a.needs_cross_chunk);
    const QueryFeatures b =
        router.extract_features("Compare 2022 and 2023 revenue across the two tables and explain the trend", fallback);
    CHECK(b.intent == Intent::comparative_reasoning);
    CHECK(b.entity_count >= 2);
    CHECK(b.needs_multi_step);
    CHECK_THROWS_AS(router.extract_features("  ", fallback), InvalidArgument);
}

TEST_CASE("feature report parsing rejects partial or mistyped objects") {
    CHECK(parse_feature_report(report("other", 0, 0, 0, false, false)).has_value());
    CHECK_FALSE(parse_feature_report("no json here").has_value());
    CHECK_FALSE(parse_feature_report(R"({"intent":"other","entity_count":1})").has_value());
    CHECK_FALSE(parse_feature_report(report("telepathy", 0, 0, 0, false, false)).has_value());
    json j = json::parse(report("other", 0, 0, 0, false, false));
    j["needs_multi_step"] = "yes";
    CHECK_FALSE(parse_feature_report(j.dump()).has_value());
    j = json::parse(report("other", 0, 0, 0, false, false));
    j["entity_count"] = -1;
    CHECK_FALSE(parse_feature_report(j.dump()).has_value());
}

TEST_CASE("sub-query validation") {
    CHECK(validate_sub_queries({"- What is A?", "2) What is B?", "What is A?"}) == std::vector<std::string>{"What is A?", "What is B?"});
    CHECK(validate_sub_queries({"What is A?", "what is  a?", ""}).empty());
    CHECK(validate_sub_queries({"a", "b", "c", "d", "e"}).size() == kMaxSubQueries);
    CHECK(parse_sub_queries(R"(["One?", "Two?"])") == std::vector<std::string>{"One?", "Two?"});
    CHECK(validate_sub_queries(parse_sub_queries("1. One?\n2. Two?\n\n3. Three?")).size() == 3);
}

TEST_CASE("decomposition") {
    const QueryFeatures complex{Intent::comparative_reasoning, 3, 0, 0, true, true};
    SUBCASE("three sub-queries kept as emitted") {
        auto t = std::make_shared<SequenceTransport>();
        t->queue(Role::router_slm, "1. What is A's revenue?\n2. What is B's revenue?\n3. What is C's revenue?");
        Gateway g(default_endpoints(), t, nullptr, fast_options());
        CHECK(ComplexityRouter(g).decompose("Compare A, B and C.", complex) ==
              std::vector<std::string>{"What is A's revenue?", "What is B's revenue?", "What is C's revenue?"});
    }
    SUBCASE("duplicates collapse and fewer than two means no decomposition") {
        auto t = std::make_shared<SequenceTransport>();
        t->queue(Role::router_slm, "- What is A?\n- what is a?\n- WHAT IS A?");
        Gateway g(default_endpoints(), t, nullptr, fast_options());
        CHECK(ComplexityRouter(g).decompose("Compare A and B.", complex).empty());
    }
    SUBCASE("simple features are rejected") {
        Gateway g(default_endpoints(), std::make_shared<SequenceTransport>(), nullptr, fast_options());
        CHECK_THROWS_AS(ComplexityRouter(g).decompose("What is A?", QueryFeatures{}), InvalidArgument);
    }
}

TEST_CASE("route composes features, label, decomposition and mapping") {
    SUBCASE("simple") {
        auto t = std::make_shared<SequenceTransport>();
        t->queue(Role::router_slm, report("factual_retrieval", 1, 0, 0, false, false));
        Gateway g(default_endpoints(), t, nullptr, fast_options());
        CostLedger slice;
        const RoutingDecision d = ComplexityRouter(g).route("What is the revenue of Acme?", &slice);
        CHECK(d.complexity == Complexity::Simple);
        CHECK(d.mode == RetrievalMode::vector_local);
        CHECK(d.instruction == InstructionKey::simple_extract);
        CHECK(d.sub_queries.empty());
        CHECK_FALSE(d.fallback);
        CHECK(slice.count_for(StageTag::routing) == 1);
        CHECK(slice.size() == 1);
    }
    SUBCASE("complex") {
        auto t = std::make_shared<SequenceTransport>();
        t->queue(Role::router_slm, report("comparative_reasoning", 3, 0, 0, true, true));
        t->queue(Role::router_slm, R"(["What is A's margin?", "What is B's margin?", "What is C's margin?"])");
        Gateway g(default_endpoints(), t, nullptr, fast_options());
        CostLedger slice;
        const RoutingDecision d = ComplexityRouter(g).route("Compare the margins of A, B and C and explain why.", &slice);
        CHECK(d.complexity == Complexity::Complex);
        CHECK(d.mode == RetrievalMode::hypergraph);
        CHECK(d.instruction == InstructionKey::complex_integrate);
        CHECK(d.sub_queries.size() == 3);
        CHECK(slice.count_for(StageTag::routing) == 2);
    }
    SUBCASE("empty classifier output takes the moderate path") {
        auto t = std::make_shared<SequenceTransport>();
        t->queue(Role::router_slm, "");
        Gateway g(default_endpoints(), t, nullptr, fast_options());
        const RoutingDecision d = ComplexityRouter(g).route("Compare Acme and Beta and explain why they differ.");
        CHECK(d.fallback);
        CHECK(d.complexity == Complexity::Moderate);
        CHECK(d.mode == RetrievalMode::graph);
        CHECK(d.sub_queries.empty());
        CHECK(d.features == heuristic_features("Compare Acme and Beta and explain why they differ."));
    }
    SUBCASE("router endpoint down") {
        auto t = scripted();
        t->set_fault([](Role, const std::string&, std::size_t) -> std::optional<int> { return 503; });
        Gateway g(default_endpoints(), t, nullptr, fast_options());
        CostLedger slice;
        const RoutingDecision d = ComplexityRouter(g).route("What is X?", &slice);
        CHECK(d.fallback);
        CHECK(d.complexity == Complexity::Moderate);
        CHECK(slice.size() == 0);
    }
}

TEST_CASE("decision log records") {
    RoutingDecision d;
    d.complexity = Complexity::Complex;
    d.mode = RetrievalMode::hypergraph;
    d.sub_queries = {"a", "b"};
    const json rec = decision_log_record(d, "Compare A and B", 42);
    CHECK(rec["label"] == "Complex");
    CHECK(rec["mode"] == "hypergraph");
    CHECK(rec["sub_query_count"] == 2);
    CHECK(rec["fallback"] == false);
    CHECK(rec["doc_pages"] == 42);
    CHECK(rec["query_hash"] == query_hash("Compare A and B"));
    CHECK(query_hash("Compare A and B") != query_hash("Compare A and C"));
}
