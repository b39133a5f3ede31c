#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include "docrag/vector_index.hpp"
#include "helpers.hpp"

using namespace docrag;
using namespace docrag::testkit;

namespace {

EmbeddingRecord rec(const std::string& id, std::vector<double> v, RecordKind kind = RecordKind::entity, const std::string& doc = "",
                    const std::string& payload = "") {
    EmbeddingRecord r;
    r.record_id = id;
    r.kind = kind;
    r.vector = std::move(v);
    r.attrs.doc_id = doc;
    r.payload_text = payload.empty() ? id : payload;
    if (kind == RecordKind::chunk) r.attrs.span = Span{0, 1};
    if (kind == RecordKind::asset_text) {
        r.attrs.storage_path = "images/" + id + ".png";
        r.attrs.bbox = BoundingBox{0, 0, 1, 1};
        r.attrs.page = 1;
    }
    return r;
}

std::vector<std::string> ids_of(const TopKResult& r) {
    std::vector<std::string> out;
    for (const auto& h : r.hits) out.push_back(h.record_id);
    return out;
}

}  // namespace

TEST_CASE("cosine top-k on a three-vector corpus") {
    VectorIndex index(2);
    index.index({rec("e1", {1, 0}), rec("e2", {0, 1}), rec("e3", {0.6, 0.8})});
    const std::vector<double> q{1, 0};
    const TopKResult r = index.search(q, 2);
    REQUIRE(r.hits.size() == 2);
    CHECK(r.hits[0].record_id == "e1");
    CHECK(r.hits[0].score == doctest::Approx(1.0));
    CHECK(r.hits[1].record_id == "e3");
    CHECK(r.hits[1].score == doctest::Approx(0.6));
    CHECK(r.k_requested == 2);
    CHECK(r.k_returned == 2);
    CHECK(index.search(q, 100).hits.size() == 3);
}

TEST_CASE("self-similarity, clamping and the empty index") {
    VectorIndex empty(3);
    const std::vector<double> q{1, 2, 3};
    CHECK(empty.search(q, 5).hits.empty());

    VectorIndex index(3);
    std::vector<EmbeddingRecord> batch;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (int i = 0; i < 5; ++i) batch.push_back(rec("r" + std::to_string(i), {g(rng), g(rng), g(rng)}));
    const auto probe = batch[3].vector;
    index.index(batch);
    const TopKResult r = index.search(probe, 100);
    CHECK(r.hits.size() == 5);
    CHECK(r.hits[0].record_id == "r3");
    CHECK(r.hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(index.search(q, 0), InvalidArgument);
    const std::vector<double> wrong{1, 2};
    CHECK_THROWS_AS(index.search(wrong, 1), DimensionError);
}

TEST_CASE("re-indexing replaces and mismatched batches are rejected whole") {
    VectorIndex index(2);
    index.index({rec("a", {1, 0}), rec("b", {0, 1})});
    index.index({rec("a", {0, 1})});
    CHECK(index.size() == 2);
    const auto a = index.get("a");
    REQUIRE(a.has_value());
    CHECK(a->vector[0] == doctest::Approx(0.0));
    CHECK(a->vector[1] == doctest::Approx(1.0));

    try {
        index.index({rec("c", {1, 1}), rec("d", {1, 1, 1})});
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(e.record_id() == "d");
    }
    CHECK(index.size() == 2);
    CHECK_FALSE(index.get("c").has_value());
}

TEST_CASE("indexing normalizes and search is scale invariant in the query") {
    VectorIndex index(3);
    index.index({rec("x", {3, 0, 4}), rec("y", {1, 1, 1}), rec("z", {-1, 2, 0})});
    const auto x = index.get("x");
    CHECK(x->vector[0] == doctest::Approx(0.6));
    CHECK(x->vector[2] == doctest::Approx(0.8));
    const std::vector<double> q{0.2, 0.5, -0.1}, q5{1.0, 2.5, -0.5};
    const TopKResult a = index.search(q, 3), b = index.search(q5, 3);
    CHECK(ids_of(a) == ids_of(b));
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.hits[i].score == doctest::Approx(b.hits[i].score).epsilon(1e-12));
    CHECK_THROWS_AS(index.index({rec("zero", {0, 0, 0})}), InvalidArgument);
}

TEST_CASE("ties break by record id") {
    VectorIndex index(2);
    index.index({rec("c", {1, 0}), rec("a", {1, 0}), rec("b", {2, 0})});
    const std::vector<double> q{1, 0};
    CHECK(ids_of(index.search(q, 3)) == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("filters are sound") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    VectorIndex index(4);
    std::vector<EmbeddingRecord> batch;
    const RecordKind kinds[] = {RecordKind::entity, RecordKind::relation, RecordKind::chunk, RecordKind::asset_text};
    for (int i = 0; i < 200; ++i)
        batch.push_back(rec("r" + std::to_string(i), {g(rng), g(rng), g(rng), g(rng)}, kinds[i % 4], "d" + std::to_string(i % 3)));
    index.index(batch);
    const std::vector<double> q{1, 0, 0, 0};
    SearchFilter f;
    f.kinds = std::set<RecordKind>{RecordKind::chunk};
    f.docs = std::set<std::string>{"d1"};
    const TopKResult r = index.search(q, 50, f);
    CHECK_FALSE(r.hits.empty());
    for (const auto& h : r.hits) {
        const auto got = index.get(h.record_id);
        CHECK(got->kind == RecordKind::chunk);
        CHECK(got->attrs.doc_id == "d1");
    }
    SearchFilter p;
    p.predicate = [](const EmbeddingRecord& e) { return e.record_id.size() == 2; };
    CHECK(index.search(q, 200, p).hits.size() == 10);
}

TEST_CASE("remove and remove_document") {
    VectorIndex index(2);
    index.index({rec("c1", {1, 0}, RecordKind::chunk, "d1"), rec("a1", {0, 1}, RecordKind::asset_text, "d1"),
                 rec("e1", {1, 1}, RecordKind::entity, "d1"), rec("c2", {1, 0}, RecordKind::chunk, "d2")});
    index.remove_document("d1");
    CHECK(index.ids() == std::vector<std::string>{"c2", "e1"});
    index.remove({"e1", "missing"});
    CHECK(index.ids() == std::vector<std::string>{"c2"});
}

TEST_CASE("persistence round-trips vectors and attributes") {
    TempDir dir;
    VectorIndex index(3);
    EmbeddingRecord r = rec("chunk:d#c0000", {1, 2, 3}, RecordKind::chunk, "d", "some chunk text");
    r.attrs.chunk_id = "d#c0000";
    r.attrs.storage_path = "images/a.png";
    r.attrs.bbox = BoundingBox{1, 2, 3, 4};
    r.attrs.page = 7;
    r.attrs.span = Span{0, 10};
    index.index({r, rec("entity:x", {0, 0, 1})});
    index.save(dir / "index.bin");
    const VectorIndex back = VectorIndex::load(dir / "index.bin");
    CHECK(back.dim() == 3);
    CHECK(back.size() == 2);
    const auto got = back.get("chunk:d#c0000");
    REQUIRE(got.has_value());
    CHECK(got->vector == index.get("chunk:d#c0000")->vector);
    CHECK(got->payload_text == "some chunk text");
    CHECK(got->attrs.storage_path == "images/a.png");
    CHECK(got->attrs.bbox == BoundingBox{1, 2, 3, 4});
    CHECK(got->attrs.page == 7);
    CHECK(got->attrs.span == Span{0, 10});

    std::ofstream(dir / "junk.bin") << "not an index";
    CHECK_THROWS(VectorIndex::load(dir / "junk.bin"));
}

TEST_CASE("searches during a write see a whole snapshot") {
    VectorIndex index(2);
    index.index({rec("base", {1, 0})});
    std::atomic<bool> stop{false};
    std::atomic<bool> torn{false};
    std::thread reader([&] {
        const std::vector<double> q{1, 0};
        while (!stop) {
            const std::size_t n = index.search(q, 1000).hits.size();
            if (n != 1 && n != 101 && n != 201) torn = true;
        }
    });
    for (int round = 0; round < 2; ++round) {
        std::vector<EmbeddingRecord> batch;
        for (int i = 0; i < 100; ++i) batch.push_back(rec("r" + std::to_string(round) + "-" + std::to_string(i), {1, 0.01 * i}));
        index.index(batch);
    }
    stop = true;
    reader.join();
    CHECK_FALSE(torn);
    CHECK(index.size() == 201);
}

TEST_CASE("rerank reorders recall and degrades to cosine order") {
    VectorIndex index(16);
    auto t = scripted(16);
    Gateway g(default_endpoints(), t, nullptr, fast_options(16));
    const std::vector<std::string> texts{"revenue of acme", "margin of beta", "acme revenue grew strongly", "unrelated words"};
    const auto vecs = g.embed(texts);
    std::vector<EmbeddingRecord> batch;
    for (std::size_t i = 0; i < texts.size(); ++i)
        batch.push_back(rec("r" + std::to_string(i), vecs[i], RecordKind::chunk, "d", texts[i]));
    index.index(batch);

    SUBCASE("reranker order wins") {
        auto inverted = std::make_shared<FnTransport>([&](const ModelEndpoint& ep, const std::string& path, const nlohmann::json& body) {
            if (ep.role != Role::reranker) return ScriptedBackend(BackendOptions{16, 85}).handle(ep.role, path, body);
            nlohmann::json results = nlohmann::json::array();
            const std::size_t n = body["documents"].size();
            for (std::size_t i = 0; i < n; ++i) results.push_back({{"index", i}, {"relevance_score", static_cast<double>(i)}});
            return nlohmann::json{{"results", results}};
        });
        Gateway rg(default_endpoints(), inverted, nullptr, fast_options(16));
        const TopKResult cosine = index.search(rg.embed({"acme revenue"})[0], 4);
        const TopKResult r = search_then_rerank(index, rg, "acme revenue", 4, 3);
        REQUIRE(r.hits.size() == 3);
        CHECK_FALSE(r.degraded);
        CHECK(r.hits[0].record_id == cosine.hits[3].record_id);
        CHECK(r.hits[1].record_id == cosine.hits[2].record_id);
    }
    SUBCASE("reranker down") {
        t->set_fault([](Role role, const std::string&, std::size_t) -> std::optional<int> {
            if (role == Role::reranker) return 503;
            return std::nullopt;
        });
        const TopKResult cosine = index.search(g.embed({"acme revenue"})[0], 2);
        CostLedger slice;
        const TopKResult r = search_then_rerank(index, g, "acme revenue", 4, 2, {}, &slice);
        CHECK(r.degraded);
        CHECK(ids_of(r) == ids_of(cosine));
        CHECK(slice.count_for(StageTag::embedding) == 1);
    }
    CHECK_THROWS_AS(search_then_rerank(index, g, "q", 2, 3), InvalidArgument);
}
