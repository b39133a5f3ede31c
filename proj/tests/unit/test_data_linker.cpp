#include <doctest.h>

#include <fstream>
#include <random>

#include "docrag/data_linker.hpp"
#include "helpers.hpp"

using namespace docrag;
using namespace docrag::testkit;
using nlohmann::json;

namespace {

constexpr std::size_t kDim = 4;

// Keyword embeddings: alpha, beta, gamma and everything else get orthogonal axes.
std::vector<double> axis_for(const std::string& text) {
    std::vector<double> v(kDim, 0.0);
    if (text.find("alpha") != std::string::npos) v[0] = 1;
    else if (text.find("beta") != std::string::npos) v[1] = 1;
    else if (text.find("gamma") != std::string::npos) v[2] = 1;
    else v[3] = 1;
    return v;
}

std::shared_ptr<FnTransport> axis_transport() {
    return std::make_shared<FnTransport>([](const ModelEndpoint&, const std::string& path, const json& body) {
        if (path != "/embeddings") throw ProtocolError("unexpected call to " + path);
        json data = json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i)
            data.push_back({{"index", i}, {"embedding", axis_for(body["input"][i].get<std::string>())}});
        return json{{"data", data}, {"usage", {{"prompt_tokens", 1}}}};
    });
}

ContentBlock block(const std::string& id, double y0, double y1, int page, const std::string& text,
                   const std::string& storage = "") {
    ContentBlock b;
    b.block_id = id;
    b.type = storage.empty() ? BlockType::text : BlockType::image;
    b.content = text;
    b.bbox = BoundingBox{0, y0, 100, y1};
    b.page = page;
    b.storage_path = storage;
    b.doc_id = "d";
    return b;
}

Chunk chunk_of(const std::string& id, const std::string& text, const std::string& block_id) {
    return Chunk{id, text, Span{0, 2}, {block_id}, "d"};
}

Entity entity(const std::string& name, const std::string& chunk) {
    Entity e;
    e.canonical_name = name;
    e.mentions.push_back({"thing", name + " description", Provenance{"d", chunk}});
    e.provenance.insert(Provenance{"d", chunk});
    e.refresh();
    return e;
}

Relation relation(const std::string& h, const std::string& pred, const std::string& t, const std::string& chunk) {
    Relation r;
    r.head = h;
    r.tail = t;
    r.predicate = pred;
    r.mentions.push_back({"", Provenance{"d", chunk}});
    r.provenance.insert(Provenance{"d", chunk});
    r.refresh();
    return r;
}

EmbeddingRecord record(const std::string& id, RecordKind kind, const std::string& payload) {
    EmbeddingRecord r;
    r.record_id = id;
    r.kind = kind;
    r.vector = axis_for(payload);
    r.payload_text = payload;
    r.attrs.doc_id = "d";
    return r;
}

// Chunks c1..c3 mention alpha, beta and gamma; alpha-r1-beta and beta-r2-gamma;
// one hyperedge {alpha, gamma} from c3. Only c1 and the entities are indexed.
struct Toy {
    TempDir dir;
    CorpusStore corpus;
    KnowledgeGraph graph;
    VectorIndex index{kDim};
    Gateway gateway{default_endpoints(), axis_transport(), nullptr, fast_options(kDim)};

    Toy() {
        std::filesystem::create_directories(dir / "img");
        std::ofstream(dir / "img/fig.png") << "png";
        AssetRepository assets(dir.path());
        assets.add("img/fig.png");
        std::vector<ContentBlock> blocks{block("b1", 0, 10, 1, "alpha text"), block("b2", 20, 30, 1, "beta text"),
                                         block("b3", 40, 50, 1, "gamma text"),
                                         block("fig", 60, 80, 1, "delta figure", "img/fig.png"),
                                         block("b4", 90, 100, 1, "closing words")};
        corpus.put_document(DocumentInfo{"d", "d.json", dir.path().string(), 1}, blocks, assets,
                            {chunk_of("d#c1", "alpha text", "b1"), chunk_of("d#c2", "beta text", "b2"),
                             chunk_of("d#c3", "gamma text", "b3")});
        graph.merge_entities({entity("alpha", "d#c1"), entity("beta", "d#c2"), entity("gamma", "d#c3")});
        graph.merge_relations({relation("alpha", "r1", "beta", "d#c1"), relation("beta", "r2", "gamma", "d#c2")});
        graph.add_hyperedge(Hyperedge{{"alpha", "gamma"}, "d#c3", "d", 1.0});

        EmbeddingRecord c1 = record(chunk_record_id("d#c1"), RecordKind::chunk, "alpha text");
        c1.attrs.chunk_id = "d#c1";
        c1.attrs.span = Span{0, 2};
        std::vector<EmbeddingRecord> recs{c1};
        for (const auto& [name, e] : graph.entities()) recs.push_back(record(entity_record_id(name), RecordKind::entity, name));
        index.index(recs);
    }

    DataLinker linker(LinkerConfig c = {}) {
        c.rerank = false;
        c.k_entities = 1;
        return DataLinker(corpus, graph, index, gateway, default_token_counter(), c);
    }

    void index_figure() {
        EmbeddingRecord a = record(asset_record_id("d", "fig"), RecordKind::asset_text, "delta figure");
        a.attrs.block_id = "fig";
        a.attrs.storage_path = "img/fig.png";
        a.attrs.bbox = BoundingBox{0, 60, 100, 80};
        a.attrs.page = 1;
        index.index({a});
    }
};

std::vector<std::string> chunk_ids(const RetrievalContext& c) {
    std::vector<std::string> out;
    for (const auto& x : c.chunks) out.push_back(x.chunk_id);
    return out;
}

bool has_fact(const RetrievalContext& c, const std::string& prefix) {
    for (const auto& f : c.entity_facts)
        if (f.rfind(prefix, 0) == 0) return true;
    return false;
}

std::string words(std::size_t n, const std::string& w = "word") {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + w;
    return s;
}

}  // namespace

TEST_CASE("an empty knowledge base yields an empty context") {
    CorpusStore corpus;
    KnowledgeGraph graph;
    VectorIndex index(kDim);
    Gateway g(default_endpoints(), axis_transport(), nullptr, fast_options(kDim));
    DataLinker linker(corpus, graph, index, g, default_token_counter());
    for (RetrievalMode m : {RetrievalMode::vector_local, RetrievalMode::graph, RetrievalMode::hypergraph}) {
        const RetrievalContext c = linker.retrieve("alpha", m);
        CHECK(c.chunks.empty());
        CHECK(c.entity_facts.empty());
        CHECK(c.asset_refs.empty());
        CHECK(c.token_budget_used == 0);
        CHECK(c.retrieved_ids.empty());
        CHECK(c.mode == m);
    }
}

TEST_CASE("retrieval scope widens with the mode") {
    Toy toy;
    const DataLinker linker = toy.linker();

    const RetrievalContext local = linker.retrieve("alpha", RetrievalMode::vector_local);
    CHECK(chunk_ids(local) == std::vector<std::string>{"d#c1"});
    CHECK(local.entity_facts.empty());

    const RetrievalContext graph = linker.retrieve("alpha", RetrievalMode::graph);
    CHECK(chunk_ids(graph) == std::vector<std::string>{"d#c1", "d#c2"});
    CHECK(has_fact(graph, "alpha r1 beta"));
    CHECK_FALSE(has_fact(graph, "beta r2 gamma"));
    CHECK(graph.retrieved_ids.count("entity:beta") == 1);
    CHECK(graph.retrieved_ids.count("entity:gamma") == 0);

    const RetrievalContext hyper = linker.retrieve("alpha", RetrievalMode::hypergraph);
    CHECK(chunk_ids(hyper) == std::vector<std::string>{"d#c1", "d#c2", "d#c3"});
    CHECK(has_fact(hyper, "Co-occurring in d#c3"));
    CHECK(hyper.retrieved_ids.count("entity:gamma") == 1);

    auto subset = [](const std::set<std::string>& a, const std::set<std::string>& b) {
        return std::includes(b.begin(), b.end(), a.begin(), a.end());
    };
    CHECK(subset(local.retrieved_ids, graph.retrieved_ids));
    CHECK(subset(graph.retrieved_ids, hyper.retrieved_ids));

    CHECK(linker.retrieve("alpha", RetrievalMode::hypergraph, std::string("other")).chunks.empty());
}

TEST_CASE("asset hits bring their surrounding text") {
    Toy toy;
    toy.index_figure();
    const RetrievalContext c = toy.linker().retrieve("delta", RetrievalMode::vector_local);
    REQUIRE(c.asset_refs.size() == 1);
    CHECK(c.asset_refs[0].block_id == "fig");
    CHECK(c.asset_refs[0].storage_path == "img/fig.png");
    CHECK(c.asset_refs[0].caption == "delta figure");
    REQUIRE(c.neighbor_context.size() == 2);
    CHECK(c.neighbor_context[0].block_id == "b3");
    CHECK(c.neighbor_context[1].block_id == "b4");
    CHECK(c.retrieved_ids.count(asset_record_id("d", "fig")) == 1);
}

TEST_CASE("neighbor context") {
    CorpusStore corpus;
    corpus.put_document(DocumentInfo{"d", "d.json", "", 2},
                        {block("t1", 0, 10, 1, "one"), block("t2", 20, 30, 1, "two"), block("f", 40, 60, 1, "cap", "f.png"),
                         block("t3", 70, 80, 1, "three"), block("t4", 90, 100, 1, "four"), block("t5", 0, 10, 2, "five")},
                        AssetRepository{}, {});
    KnowledgeGraph graph;
    VectorIndex index(kDim);
    Gateway g(default_endpoints(), axis_transport(), nullptr, fast_options(kDim));
    DataLinker linker(corpus, graph, index, g, default_token_counter());
    auto ids = [&](std::size_t radius) {
        std::vector<std::string> out;
        for (const auto& n : linker.fetch_neighbor_context("d", "f", radius)) out.push_back(n.block_id);
        return out;
    };
    CHECK(ids(0).empty());
    CHECK(ids(1) == std::vector<std::string>{"t2", "t3"});
    CHECK(ids(2) == std::vector<std::string>{"t1", "t2", "t3", "t4"});
    CHECK(ids(3) == std::vector<std::string>{"t1", "t2", "t3", "t4", "t5"});
    CHECK(linker.fetch_neighbor_context("d", "t5", 1).front().block_id == "t4");
    CHECK_THROWS_AS(linker.fetch_neighbor_context("d", "nope", 1), BlockNotFound);
    CHECK_THROWS_AS(linker.fetch_neighbor_context("x", "f", 1), BlockNotFound);
}

TEST_CASE("packing to a token budget") {
    Toy toy;
    const DataLinker linker = toy.linker();
    const auto counter = default_token_counter();
    const std::string a = words(100, "alpha"), b = words(100, "beta");
    const std::size_t na = counter->count(a), nb = counter->count(b);
    RetrievalContext c;
    c.chunks = {{"c1", "d", a, {}, 0.0}, {"c2", "d", b, {}, 0.0}};

    const RetrievalContext first = linker.pack_context(c, na + nb / 2);
    CHECK(chunk_ids(first) == std::vector<std::string>{"c1"});
    CHECK(first.token_budget_used == na);
    const RetrievalContext all = linker.pack_context(c, na + nb);
    CHECK(all.chunks.size() == 2);
    CHECK(all.token_budget_used == na + nb);
    CHECK(linker.pack_context(c, na - 1).chunks.empty());
    CHECK_THROWS_AS(linker.pack_context(c, 0), InvalidArgument);
}

TEST_CASE("packing keeps the longest fitting prefix") {
    Toy toy;
    const DataLinker linker = toy.linker();
    const auto counter = default_token_counter();
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        RetrievalContext c;
        std::vector<std::size_t> costs;
        std::uniform_int_distribution<std::size_t> len(1, 40), parts(0, 5);
        for (std::size_t i = 0, n = parts(rng); i < n; ++i) {
            c.chunks.push_back({"c" + std::to_string(i), "d", words(len(rng)), {}, 0.0});
            costs.push_back(counter->count(c.chunks.back().text));
        }
        for (std::size_t i = 0, n = parts(rng); i < n; ++i) {
            c.entity_facts.push_back(words(len(rng), "fact"));
            costs.push_back(counter->count(c.entity_facts.back()));
        }
        for (std::size_t i = 0, n = parts(rng); i < n; ++i) {
            c.neighbor_context.push_back({"d", "n" + std::to_string(i), 1, words(len(rng), "near")});
            costs.push_back(counter->count(c.neighbor_context.back().text));
        }
        const std::size_t budget = std::uniform_int_distribution<std::size_t>(1, 300)(rng);
        std::size_t kept = 0, used = 0;
        while (kept < costs.size() && used + costs[kept] <= budget) used += costs[kept++];

        const RetrievalContext p = linker.pack_context(c, budget);
        CHECK(p.token_budget_used == used);
        CHECK(p.token_budget_used <= budget);
        CHECK(p.chunks.size() + p.entity_facts.size() + p.neighbor_context.size() == kept);
    }
}

TEST_CASE("merged contexts are deduplicated") {
    Toy toy;
    const DataLinker linker = toy.linker();
    const RetrievalContext a = linker.retrieve("alpha", RetrievalMode::graph);
    const RetrievalContext b = linker.retrieve("beta", RetrievalMode::hypergraph);
    const RetrievalContext m = linker.merge_contexts("alpha and beta", {a, b, a});
    CHECK(m.mode == RetrievalMode::hypergraph);
    const auto ids = chunk_ids(m);
    std::set<std::string> seen_chunks(ids.begin(), ids.end());
    CHECK(seen_chunks.size() == m.chunks.size());
    std::set<std::string> seen_facts(m.entity_facts.begin(), m.entity_facts.end());
    CHECK(seen_facts.size() == m.entity_facts.size());
    for (const auto& id : a.retrieved_ids) CHECK(m.retrieved_ids.count(id) == 1);
    for (const auto& id : b.retrieved_ids) CHECK(m.retrieved_ids.count(id) == 1);
}
