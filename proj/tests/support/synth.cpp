#include "synth.hpp"

#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

namespace docrag::testkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kOnsets{"Var", "Tel", "Quor", "Bram", "Sil", "Dun", "Mer", "Ox", "Pel", "Zan",
                                       "Kor", "Lum", "Fen", "Gar", "Hol", "Rin"};
const std::vector<std::string> kCodas{"nok", "iq", "ex", "ton", "ara", "elle", "ium", "ova", "und", "ask"};
const std::vector<std::string> kTextAttributes{"revenue", "margin", "backlog"};
const std::vector<std::string> kTableAttributes{"headcount", "turnover"};
const std::vector<std::string> kRegions{"northern", "coastal", "inland", "southern"};
const std::vector<std::string> kFiller{
    "Management discussed the operating environment during the quarter.",
    "Several initiatives were postponed until the next planning cycle.",
    "The outlook section lists risks related to supply and demand.",
    "Auditors reviewed the controls and reported no material weakness.",
    "Capital spending remained within the approved envelope.",
    "The board met four times and approved the annual plan.",
    "Customer feedback was collected through regional surveys.",
    "Energy costs rose compared with the previous period.",
};

std::string company_name(std::mt19937_64& rng) {
    return kOnsets[rng() % kOnsets.size()] + kCodas[rng() % kCodas.size()];
}

json text_block(const std::string& text, int page, double y) {
    return {{"type", "text"}, {"text", text}, {"bbox", {50, y, 550, y + 40}}, {"page_idx", page - 1}};
}

}  // namespace

std::vector<SyntheticDoc> write_corpus(const fs::path& dir, std::size_t n_docs, std::uint64_t seed, const CorpusShape& shape) {
    std::mt19937_64 rng(seed);
    std::vector<SyntheticDoc> docs;
    for (std::size_t d = 0; d < n_docs; ++d) {
        SyntheticDoc doc;
        const std::string doc_id = "doc" + std::to_string(d);
        const fs::path doc_dir = dir / doc_id;
        fs::create_directories(doc_dir / "images");
        doc.source = {doc_id, doc_dir / "layout.json", doc_dir};
        doc.pages = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(shape.max_pages));

        std::set<std::string> names;
        while (names.size() < shape.companies_per_doc) names.insert(company_name(rng));
        doc.entities.assign(names.begin(), names.end());
        std::shuffle(doc.entities.begin(), doc.entities.end(), rng);

        json layout = json::array();
        int page = 1;
        double y = 60;
        auto advance = [&] {
            y += 60;
            if (y > 700) {
                y = 60;
                page = std::min(doc.pages, page + 1 + static_cast<int>(rng() % 3));
            }
        };
        for (std::size_t i = 0; i < doc.entities.size(); ++i) {
            const std::string& e = doc.entities[i];
            const std::string& partner = doc.entities[(i + 1) % doc.entities.size()];
            const std::string attr = kTextAttributes[rng() % kTextAttributes.size()];
            const std::string value = std::to_string(10 + rng() % 90) + " million";
            doc.facts.push_back({doc_id, attr, e, value, false});
            std::string text = "The " + attr + " of " + e + " is " + value + ". " + e + " partners with " + partner +
                               " in the " + kRegions[rng() % kRegions.size()] + " market.";
            for (std::size_t f = 0; f < shape.filler_sentences / 2; ++f) text += " " + kFiller[rng() % kFiller.size()];
            layout.push_back(text_block(text, page, y));
            advance();
        }
        if (shape.with_tables) {
            const std::string& e = doc.entities.front();
            const std::string attr = kTableAttributes[rng() % kTableAttributes.size()];
            const std::string value = std::to_string(100 + rng() % 900);
            doc.facts.push_back({doc_id, attr, e, value, true});
            const std::string img = "images/table0.png";
            std::ofstream(doc_dir / img) << "Table of workforce metrics. The " << attr << " of " << e << " is " << value
                                         << ".\n";
            layout.push_back({{"type", "table"},
                              {"img_path", img},
                              {"table_caption", {"Table 1: Workforce figures for " + e}},
                              {"bbox", {50, y, 550, y + 200}},
                              {"page_idx", page - 1}});
            y += 220;
            layout.push_back(text_block("The table above summarises workforce figures for " + e + ".", page, y));
            advance();
        }
        for (std::size_t f = 0; f < shape.filler_sentences - shape.filler_sentences / 2; ++f) {
            layout.push_back(text_block(kFiller[rng() % kFiller.size()], page, y));
            advance();
        }
        // A closing line on the last page fixes the page count.
        layout.push_back(text_block("End of report.", doc.pages, 720));
        std::ofstream(doc.source.layout_path) << layout.dump(1) << "\n";
        docs.push_back(std::move(doc));
    }
    return docs;
}

QueryCase make_query(const SyntheticDoc& doc, QueryKind kind, std::uint64_t salt) {
    QueryCase q;
    q.doc_id = doc.source.doc_id;
    q.kind = kind;
    std::vector<const Fact*> text_facts, table_facts;
    for (const auto& f : doc.facts) (f.in_table ? table_facts : text_facts).push_back(&f);
    const Fact* tf = text_facts[salt % text_facts.size()];
    const std::string& a = doc.entities[salt % doc.entities.size()];
    const std::string& b = doc.entities[(salt + 1) % doc.entities.size()];
    switch (kind) {
        case QueryKind::simple:
            q.question = "What is the " + tf->attribute + " of " + tf->entity + "?";
            q.gold = tf->value;
            break;
        case QueryKind::table: {
            const Fact* f = table_facts.empty() ? tf : table_facts[salt % table_facts.size()];
            q.question = "What is the " + f->attribute + " of " + f->entity + "?";
            q.gold = f->value;
            break;
        }
        case QueryKind::moderate:
            q.question = "How does " + a + " work with " + b + "?";
            q.gold = "";
            break;
        case QueryKind::complex:
            q.question = "Compare the figures of " + a + " and " + b + " and explain why they differ.";
            q.gold = "";
            break;
        case QueryKind::unanswerable:
            q.question = "What is the valuation of " + tf->entity + "?";
            q.gold = "UNANSWERABLE";
            break;
    }
    return q;
}

std::vector<QueryCase> make_query_mix(const std::vector<SyntheticDoc>& docs, std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // 50% simple, 20% table, 15% moderate, 15% complex.
    const std::vector<QueryKind> wheel{QueryKind::simple, QueryKind::simple, QueryKind::simple, QueryKind::simple,
                                       QueryKind::simple, QueryKind::simple, QueryKind::simple, QueryKind::simple,
                                       QueryKind::simple, QueryKind::simple, QueryKind::table,  QueryKind::table,
                                       QueryKind::table,  QueryKind::table,  QueryKind::moderate, QueryKind::moderate,
                                       QueryKind::moderate, QueryKind::complex, QueryKind::complex, QueryKind::complex};
    std::vector<QueryCase> out;
    for (std::size_t i = 0; i < count; ++i) {
        const SyntheticDoc& d = docs[rng() % docs.size()];
        out.push_back(make_query(d, wheel[rng() % wheel.size()], rng()));
    }
    return out;
}

}  // namespace docrag::testkit
