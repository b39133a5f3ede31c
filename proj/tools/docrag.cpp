// docrag command-line interface.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "docrag/config.hpp"
#include "docrag/harness.hpp"
#include "docrag/workspace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace docrag;

namespace {

struct Common {
    std::string config_path;
    std::string workspace = "docrag-workspace";
    std::string cassette;
    std::string cassette_mode;
    std::string ledger_out;
    bool lenient = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_workspace = true) {
    cmd->add_option("-c,--config", c.config_path, "INI configuration file")->check(CLI::ExistingFile);
    if (with_workspace) cmd->add_option("-w,--workspace", c.workspace, "Workspace directory")->capture_default_str();
    cmd->add_option("--cassette", c.cassette, "Fixture cassette (JSON lines)");
    cmd->add_option("--cassette-mode", c.cassette_mode, "record, replay or passthrough")
        ->check(CLI::IsMember({"record", "replay", "passthrough"}));
    cmd->add_option("--ledger", c.ledger_out, "Write the token ledger of this run here");
}

Config resolve_config(const Common& c) {
    Config cfg = c.config_path.empty() ? default_config() : load_config(c.config_path);
    if (c.lenient) cfg.pipeline.lenient = true;
    if (!c.cassette.empty()) cfg.gateway.cassette = c.cassette;
    if (!c.cassette_mode.empty()) cfg.gateway.cassette_mode = c.cassette_mode;
    if (!cfg.gateway.cassette.empty() && c.cassette_mode.empty() && cfg.gateway.cassette_mode == "passthrough")
        cfg.gateway.cassette_mode = "replay";
    return cfg;
}

class Session {
public:
    explicit Session(const Common& c) : common_(c), config_(resolve_config(c)) {
        if (!config_.gateway.cassette.empty())
            cassette_ = std::make_shared<FixtureCassette>(
                FixtureCassette::load(config_.gateway.cassette, parse_cassette_mode(config_.gateway.cassette_mode)));
        ws_ = std::make_unique<Workspace>(config_, std::make_shared<HttpTransport>(), cassette_, gateway_options(config_));
    }

    ~Session() {
        try {
            finish();
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
        }
    }

    void load_workspace() { ws_->load(common_.workspace); }
    void save_workspace() { ws_->save(common_.workspace); }
    Workspace& ws() { return *ws_; }
    CostLedger& ledger() { return ledger_; }

    void finish() {
        if (finished_) return;
        finished_ = true;
        if (cassette_ && cassette_->mode() == FixtureCassette::Mode::record) cassette_->save(config_.gateway.cassette);
        if (!common_.ledger_out.empty()) ledger_.save_jsonl(common_.ledger_out);
    }

private:
    const Common& common_;
    Config config_;
    std::shared_ptr<FixtureCassette> cassette_;
    std::unique_ptr<Workspace> ws_;
    CostLedger ledger_;
    bool finished_ = false;
};

std::vector<DocumentSource> parse_sources(const std::vector<std::string>& args) {
    std::vector<DocumentSource> out;
    for (const auto& a : args) {
        DocumentSource s;
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            s.doc_id = a.substr(0, eq);
            s.layout_path = a.substr(eq + 1);
        } else {
            s.layout_path = a;
            s.doc_id = s.layout_path.stem().string();
        }
        s.asset_root = s.layout_path.parent_path();
        out.push_back(std::move(s));
    }
    return out;
}

void append_line(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot write " + path);
    out << j.dump() << '\n';
}

int doc_pages(const Workspace& ws, const std::optional<std::string>& doc) {
    if (doc && ws.corpus().has_document(*doc)) return ws.corpus().document(*doc).page_count;
    int pages = 0;
    for (const auto& id : ws.corpus().document_ids()) pages = std::max(pages, ws.corpus().document(id).page_count);
    return pages;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    return lines;
}

std::pair<std::string, std::string> split_label(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos) return {fs::path(arg).stem().string(), arg};
    return {arg.substr(0, eq), arg.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal document question answering over a graph knowledge base"};
    app.require_subcommand(1);

    Common common;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse, extract and index documents");
    add_common(ingest, common);
    std::vector<std::string> ingest_paths;
    ingest->add_option("documents", ingest_paths, "Layout JSON files, optionally as ID=path")->required();
    ingest->add_flag("--lenient", common.lenient, "Drop blocks whose asset file is missing");

    // query
    auto* query = app.add_subcommand("query", "Answer one question");
    add_common(query, common);
    std::string question, mode_override, doc_filter, dump_path, decision_log;
    query->add_option("question", question)->required();
    query->add_option("--mode", mode_override, "Force a retrieval mode and skip routing")
        ->check(CLI::IsMember({"vector_local", "graph", "hypergraph"}));
    query->add_option("--doc", doc_filter, "Restrict retrieval to one document");
    query->add_option("--dump-context", dump_path, "Write the assembled context as JSON");
    query->add_option("--decision-log", decision_log, "Append the routing decision here");

    // route
    auto* route = app.add_subcommand("route", "Show the routing decision for a question");
    add_common(route, common);
    std::string route_question, route_doc, route_log;
    route->add_option("question", route_question)->required();
    route->add_option("--doc", route_doc, "Document the question targets (for the page count)");
    route->add_option("--decision-log", route_log, "Append the decision here");

    // eval
    auto* eval = app.add_subcommand("eval", "Answer and score a benchmark file");
    add_common(eval, common);
    std::string bench_path, judge_name = "normalized", report_path;
    std::size_t workers = 1;
    eval->add_option("benchmark", bench_path, "Benchmark items (JSON lines)")->required()->check(CLI::ExistingFile);
    eval->add_option("--judge", judge_name)->check(CLI::IsMember({"exact", "normalized", "model"}))->capture_default_str();
    eval->add_option("--workers", workers)->check(CLI::PositiveNumber)->capture_default_str();
    eval->add_option("--report", report_path, "Write the report JSON here");

    // routing-report
    auto* rreport = app.add_subcommand("routing-report", "Routing distribution by document length");
    std::string log_a, log_b, bucket_spec, rreport_json;
    rreport->add_option("log", log_a, "Decision log (JSON lines)")->required()->check(CLI::ExistingFile);
    rreport->add_option("--compare", log_b, "Second decision log")->check(CLI::ExistingFile);
    rreport->add_option("--buckets", bucket_spec, "Page buckets, e.g. 0-20,20-50,50+");
    rreport->add_option("--json", rreport_json, "Write the distribution JSON here");

    // cost-report
    auto* creport = app.add_subcommand("cost-report", "Token and money tables versus a baseline");
    std::string baseline_arg, candidate_arg, creport_config, creport_json;
    creport->add_option("--baseline", baseline_arg, "LABEL=ledger.jsonl")->required();
    creport->add_option("--candidate", candidate_arg, "LABEL=ledger.jsonl")->required();
    creport->add_option("-c,--config", creport_config, "Configuration with prices")->required()->check(CLI::ExistingFile);
    creport->add_option("--json", creport_json, "Write the report JSON here");

    // record-fixtures
    auto* record = app.add_subcommand("record-fixtures", "Ingest and answer questions against live endpoints, recording a cassette");
    add_common(record, common);
    std::vector<std::string> record_docs;
    std::string record_queries;
    record->add_option("documents", record_docs, "Layout JSON files")->required();
    record->add_option("--queries", record_queries, "One question per line")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*ingest) {
            if (ingest_paths.empty()) {
                std::cerr << "error: no documents given\n";
                return 2;
            }
            Session s(common);
            if (fs::exists(fs::path(common.workspace) / "index.bin")) s.load_workspace();
            const IngestSummary summary = s.ws().ingest(parse_sources(ingest_paths), &s.ledger());
            s.save_workspace();
            std::cout << summary.to_json().dump(2) << "\n";
            for (const auto& d : summary.documents)
                if (!d.ok) std::cerr << "failed: " << d.doc_id << ": " << d.error << "\n";
            return summary.all_ok() || s.ws().config().pipeline.lenient ? 0 : 1;
        }

        if (*query) {
            Session s(common);
            s.load_workspace();
            AnswerOptions opts;
            if (!mode_override.empty()) opts.mode_override = parse_mode(mode_override);
            if (!doc_filter.empty()) opts.doc_filter = doc_filter;
            AnswerTrace trace;
            const Answer a = s.ws().answer(question, opts, &trace);
            s.ledger().extend(a.ledger_slice);
            if (!dump_path.empty()) {
                std::ofstream out(dump_path, std::ios::trunc);
                out << trace.to_json().dump(2) << "\n";
            }
            if (!decision_log.empty() && !opts.mode_override)
                append_line(decision_log, decision_log_record(trace.decision, question, doc_pages(s.ws(), opts.doc_filter)));
            std::cout << a.record().dump(2) << "\n";
            return 0;
        }

        if (*route) {
            Session s(common);
            if (fs::exists(fs::path(common.workspace) / "index.bin")) s.load_workspace();
            const RoutingDecision d = s.ws().route(route_question, &s.ledger());
            std::optional<std::string> doc;
            if (!route_doc.empty()) doc = route_doc;
            if (!route_log.empty()) append_line(route_log, decision_log_record(d, route_question, doc_pages(s.ws(), doc)));
            std::cout << to_json(d).dump(2) << "\n";
            return 0;
        }

        if (*eval) {
            Session s(common);
            s.load_workspace();
            const auto items = load_benchmark(bench_path);
            const EvalReport report = run_eval(s.ws(), items, parse_judge(judge_name), workers);
            for (const auto& r : report.items) s.ledger().extend(r.ledger);
            if (!report_path.empty()) {
                std::ofstream out(report_path, std::ios::trunc);
                out << report.to_json().dump(2) << "\n";
            }
            std::cout << report.table();
            return 0;
        }

        if (*rreport) {
            const auto buckets = bucket_spec.empty() ? default_page_buckets() : parse_page_buckets(bucket_spec);
            const RoutingDistribution a = load_routing_distribution(log_a, buckets);
            json j{{"log", log_a}, {"distribution", a.to_json()}};
            std::cout << a.table();
            if (!log_b.empty()) {
                const RoutingDistribution b = load_routing_distribution(log_b, buckets);
                j["compare"] = {{"log", log_b}, {"distribution", b.to_json()}};
                std::cout << "\n"
                          << compare_distributions(fs::path(log_a).stem().string(), a, fs::path(log_b).stem().string(), b);
            }
            if (!rreport_json.empty()) {
                std::ofstream out(rreport_json, std::ios::trunc);
                out << j.dump(2) << "\n";
            }
            return 0;
        }

        if (*creport) {
            const Config cfg = load_config(creport_config);
            const auto [base_label, base_path] = split_label(baseline_arg);
            const auto [cand_label, cand_path] = split_label(candidate_arg);
            const CostLedger base = CostLedger::load_jsonl(base_path);
            const CostLedger cand = CostLedger::load_jsonl(cand_path);
            std::cout << cost_tables(base_label, base, cand_label, cand, cfg.prices);
            if (!creport_json.empty()) {
                std::ofstream out(creport_json, std::ios::trunc);
                out << cost_report_json(base_label, base, cand_label, cand, cfg.prices).dump(2) << "\n";
            }
            return 0;
        }

        if (*record) {
            if (common.cassette.empty()) {
                std::cerr << "error: --cassette is required\n";
                return 2;
            }
            common.cassette_mode = "record";
            Session s(common);
            const IngestSummary summary = s.ws().ingest(parse_sources(record_docs), &s.ledger());
            s.save_workspace();
            std::size_t answered = 0;
            if (!record_queries.empty())
                for (const auto& q : read_lines(record_queries)) {
                    s.ledger().extend(s.ws().answer(q).ledger_slice);
                    ++answered;
                }
            s.finish();
            std::cout << json{{"ingest", summary.to_json()}, {"queries", answered}}.dump(2) << "\n";
            return 0;
        }
    } catch (const StageError& e) {
        std::cerr << "error in stage " << e.stage() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
