// Serves the scripted test backend over HTTP on the OpenAI-compatible routes,
// for exercising the CLI and HttpTransport without live models.
#include <atomic>
#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>

#include "scripted_backend.hpp"

using nlohmann::json;
using namespace docrag;

int main(int argc, char** argv) {
    CLI::App app{"Scripted model endpoint server"};
    std::string host = "127.0.0.1";
    int port = 8000;
    std::size_t dim = 1024;
    int fail_first = 0;
    app.add_option("--host", host)->capture_default_str();
    app.add_option("--port", port)->capture_default_str();
    app.add_option("--dim", dim, "Embedding dimension")->capture_default_str();
    app.add_option("--fail-first", fail_first, "Answer the first N requests with 503");
    CLI11_PARSE(app, argc, argv);

    testkit::BackendOptions opts;
    opts.embedding_dim = dim;
    const testkit::ScriptedBackend backend(opts);
    std::atomic<int> failures{fail_first};

    httplib::Server server;
    auto route = [&](const std::string& path) {
        server.Post("/v1" + path, [&, path](const httplib::Request& req, httplib::Response& res) {
            if (failures.fetch_sub(1) > 0) {
                res.status = 503;
                res.set_content(R"({"error":"warming up"})", "application/json");
                return;
            }
            try {
                const json body = json::parse(req.body);
                const Role role = parse_role(body.at("model").get<std::string>());
                res.set_content(backend.handle(role, path, body).dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            }
        });
    };
    route("/chat/completions");
    route("/embeddings");
    route("/rerank");

    std::cerr << "listening on " << host << ":" << port << "\n";
    return server.listen(host, port) ? 0 : 1;
}
