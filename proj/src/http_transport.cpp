#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT

#include <httplib.h>

#include "docrag/gateway.hpp"

namespace docrag {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path part, no trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url lacks a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.origin = url;
    } else {
        out.origin = url.substr(0, path_start);
        out.prefix = url.substr(path_start);
        while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    }
    return out;
}

}  // namespace

nlohmann::json HttpTransport::post(const ModelEndpoint& endpoint, const std::string& path, const nlohmann::json& body) {
    const SplitUrl url = split_url(endpoint.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);

    httplib::Headers headers;
    if (!endpoint.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key != nullptr && *key != '\0')
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    auto res = client.Post(url.prefix + path, headers, body.dump(), "application/json");
    if (!res) throw TransportError(endpoint.base_url + path + ": " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransportError(endpoint.base_url + path + ": HTTP " + std::to_string(res->status));
    if (res->status < 200 || res->status >= 300)
        throw ProtocolError(endpoint.base_url + path + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError(endpoint.base_url + path + ": reply is not JSON: " + e.what());
    }
}

}  // namespace docrag
