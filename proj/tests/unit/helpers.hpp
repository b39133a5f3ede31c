#pragma once

#include <deque>
#include <functional>
#include <map>
#include <mutex>

#include "env.hpp"

namespace docrag::testkit {

class FnTransport final : public Transport {
public:
    using Fn = std::function<nlohmann::json(const ModelEndpoint&, const std::string&, const nlohmann::json&)>;
    explicit FnTransport(Fn fn) : fn_(std::move(fn)) {}
    nlohmann::json post(const ModelEndpoint& ep, const std::string& path, const nlohmann::json& body) override {
        return fn_(ep, path, body);
    }

private:
    Fn fn_;
};

// Queued chat replies per role; roles without a queue (or with an exhausted
// one) fall through to the scripted backend.
class SequenceTransport final : public Transport {
public:
    explicit SequenceTransport(std::size_t dim = 16) {
        BackendOptions bo;
        bo.embedding_dim = dim;
        backend_ = std::make_shared<ScriptedBackend>(bo);
    }

    void queue(Role role, std::string reply) {
        std::lock_guard lock(mu_);
        replies_[role].push_back(std::move(reply));
    }

    std::vector<nlohmann::json> bodies(Role role) const {
        std::lock_guard lock(mu_);
        auto it = bodies_.find(role);
        return it == bodies_.end() ? std::vector<nlohmann::json>{} : it->second;
    }

    nlohmann::json post(const ModelEndpoint& ep, const std::string& path, const nlohmann::json& body) override {
        {
            std::lock_guard lock(mu_);
            bodies_[ep.role].push_back(body);
            auto it = replies_.find(ep.role);
            if (it != replies_.end() && !it->second.empty()) {
                std::string reply = std::move(it->second.front());
                it->second.pop_front();
                return chat_reply(reply, 10);
            }
        }
        return backend_->handle(ep.role, path, body);
    }

private:
    std::shared_ptr<ScriptedBackend> backend_;
    mutable std::mutex mu_;
    std::map<Role, std::deque<std::string>> replies_;
    std::map<Role, std::vector<nlohmann::json>> bodies_;
};

inline GatewayOptions fast_options(std::size_t dim = 16) {
    GatewayOptions o;
    o.backoff = std::chrono::milliseconds(1);
    o.embedding_dim = dim;
    o.keep_request_log = true;
    return o;
}

inline std::shared_ptr<ScriptedTransport> scripted(std::size_t dim = 16) {
    BackendOptions bo;
    bo.embedding_dim = dim;
    return std::make_shared<ScriptedTransport>(std::make_shared<ScriptedBackend>(bo));
}

}  // namespace docrag::testkit
