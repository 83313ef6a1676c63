#pragma once

// OpenAI-compatible chat-completions and embeddings over cpp-httplib.
// Needs the tpgo_http target (vendored httplib, OpenSSL when available).

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tpgo/gateway.hpp"

namespace tpgo {

using Json = nlohmann::json;

struct Endpoint {
    std::string origin;     // scheme://host[:port]
    std::string base_path;  // e.g. "/v1", no trailing slash
};

inline Endpoint parse_endpoint(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint \"" + url + "\" lacks a scheme");
    auto slash = url.find('/', scheme + 3);
    Endpoint e{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
    while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
    if (e.origin.size() <= scheme + 3) throw ConfigError("endpoint \"" + url + "\" lacks a host");
    return e;
}

inline std::optional<std::string> env_var(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

namespace detail {

struct HttpResult {
    int status = 0;
    std::string body;
};

inline HttpResult post_json(const Endpoint& ep, const std::string& path, const std::string& api_key, const Json& body,
                            std::chrono::seconds timeout) {
    httplib::Client cli(ep.origin);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = cli.Post(ep.base_path + path, headers, body.dump(), "application/json");
    if (!res) throw TransientFailure("POST " + ep.base_path + path + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

// 429 and 5xx are worth retrying; any other non-2xx is a rejection.
inline void check_status(const HttpResult& r, const std::string& what) {
    if (r.status >= 200 && r.status < 300) return;
    std::string msg = what + " returned HTTP " + std::to_string(r.status) + ": " + r.body.substr(0, 200);
    if (r.status == 429 || r.status >= 500) throw TransientFailure(msg);
    throw ProviderRejection(msg);
}

}  // namespace detail

class OpenAIChatTransport : public ChatTransport {
public:
    OpenAIChatTransport(Endpoint endpoint, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(120))
        : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {}

    ChatReply send(const ChatRequest& req) override {
        Json messages = Json::array();
        for (const auto& m : req.messages) messages.push_back(Json{{"role", m.role}, {"content", m.content}});
        Json body{{"messages", messages}};
        if (req.config) {
            body["model"] = req.config->model_name;
            body["temperature"] = req.config->temperature;
            body["top_p"] = req.config->top_p;
        }
        auto r = detail::post_json(endpoint_, "/chat/completions", api_key_, body, timeout_);
        detail::check_status(r, "chat completion");
        try {
            auto j = Json::parse(r.body);
            ChatReply reply;
            reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage") && j.at("usage").is_object()) {
                UsageCounters u;
                u.prompt_tokens = j.at("usage").value("prompt_tokens", 0L);
                u.completion_tokens = j.at("usage").value("completion_tokens", 0L);
                reply.usage = u;
            }
            return reply;
        } catch (const Json::exception& e) {
            throw TransientFailure(std::string("malformed chat completion: ") + e.what());
        }
    }

private:
    Endpoint endpoint_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

// Embeddings endpoint with the same retry schedule as chat.
class OpenAIEmbedder : public EmbeddingProvider {
public:
    OpenAIEmbedder(Endpoint endpoint, std::string api_key, ModelConfig config, Sleeper sleeper = real_sleeper())
        : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), config_(std::move(config)),
          sleeper_(std::move(sleeper)) {}

    std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override {
        Json body{{"model", config_.model_name}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
        const int max_attempts = config_.max_retries + 1;
        std::string last;
        for (int attempt = 1; attempt <= max_attempts; ++attempt) {
            try {
                auto r = detail::post_json(endpoint_, "/embeddings", api_key_, body, std::chrono::seconds(120));
                detail::check_status(r, "embeddings");
                return parse(r.body, texts.size());
            } catch (const TransientFailure& e) {
                last = e.what();
                if (attempt < max_attempts) sleeper_(backoff_delay(config_.backoff_base, attempt));
            } catch (const ProviderRejection& e) {
                throw TransportError(std::string("embedder rejected: ") + e.what(), attempt);
            }
        }
        throw TransportError("embedder transport failed: " + last, max_attempts);
    }

private:
    static std::vector<std::vector<double>> parse(const std::string& body, std::size_t n) {
        try {
            auto j = Json::parse(body);
            std::vector<std::vector<double>> out(n);
            std::size_t seen = 0;
            for (const auto& d : j.at("data")) {
                auto idx = d.value("index", seen);
                if (idx >= n) throw TransientFailure("embedding index out of range");
                out[idx] = d.at("embedding").get<std::vector<double>>();
                ++seen;
            }
            if (seen != n) throw TransientFailure("expected " + std::to_string(n) + " embeddings, got " + std::to_string(seen));
            return out;
        } catch (const Json::exception& e) {
            throw TransientFailure(std::string("malformed embeddings response: ") + e.what());
        }
    }

    Endpoint endpoint_;
    std::string api_key_;
    ModelConfig config_;
    Sleeper sleeper_;
};

}  // namespace tpgo
