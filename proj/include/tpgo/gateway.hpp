#pragma once

// Uniform chat/embedding access: retry policy, usage accounting, cosine
// similarity, and the deterministic hashing embedder used offline.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tpgo/common.hpp"

namespace tpgo {

using Millis = std::chrono::milliseconds;

struct ModelConfig {
    std::string model_name;
    double temperature = 0.7;
    double top_p = 0.95;
    int max_retries = 3;
    Millis backoff_base{500};

    void validate() const {
        if (temperature < 0) throw ConfigError("temperature must be >= 0");
        if (!(top_p > 0 && top_p <= 1)) throw ConfigError("top_p must be in (0, 1]");
        if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    }
};

struct Message {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
    bool operator==(const Message&) const = default;
};

struct UsageCounters {
    long prompt_tokens = 0;
    long completion_tokens = 0;
    Millis wall_time{0};

    long total_tokens() const noexcept { return prompt_tokens + completion_tokens; }

    UsageCounters& operator+=(const UsageCounters& o) {
        prompt_tokens += o.prompt_tokens;
        completion_tokens += o.completion_tokens;
        wall_time += o.wall_time;
        return *this;
    }
    friend UsageCounters operator+(UsageCounters a, const UsageCounters& b) { return a += b; }
    bool operator==(const UsageCounters&) const = default;
};

// Rough stub estimate: one token per four bytes, rounded up.
inline long estimate_tokens(std::string_view text) { return static_cast<long>((text.size() + 3) / 4); }

// Monotonic clock source; swapped for a frozen clock to make archives reproducible.
using Clock = std::function<std::chrono::steady_clock::time_point()>;
inline Clock system_clock() {
    return [] { return std::chrono::steady_clock::now(); };
}
inline Clock frozen_clock() {
    return [] { return std::chrono::steady_clock::time_point{}; };
}

// One row per metered call (LLM roles and agent executions alike).
struct CallRecord {
    std::string role;
    UsageCounters usage;
    int attempts = 1;
};

// Single accounting sink shared by every provider in a run.
class UsageLedger {
public:
    void record(CallRecord r) {
        std::lock_guard lock(mu_);
        log_.push_back(std::move(r));
    }
    std::vector<CallRecord> snapshot() const {
        std::lock_guard lock(mu_);
        return log_;
    }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return log_.size();
    }
    UsageCounters total(std::size_t from = 0) const {
        std::lock_guard lock(mu_);
        UsageCounters t;
        for (std::size_t i = from; i < log_.size(); ++i) t += log_[i].usage;
        return t;
    }

private:
    mutable std::mutex mu_;
    std::vector<CallRecord> log_;
};

// ---------------------------------------------------------------------------
// Chat

struct ChatRequest {
    std::string role;  // parser | reflector | optimizer
    const ModelConfig* config = nullptr;
    std::vector<Message> messages;
};

struct ChatReply {
    std::string text;
    std::optional<UsageCounters> usage;  // provider metadata, when reported
};

// Transport failures worth another attempt (network, 429, 5xx).
class TransientFailure : public Error {
public:
    using Error::Error;
};

// Provider refused the request outright (4xx other than 429). Not retried.
class ProviderRejection : public Error {
public:
    using Error::Error;
};

// One attempt per call; throws TransientFailure or ProviderRejection.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual ChatReply send(const ChatRequest& request) = 0;
};

struct ChatExchange {
    std::vector<Message> request;
    std::string response;
    UsageCounters usage;
    int attempts = 0;
};

using Sleeper = std::function<void(Millis)>;
inline Sleeper real_sleeper() {
    return [](Millis d) { std::this_thread::sleep_for(d); };
}

// delay after failed attempt n (1-based) = base * 2^(n-1)
inline Millis backoff_delay(Millis base, int attempt) { return base * (1LL << (attempt - 1)); }

// A role-bound client: transport + model config + retry policy + accounting.
class ChatGateway {
public:
    ChatGateway(std::string role, ModelConfig config, std::shared_ptr<ChatTransport> transport,
                std::shared_ptr<UsageLedger> ledger = std::make_shared<UsageLedger>(), Sleeper sleeper = real_sleeper(),
                Clock clock = system_clock())
        : role_(std::move(role)), config_(std::move(config)), transport_(std::move(transport)),
          ledger_(std::move(ledger)), sleeper_(std::move(sleeper)), clock_(std::move(clock)) {
        config_.validate();
    }

    ChatExchange chat(std::vector<Message> messages) {
        if (messages.empty()) throw Error("chat needs at least one message");
        ChatRequest req{role_, &config_, std::move(messages)};
        const int max_attempts = config_.max_retries + 1;
        std::string last_error;
        for (int attempt = 1; attempt <= max_attempts; ++attempt) {
            auto start = clock_();
            try {
                ChatReply reply = transport_->send(req);
                ChatExchange ex;
                ex.attempts = attempt;
                ex.response = std::move(reply.text);
                if (reply.usage) {
                    ex.usage = *reply.usage;
                } else {
                    for (const auto& m : req.messages) ex.usage.prompt_tokens += estimate_tokens(m.content);
                    ex.usage.completion_tokens = estimate_tokens(ex.response);
                }
                ex.usage.wall_time = std::chrono::duration_cast<Millis>(clock_() - start);
                ex.request = std::move(req.messages);
                ledger_->record({role_, ex.usage, attempt});
                return ex;
            } catch (const TransientFailure& e) {
                last_error = e.what();
                if (attempt < max_attempts) sleeper_(backoff_delay(config_.backoff_base, attempt));
            } catch (const ProviderRejection& e) {
                throw TransportError(std::string(role_ + " rejected: ") + e.what(), attempt);
            }
        }
        throw TransportError(role_ + " transport failed: " + last_error, max_attempts);
    }

    const std::string& role() const noexcept { return role_; }
    const ModelConfig& config() const noexcept { return config_; }
    const std::shared_ptr<UsageLedger>& ledger() const noexcept { return ledger_; }

private:
    std::string role_;
    ModelConfig config_;
    std::shared_ptr<ChatTransport> transport_;
    std::shared_ptr<UsageLedger> ledger_;
    Sleeper sleeper_;
    Clock clock_;
};

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dimension() const noexcept { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

// Returns the unit vector along `raw`; throws NormalizationError on a zero vector.
inline EmbeddingVector normalize(std::vector<double> raw) {
    double norm = 0;
    for (double v : raw) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0) || !std::isfinite(norm)) throw NormalizationError("cannot normalize a zero or non-finite vector");
    for (double& v : raw) v /= norm;
    return EmbeddingVector{std::move(raw)};
}

// Every similarity in the project goes through here. Inputs are unit vectors;
// the result is clamped to [-1, 1] and symmetric in its arguments.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension())
        throw Error("dimension mismatch: " + std::to_string(a.dimension()) + " vs " + std::to_string(b.dimension()));
    double dot = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    return std::clamp(dot, -1.0, 1.0);
}

inline double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) { return 1.0 - cosine_similarity(a, b); }

// Raw provider; vectors need not be normalized. Must map equal strings to equal vectors.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) = 0;
};

inline std::vector<EmbeddingVector> embed(EmbeddingProvider& provider, std::span<const std::string> texts) {
    for (const auto& t : texts)
        if (t.empty()) throw Error("cannot embed an empty text");
    auto raw = provider.embed_raw(texts);
    if (raw.size() != texts.size())
        throw Error("provider returned " + std::to_string(raw.size()) + " vectors for " + std::to_string(texts.size()) + " texts");
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    for (auto& r : raw) out.push_back(normalize(std::move(r)));
    return out;
}

inline EmbeddingVector embed_one(EmbeddingProvider& provider, const std::string& text) {
    return embed(provider, std::span<const std::string>(&text, 1)).front();
}

// Lowercased alphanumeric tokens.
inline std::vector<std::string> hash_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

// Seeded token-hash bag of features: each token adds 1 to bucket
// fnv1a64(token, seed) mod dimension. Text without alphanumerics counts as one token.
class HashEmbedder : public EmbeddingProvider {
public:
    static constexpr std::size_t kDefaultDimension = 64;

    explicit HashEmbedder(std::uint64_t seed = 0, std::size_t dimension = kDefaultDimension)
        : seed_(seed), dimension_(dimension) {}

    std::vector<double> features(std::string_view text) const {
        std::vector<double> v(dimension_, 0.0);
        auto tokens = hash_tokens(text);
        if (tokens.empty()) tokens.emplace_back(text);
        for (const auto& t : tokens) v[fnv1a64(t, seed_) % dimension_] += 1.0;
        return v;
    }

    std::vector<std::vector<double>> embed_raw(std::span<const std::string> texts) override {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(features(t));
        return out;
    }

    std::size_t dimension() const noexcept { return dimension_; }

private:
    std::uint64_t seed_;
    std::size_t dimension_;
};

}  // namespace tpgo
