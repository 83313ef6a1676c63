#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "tpgo/gateway.hpp"
#include "tpgo/openai.hpp"

using namespace tpgo;
using namespace std::chrono_literals;

namespace {

// Fails the first `failures` calls with the given exception kind, then answers.
class FlakyTransport : public ChatTransport {
public:
    FlakyTransport(int failures, bool reject = false) : failures_(failures), reject_(reject) {}
    ChatReply send(const ChatRequest& req) override {
        ++calls;
        if (calls <= failures_) {
            if (reject_) throw ProviderRejection("400 bad request");
            throw TransientFailure("503 try later");
        }
        return ChatReply{"ok:" + req.messages.back().content, std::nullopt};
    }
    int calls = 0;

private:
    int failures_;
    bool reject_;
};

struct Recorder {
    std::vector<Millis> sleeps;
    Sleeper sleeper() {
        return [this](Millis d) { sleeps.push_back(d); };
    }
};

ModelConfig cfg(int retries, Millis base = 100ms) {
    ModelConfig c;
    c.model_name = "stub";
    c.max_retries = retries;
    c.backoff_base = base;
    return c;
}

}  // namespace

TEST(Gateway, BackoffDoublesFromBase) {
    EXPECT_EQ(backoff_delay(500ms, 1), 500ms);
    EXPECT_EQ(backoff_delay(500ms, 2), 1000ms);
    EXPECT_EQ(backoff_delay(500ms, 3), 2000ms);
}

TEST(Gateway, RetriesTransientFailuresOnSchedule) {
    auto t = std::make_shared<FlakyTransport>(2);
    Recorder rec;
    auto ledger = std::make_shared<UsageLedger>();
    ChatGateway gw("reflector", cfg(3), t, ledger, rec.sleeper(), frozen_clock());
    auto ex = gw.chat({{"user", "hello"}});
    EXPECT_EQ(ex.response, "ok:hello");
    EXPECT_EQ(ex.attempts, 3);
    EXPECT_EQ(t->calls, 3);
    EXPECT_EQ(rec.sleeps, (std::vector<Millis>{100ms, 200ms}));
    ASSERT_EQ(ledger->size(), 1u);
    EXPECT_EQ(ledger->snapshot()[0].attempts, 3);
}

TEST(Gateway, GivesUpAfterMaxRetries) {
    auto t = std::make_shared<FlakyTransport>(100);
    Recorder rec;
    auto ledger = std::make_shared<UsageLedger>();
    ChatGateway gw("optimizer", cfg(3), t, ledger, rec.sleeper(), frozen_clock());
    try {
        gw.chat({{"user", "x"}});
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.attempts(), 4);
    }
    EXPECT_EQ(t->calls, 4);
    // no sleep after the final attempt
    EXPECT_EQ(rec.sleeps, (std::vector<Millis>{100ms, 200ms, 400ms}));
    EXPECT_EQ(ledger->size(), 0u);
}

TEST(Gateway, RejectionsAreNotRetried) {
    auto t = std::make_shared<FlakyTransport>(1, true);
    Recorder rec;
    ChatGateway gw("parser", cfg(3), t, std::make_shared<UsageLedger>(), rec.sleeper(), frozen_clock());
    EXPECT_THROW(gw.chat({{"user", "x"}}), TransportError);
    EXPECT_EQ(t->calls, 1);
    EXPECT_TRUE(rec.sleeps.empty());
}

TEST(Gateway, ZeroRetriesMeansOneAttempt) {
    auto t = std::make_shared<FlakyTransport>(1);
    ChatGateway gw("parser", cfg(0), t, std::make_shared<UsageLedger>(), [](Millis) {}, frozen_clock());
    EXPECT_THROW(gw.chat({{"user", "x"}}), TransportError);
    EXPECT_EQ(t->calls, 1);
}

TEST(Gateway, EstimatesUsageWhenProviderIsSilent) {
    auto t = std::make_shared<FlakyTransport>(0);
    ChatGateway gw("parser", cfg(0), t, std::make_shared<UsageLedger>(), [](Millis) {}, frozen_clock());
    auto ex = gw.chat({{"system", "abcd"}, {"user", "abcdefgh"}});
    EXPECT_EQ(ex.usage.prompt_tokens, 1 + 2);
    EXPECT_EQ(ex.usage.completion_tokens, estimate_tokens("ok:abcdefgh"));
    EXPECT_EQ(ex.usage.wall_time, 0ms);
}

TEST(Gateway, ConfigValidation) {
    ModelConfig c = cfg(1);
    c.top_p = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = cfg(-1);
    EXPECT_THROW(c.validate(), ConfigError);
    c = cfg(1);
    c.temperature = -0.1;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(ChatGateway("x", cfg(0), std::make_shared<FlakyTransport>(0)).chat({}), Error);
}

TEST(Ledger, TotalsEqualTheSumOfTheLog) {
    UsageLedger ledger;
    std::mt19937_64 rng(3);
    UsageCounters expect;
    for (int i = 0; i < 500; ++i) {
        UsageCounters u{static_cast<long>(rng() % 900), static_cast<long>(rng() % 300), Millis(rng() % 50)};
        ledger.record({i % 2 ? "agent" : "reflector", u, 1});
        expect += u;
    }
    EXPECT_EQ(ledger.total(), expect);
    UsageCounters tail;
    auto log = ledger.snapshot();
    for (std::size_t i = 200; i < log.size(); ++i) tail += log[i].usage;
    EXPECT_EQ(ledger.total(200), tail);
}

TEST(Ledger, ConcurrentRecordsAreAllKept) {
    UsageLedger ledger;
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 1000; ++i) ledger.record({"agent", {1, 2, 0ms}, 1});
        });
    for (auto& th : threads) th.join();
    EXPECT_EQ(ledger.size(), 8000u);
    EXPECT_EQ(ledger.total().total_tokens(), 24000);
}

TEST(Embedding, NormalizeAndCosine) {
    auto a = normalize({3, 4});
    EXPECT_DOUBLE_EQ(a.values[0], 0.6);
    EXPECT_THROW(normalize({0, 0}), NormalizationError);
    auto b = normalize({-3, -4});
    EXPECT_DOUBLE_EQ(cosine_similarity(a, b), -1.0);
    EXPECT_DOUBLE_EQ(cosine_distance(a, a), 0.0);
    EXPECT_THROW(cosine_similarity(a, normalize({1, 2, 3})), Error);
}

TEST(Embedding, CosineIsSymmetricAndBounded) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 300; ++i) {
        std::vector<double> x(8), y(8);
        for (auto& v : x) v = nd(rng);
        for (auto& v : y) v = nd(rng);
        auto a = normalize(x), b = normalize(y);
        double s = cosine_similarity(a, b);
        EXPECT_EQ(s, cosine_similarity(b, a));
        EXPECT_LE(s, 1.0);
        EXPECT_GE(s, -1.0);
    }
}

TEST(Embedding, HashEmbedderIsDeterministicAndSeeded) {
    HashEmbedder e(5), f(5), g(6);
    std::vector<std::string> texts{"Missing citation check", "missing CITATION check!", "units"};
    auto a = embed(e, texts), b = embed(f, texts);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[0], a[1]);  // case and punctuation fold away
    EXPECT_EQ(a[0].dimension(), 64u);
    EXPECT_NE(embed_one(g, "units"), a[2]);
    std::vector<std::string> bad{""};
    EXPECT_THROW(embed(e, bad), Error);
    EXPECT_NO_THROW(embed_one(e, "!!!"));
}

// ---------------------------------------------------------------------------
// OpenAI-compatible transport against a local server.

class LocalServer {
public:
    LocalServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

TEST(OpenAI, ParseEndpoint) {
    auto e = parse_endpoint("https://api.example.com/v1/");
    EXPECT_EQ(e.origin, "https://api.example.com");
    EXPECT_EQ(e.base_path, "/v1");
    EXPECT_EQ(parse_endpoint("http://h:8080").base_path, "");
    EXPECT_THROW(parse_endpoint("h:8080/v1"), ConfigError);
}

TEST(OpenAI, ChatRoundTripWithRetryOn503) {
    LocalServer srv;
    std::atomic<int> hits{0};
    Json seen;
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits++ == 0) {
            res.status = 503;
            return;
        }
        seen = Json::parse(req.body);
        EXPECT_EQ(req.get_header_value("Authorization"), "Bearer k");
        Json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}},
                   {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}};
        res.set_content(reply.dump(), "application/json");
    });
    auto t = std::make_shared<OpenAIChatTransport>(parse_endpoint(srv.url()), "k", 5s);
    Recorder rec;
    ChatGateway gw("optimizer", cfg(2, 1ms), t, std::make_shared<UsageLedger>(), rec.sleeper(), frozen_clock());
    auto ex = gw.chat({{"user", "ping"}});
    EXPECT_EQ(ex.response, "pong");
    EXPECT_EQ(ex.attempts, 2);
    EXPECT_EQ(ex.usage.prompt_tokens, 11);
    EXPECT_EQ(ex.usage.completion_tokens, 3);
    EXPECT_EQ(seen.at("model"), "stub");
    EXPECT_EQ(seen.at("messages").at(0).at("content"), "ping");
}

TEST(OpenAI, ClientErrorIsARejection) {
    LocalServer srv;
    std::atomic<int> hits{0};
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 401;
    });
    auto t = std::make_shared<OpenAIChatTransport>(parse_endpoint(srv.url()), "", 5s);
    ChatGateway gw("parser", cfg(3, 1ms), t, std::make_shared<UsageLedger>(), [](Millis) {}, frozen_clock());
    EXPECT_THROW(gw.chat({{"user", "x"}}), TransportError);
    EXPECT_EQ(hits.load(), 1);
}

TEST(OpenAI, EmbeddingsFollowIndexField) {
    LocalServer srv;
    srv.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        Json reply{{"data", {{{"index", 1}, {"embedding", {0.0, 2.0}}}, {{"index", 0}, {"embedding", {1.0, 0.0}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    OpenAIEmbedder e(parse_endpoint(srv.url()), "", cfg(0));
    std::vector<std::string> texts{"a", "b"};
    auto v = embed(e, texts);
    EXPECT_EQ(v[0].values, (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(v[1].values, (std::vector<double>{0.0, 1.0}));
}
