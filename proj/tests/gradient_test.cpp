#include <gtest/gtest.h>

#include "tpgo/gradient.hpp"
#include "tpgo/sim.hpp"

using namespace tpgo;

namespace {

Trajectory failed(const std::string& id) {
    Trajectory t;
    t.task_id = id;
    t.query = "Question " + id;
    t.steps = {{"agent", StepKind::reasoning, "thinking"}, {"agent", StepKind::tool_call, "search(x)"}};
    t.final_answer = "wrong";
    t.outcome = Outcome::failure;
    return t;
}

ChatGateway gateway(std::shared_ptr<ChatTransport> t) {
    return ChatGateway("reflector", sim::offline_model("stub"), std::move(t), std::make_shared<UsageLedger>(), [](Millis) {},
                       frozen_clock());
}

std::string reply(std::vector<std::string> errors, std::vector<std::string> good = {}) {
    return Json{{"summary", "s"}, {"error_list", errors}, {"experience_list", good}}.dump();
}

}  // namespace

TEST(Reflection, ParseRules) {
    auto g = parse_reflection(R"(```json
{"summary": "x", "error_list": ["a", "b"]}
```)");
    EXPECT_EQ(g.negative, (std::vector<std::string>{"a", "b"}));
    EXPECT_TRUE(g.positive.empty());
    auto rule = [](const std::string& s) {
        try {
            parse_reflection(s);
        } catch (const SchemaError& e) {
            return e.rule();
        }
        return std::string("ok");
    };
    EXPECT_EQ(rule(R"({"error_list": []})"), "summary");
    EXPECT_EQ(rule(R"({"summary": "x"})"), "error_list");
    EXPECT_EQ(rule(R"({"summary": "x", "error_list": [1]})"), "error_list");
    EXPECT_EQ(rule("nothing"), "well-formed");
}

TEST(Reflection, TrajectoryRoundTrip) {
    auto t = failed("t1");
    t.usage = {10, 4, Millis(0)};
    EXPECT_EQ(trajectory_from_json(to_json(t)), t);
    auto none = t;
    none.final_answer.reset();
    EXPECT_EQ(trajectory_from_json(to_json(none)), none);
    EXPECT_NE(render_trajectory(none).find("Final answer: (none)"), std::string::npos);
}

TEST(Reflection, EnvironmentFailuresAreExcludedWithoutACall) {
    auto provider = std::make_shared<sim::ScriptedProvider>();
    auto gw = gateway(provider);
    auto t = failed("t1");
    t.environment_failure = true;
    auto r = reflect(t, std::nullopt, gw);
    EXPECT_TRUE(r.excluded);
    Trajectory empty;
    empty.task_id = "t2";
    EXPECT_TRUE(reflect(empty, std::nullopt, gw).excluded);
    EXPECT_TRUE(provider->calls().empty());
}

TEST(Reflection, RepairsOnceThenSkips) {
    auto provider = std::make_shared<sim::ScriptedProvider>(
        std::vector<sim::ScriptRule>{{"reflector", {}, {"garbage", reply({"missed step"})}}});
    auto gw = gateway(provider);
    auto r = reflect(failed("t1"), std::nullopt, gw);
    ASSERT_TRUE(r.gradient);
    EXPECT_EQ(r.gradient->source_task, "t1");
    EXPECT_EQ(provider->calls().size(), 2u);

    auto bad = std::make_shared<sim::ScriptedProvider>(std::vector<sim::ScriptRule>{{"reflector", {}, {"garbage"}}});
    auto gw2 = gateway(bad);
    auto s = reflect(failed("t1"), std::nullopt, gw2);
    EXPECT_TRUE(s.skipped);
    EXPECT_EQ(bad->calls().size(), 2u);
}

TEST(Reflection, TransportFailureIsASkip) {
    auto gw = gateway(std::make_shared<sim::ScriptedProvider>());
    auto r = reflect(failed("t1"), std::nullopt, gw);
    EXPECT_TRUE(r.skipped);
    EXPECT_FALSE(r.gradient);
}

TEST(Reflection, ImitativeModeDropsLeakedAnswers) {
    auto provider = std::make_shared<sim::ScriptedProvider>(std::vector<sim::ScriptRule>{
        {"reflector", {{"", "never restate"}}, {reply({"The answer was Lisbon.", "Skipped the map lookup."})}}});
    auto gw = gateway(provider);
    auto r = reflect(failed("t1"), std::string("Lisbon"), gw);
    ASSERT_TRUE(r.gradient);
    EXPECT_TRUE(r.leakage);
    EXPECT_EQ(r.gradient->negative, std::vector<std::string>{"Skipped the map lookup."});
}

TEST(Reflection, FailedRunWithoutErrorsIsLowInformation) {
    auto provider = std::make_shared<sim::ScriptedProvider>(std::vector<sim::ScriptRule>{{"reflector", {}, {reply({})}}});
    auto gw = gateway(provider);
    EXPECT_TRUE(reflect(failed("t1"), std::nullopt, gw).low_information);
}

TEST(Reflection, BatchIsSortedAndScheduleIndependent) {
    std::vector<Trajectory> batch;
    for (int i = 9; i >= 0; --i) batch.push_back(failed("t" + std::to_string(i)));
    auto run = [&](std::size_t conc) {
        std::vector<sim::ScriptRule> rules;
        for (int i = 0; i < 10; ++i)
            rules.push_back({"reflector", {{"Task", "Question t" + std::to_string(i)}}, {reply({"err " + std::to_string(i)})}});
        auto gw = gateway(std::make_shared<sim::ScriptedProvider>(rules));
        return reflect_batch(batch, {}, gw, conc);
    };
    auto a = run(1), b = run(8);
    ASSERT_EQ(a.size(), 10u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].task_id, b[i].task_id);
        EXPECT_EQ(a[i].gradient, b[i].gradient);
        if (i) EXPECT_LT(a[i - 1].task_id, a[i].task_id);
    }
    EXPECT_EQ(a[3].gradient->negative.front(), "err 3");
}
