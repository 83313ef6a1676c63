#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tpgo/graph.hpp"

using namespace tpgo;
namespace fs = std::filesystem;

namespace {

GraphData tiny() {
    GraphData d;
    d.roots = {NodeId("a.0")};
    d.nodes.emplace(NodeId("a.0"), PromptNode{NodeId("a.0"), "Agent", NodeKind::generic, {}, {NodeId("a.1"), NodeId("a.2")}});
    d.nodes.emplace(NodeId("a.1"), PromptNode{NodeId("a.1"), "Role", NodeKind::role, "You are a planner.", {}});
    d.nodes.emplace(NodeId("a.2"), PromptNode{NodeId("a.2"), "Steps", NodeKind::logic, {}, {NodeId("a.3")}});
    d.nodes.emplace(NodeId("a.3"), PromptNode{NodeId("a.3"), "First", NodeKind::logic, "Read the task.", {}});
    return d;
}

std::string rule_of(const GraphData& d) {
    try {
        validate(d);
    } catch (const SchemaError& e) {
        return e.rule();
    }
    return "ok";
}

std::vector<fs::path> corpus() {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(test::source_dir() / "tests/fixtures/graphs")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST(Graph, ValidGraphPasses) { EXPECT_EQ(rule_of(tiny()), "ok"); }

TEST(Graph, ValidationRules) {
    {
        GraphData d = tiny();
        d.roots.clear();
        EXPECT_EQ(rule_of(d), "roots-nonempty");
    }
    {
        GraphData d = tiny();
        d.nodes.at(NodeId("a.1")).children.push_back(NodeId("a.3"));
        EXPECT_EQ(rule_of(d), "leaf-xor-internal");
    }
    {
        GraphData d = tiny();
        d.nodes.at(NodeId("a.1")).content.clear();
        EXPECT_EQ(rule_of(d), "leaf-xor-internal");
    }
    {
        GraphData d = tiny();
        d.nodes.at(NodeId("a.2")).children.push_back(NodeId("zz"));
        EXPECT_EQ(rule_of(d), "dangling-child");
    }
    {
        GraphData d = tiny();
        d.nodes.at(NodeId("a.0")).children.push_back(NodeId("a.3"));
        EXPECT_EQ(rule_of(d), "multiple-parents");
    }
    {
        GraphData d = tiny();
        d.roots.push_back(NodeId("a.3"));
        EXPECT_EQ(rule_of(d), "root-has-parent");
    }
    {
        GraphData d = tiny();
        d.roots.push_back(NodeId("a.0"));
        EXPECT_EQ(rule_of(d), "duplicate-root");
    }
    {
        GraphData d = tiny();
        d.nodes.emplace(NodeId("x"), PromptNode{NodeId("x"), "", NodeKind::generic, "orphan", {}});
        EXPECT_EQ(rule_of(d), "unreachable-node");
    }
    {
        GraphData d = tiny();
        d.nodes.emplace(NodeId("c1"), PromptNode{NodeId("c1"), "", NodeKind::generic, {}, {NodeId("c2")}});
        d.nodes.emplace(NodeId("c2"), PromptNode{NodeId("c2"), "", NodeKind::generic, {}, {NodeId("c1")}});
        EXPECT_EQ(rule_of(d), "containment-cycle");
    }
    {
        GraphData d = tiny();
        d.edges.insert(Edge{NodeId("a.1"), NodeId("nope"), ""});
        EXPECT_EQ(rule_of(d), "dangling-edge");
    }
    {
        GraphData d = tiny();
        d.edges.insert(Edge{NodeId("a.1"), NodeId("a.1"), ""});
        EXPECT_EQ(rule_of(d), "self-loop");
    }
    {
        GraphData d = tiny();
        d.nodes.emplace(NodeId("k"), PromptNode{NodeId("j"), "", NodeKind::generic, "x", {}});
        EXPECT_EQ(rule_of(d), "id-mismatch");
    }
}

TEST(Graph, EdgesMayCrossTheContainmentForest) {
    GraphData d = tiny();
    d.edges.insert(Edge{NodeId("a.3"), NodeId("a.1"), "informs"});
    d.edges.insert(Edge{NodeId("a.1"), NodeId("a.3"), ""});  // dependency cycles are allowed
    EXPECT_EQ(rule_of(d), "ok");
}

TEST(Graph, MaterializeUsesDepthHeadingsAndVerbatimLeaves) {
    auto g = TextualParameterGraph::make(tiny());
    EXPECT_EQ(materialize(g, NodeId("a.0")), "# Agent\nYou are a planner.\n## Steps\nRead the task.");
    EXPECT_THROW(materialize(g, NodeId("a.2")), NotFoundError);
}

TEST(Graph, MaterializeSingleLeafRootIsItsContent) {
    GraphData d;
    d.roots = {NodeId("r")};
    d.nodes.emplace(NodeId("r"), PromptNode{NodeId("r"), "ignored", NodeKind::generic, "# literal\nline", {}});
    EXPECT_EQ(materialize(TextualParameterGraph::make(d), NodeId("r")), "# literal\nline");
}

TEST(Graph, MaterializeAllFollowsRootOrder) {
    GraphData d = tiny();
    d.roots.insert(d.roots.begin(), NodeId("b"));
    d.nodes.emplace(NodeId("b"), PromptNode{NodeId("b"), "", NodeKind::generic, "first", {}});
    auto cfg = materialize_all(TextualParameterGraph::make(d));
    ASSERT_EQ(cfg.size(), 2u);
    EXPECT_EQ(cfg[0].root, NodeId("b"));
    EXPECT_EQ(concatenate(cfg), "first\n\n# Agent\nYou are a planner.\n## Steps\nRead the task.");
}

TEST(Graph, FlattenKeepsOneLeafPerRoot) {
    auto g = TextualParameterGraph::make(tiny());
    auto f = flatten(g);
    ASSERT_EQ(f.nodes().size(), 1u);
    EXPECT_EQ(materialize(f, f.roots().front()), materialize(g, NodeId("a.0")));
}

TEST(Graph, CorpusHasTwentyGraphs) { EXPECT_EQ(corpus().size(), 20u); }

TEST(Graph, CorpusRoundTripsByteForByte) {
    for (const auto& p : corpus()) {
        std::string text = read_file(p.string());
        auto g = deserialize(text);
        EXPECT_EQ(serialize(g), text) << p;
        EXPECT_EQ(deserialize(serialize(g)), g) << p;
        for (const auto& r : g.roots()) EXPECT_FALSE(materialize(g, r).empty());
    }
}

TEST(Graph, RandomGraphsRoundTrip) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
        auto g = test::random_graph(rng, "r" + std::to_string(i));
        auto back = deserialize(serialize(g));
        EXPECT_EQ(back, g);
        EXPECT_EQ(graph_hash(back), graph_hash(g));
    }
}

TEST(Graph, DeserializeRejectsBadDocuments) {
    auto rule = [](const std::string& text) {
        try {
            deserialize(text);
        } catch (const SchemaError& e) {
            return e.rule();
        }
        return std::string("ok");
    };
    EXPECT_EQ(rule("not json"), "well-formed");
    EXPECT_EQ(rule(R"({"schema":"other/v9","roots":[]})"), "schema-id");
    EXPECT_EQ(rule(R"({"roots":[{"id":"a","type":"wizard","content":"x"}]})"), "node-type");
    EXPECT_EQ(rule(R"({"roots":[{"id":"a","content":"x","children":[{"id":"b","content":"y"}]}]})"), "leaf-xor-internal");
    EXPECT_EQ(rule(R"({"roots":[{"id":"a","content":"x"},{"id":"a","content":"y"}]})"), "duplicate-id");
    EXPECT_EQ(rule(R"({"roots":[{"content":"x"}]})"), "missing-field");
    EXPECT_EQ(rule(R"({"roots":[{"id":"a","content":"x"},{"id":"b","content":"y"}],
                       "edges":[{"from":"a","to":"b"},{"from":"a","to":"b","label":"z"}]})"),
              "duplicate-edge");
    EXPECT_EQ(rule(R"({"roots":[{"id":"a","content":"x"}],"edges":[{"from":"a","to":"q"}]})"), "dangling-edge");
    EXPECT_EQ(rule(R"({"roots":[]})"), "roots-nonempty");
}

TEST(Graph, NodeKindNames) {
    for (auto k : {NodeKind::role, NodeKind::logic, NodeKind::tool, NodeKind::generic})
        EXPECT_EQ(parse_node_kind(to_string(k)), k);
    EXPECT_FALSE(parse_node_kind("ROLE").has_value());
}
