#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tpgo/diff.hpp"
#include "tpgo/proposal.hpp"

using namespace tpgo;

namespace {

TextualParameterGraph base() {
    GraphData d;
    d.roots = {NodeId("m.0")};
    d.nodes.emplace(NodeId("m.0"), PromptNode{NodeId("m.0"), "Main", NodeKind::generic, {}, {NodeId("m.1"), NodeId("m.2")}});
    d.nodes.emplace(NodeId("m.1"), PromptNode{NodeId("m.1"), "Role", NodeKind::role, "Be precise.", {}});
    d.nodes.emplace(NodeId("m.2"), PromptNode{NodeId("m.2"), "Steps", NodeKind::logic, {}, {NodeId("m.3")}});
    d.nodes.emplace(NodeId("m.3"), PromptNode{NodeId("m.3"), "One", NodeKind::logic, "Plan first.", {}});
    d.edges.insert(Edge{NodeId("m.3"), NodeId("m.1"), "informs"});
    return TextualParameterGraph::make(d);
}

NodeSubtree leaf(const std::string& id, const std::string& text) {
    NodeSubtree t{NodeId(id), {}};
    t.nodes.emplace(NodeId(id), PromptNode{NodeId(id), "New", NodeKind::logic, text, {}});
    return t;
}

std::size_t failing_index(const TextualParameterGraph& g, const std::vector<GraphEdit>& edits) {
    try {
        apply_edits(g, edits);
    } catch (const EditError& e) {
        return e.index();
    }
    return SIZE_MAX;
}

}  // namespace

TEST(Edit, RewriteLeaf) {
    auto g = apply_edit(base(), RewriteNode{NodeId("m.3"), "Plan, then act."});
    EXPECT_EQ(g.node(NodeId("m.3")).content, "Plan, then act.");
    EXPECT_EQ(g.version(), 1);
}

TEST(Edit, AddNodeAtPositionAndAsRoot) {
    auto g = apply_edit(base(), AddNode{NodeId("m.2"), 0, leaf("n.1", "Check inputs.")});
    EXPECT_EQ(g.node(NodeId("m.2")).children.front(), NodeId("n.1"));
    auto r = apply_edit(base(), AddNode{std::nullopt, std::nullopt, leaf("n.2", "Extra root.")});
    EXPECT_EQ(r.roots().back(), NodeId("n.2"));
}

TEST(Edit, DeleteRemovesSubtreeAndIncidentEdges) {
    auto g = apply_edit(base(), DeleteNode{NodeId("m.2")});
    EXPECT_FALSE(g.contains(NodeId("m.3")));
    EXPECT_TRUE(g.edges().empty());
}

TEST(Edit, EdgeOperations) {
    auto g = apply_edit(base(), AddEdge{NodeId("m.1"), NodeId("m.3"), "guards"});
    EXPECT_EQ(g.edges().size(), 2u);
    auto p = apply_edit(g, PruneEdge{NodeId("m.3"), NodeId("m.1")});
    EXPECT_EQ(p.edges().size(), 1u);
    EXPECT_EQ(p.edges().begin()->label, "guards");
}

TEST(Edit, PreconditionsNameTheFailingEdit) {
    auto g = base();
    RewriteNode ok{NodeId("m.1"), "fine"};
    EXPECT_EQ(failing_index(g, {ok, RewriteNode{NodeId("zz"), "x"}}), 1u);
    EXPECT_EQ(failing_index(g, {RewriteNode{NodeId("m.2"), "x"}}), 0u);  // internal
    EXPECT_EQ(failing_index(g, {ok, ok, RewriteNode{NodeId("m.1"), ""}}), 2u);
    EXPECT_EQ(failing_index(g, {AddNode{NodeId("m.1"), {}, leaf("n", "x")}}), 0u);  // under a leaf
    EXPECT_EQ(failing_index(g, {AddNode{NodeId("m.2"), 5, leaf("n", "x")}}), 0u);  // position
    EXPECT_EQ(failing_index(g, {AddNode{NodeId("m.2"), {}, leaf("m.1", "x")}}), 0u);  // id exists
    EXPECT_EQ(failing_index(g, {AddNode{NodeId("q"), {}, leaf("n", "x")}}), 0u);
    EXPECT_EQ(failing_index(g, {DeleteNode{NodeId("q")}}), 0u);
    EXPECT_EQ(failing_index(g, {AddEdge{NodeId("m.1"), NodeId("m.1"), ""}}), 0u);
    EXPECT_EQ(failing_index(g, {AddEdge{NodeId("m.3"), NodeId("m.1"), ""}}), 0u);  // duplicate
    EXPECT_EQ(failing_index(g, {PruneEdge{NodeId("m.1"), NodeId("m.3")}}), 0u);
    // deleting the only child leaves an internal node with neither content nor children
    EXPECT_EQ(failing_index(g, {ok, DeleteNode{NodeId("m.3")}}), 1u);
    // deleting the only root empties the forest
    EXPECT_EQ(failing_index(g, {DeleteNode{NodeId("m.0")}}), 0u);
}

TEST(Edit, LaterEditsSeeEarlierOnes) {
    auto g = apply_edits(base(), std::vector<GraphEdit>{AddNode{NodeId("m.2"), {}, leaf("n.1", "a")},
                                                       RewriteNode{NodeId("n.1"), "b"},
                                                       AddEdge{NodeId("n.1"), NodeId("m.1"), ""}});
    EXPECT_EQ(g.node(NodeId("n.1")).content, "b");
    EXPECT_EQ(g.version(), 1);
}

// 200 proposals built from valid random edit sequences, then one modification
// corrupted. Every one must fail and leave the input untouched.
TEST(Edit, CorruptedProposalsNeverApplyPartially) {
    std::mt19937_64 rng(2024);
    int rejected = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto g = test::random_graph(rng, "c" + std::to_string(trial));
        const std::string before = serialize(g);

        OptimizationProposal p{"ctx", {}};
        auto cur = g;
        int n = 1 + static_cast<int>(rng() % 5);
        for (int i = 0; i < n; ++i) {
            auto e = test::random_valid_edit(rng, cur, "f" + std::to_string(trial) + "_" + std::to_string(i));
            cur = apply_edit(cur, e);
            p.modifications.push_back(test::to_modification(e));
        }
        ASSERT_NO_THROW(apply_proposal(g, p)) << trial;

        std::size_t victim = rng() % p.modifications.size();
        auto& m = p.modifications[victim];
        switch (rng() % 6) {
        case 0: m.operation = "MERGE_NODES"; break;
        case 1: m.operation = op::kRewriteNode; m.target = NodeId("missing"); m.new_content = "x"; m.new_node.reset(); break;
        case 2: m.operation = op::kAddNode; m.target = NodeId("missing"); m.new_node = leaf("zz" + std::to_string(trial), "x"); break;
        case 3: m.operation = op::kAddNode; m.target.reset(); m.position = 999; m.new_node = leaf("zz" + std::to_string(trial), "x"); break;
        case 4: m.operation = op::kAddEdge; m.edge = EdgeRef{NodeId("nope"), g.roots().front()}; break;
        case 5: m.operation = op::kPruneEdge; m.edge = EdgeRef{NodeId("nope"), NodeId("nada")}; break;
        }
        try {
            apply_proposal(g, p);
            ADD_FAILURE() << "corrupted proposal applied in trial " << trial;
        } catch (const EditError& e) {
            ++rejected;
            EXPECT_EQ(e.index(), victim) << trial;
        }
        EXPECT_EQ(serialize(g), before);
    }
    EXPECT_EQ(rejected, 200);
}

// diff(before, after) applied to before reproduces after, for 100 random
// edit sequences.
TEST(Diff, ReproducesRandomEditSequences) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        auto before = test::random_graph(rng, "d" + std::to_string(trial));
        auto after = before;
        int n = 1 + static_cast<int>(rng() % 8);
        for (int i = 0; i < n; ++i)
            after = apply_edit(after, test::random_valid_edit(rng, after, "e" + std::to_string(trial) + "_" + std::to_string(i)));
        auto edits = diff(before, after);
        auto rebuilt = apply_edits(before, edits);
        EXPECT_TRUE(test::same_structure(rebuilt, after)) << "trial " << trial;
        EXPECT_EQ(materialize_all(rebuilt), materialize_all(after));
    }
}

TEST(Diff, IdenticalGraphsNeedNoEdits) {
    auto g = base();
    EXPECT_TRUE(diff(g, g).empty());
}

TEST(Diff, SingleRewriteIsMinimal) {
    auto g = base();
    auto h = apply_edit(g, RewriteNode{NodeId("m.1"), "Be brief."});
    auto edits = diff(g, h);
    ASSERT_EQ(edits.size(), 1u);
    EXPECT_EQ(std::get<RewriteNode>(edits[0]).new_content, "Be brief.");
}
