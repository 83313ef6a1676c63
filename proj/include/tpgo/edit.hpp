#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "tpgo/graph.hpp"

namespace tpgo {

// A node plus everything it contains, detached from any graph.
struct NodeSubtree {
    NodeId root;
    std::map<NodeId, PromptNode> nodes;

    const PromptNode& top() const { return nodes.at(root); }
    bool operator==(const NodeSubtree&) const = default;
};

inline NodeSubtree extract_subtree(const GraphData& g, const NodeId& id) {
    NodeSubtree out{id, {}};
    std::vector<NodeId> stack{id};
    while (!stack.empty()) {
        NodeId cur = stack.back();
        stack.pop_back();
        const auto& n = g.nodes.at(cur);
        out.nodes.emplace(cur, n);
        for (const auto& c : n.children) stack.push_back(c);
    }
    return out;
}

struct RewriteNode {
    NodeId target;
    std::string new_content;
    bool operator==(const RewriteNode&) const = default;
};

// `parent` absent means a new root. `position` absent means append.
struct AddNode {
    std::optional<NodeId> parent;
    std::optional<std::size_t> position;
    NodeSubtree node;
    bool operator==(const AddNode&) const = default;
};

struct DeleteNode {
    NodeId target;
    bool operator==(const DeleteNode&) const = default;
};

struct AddEdge {
    NodeId from;
    NodeId to;
    std::string label;
    bool operator==(const AddEdge&) const = default;
};

struct PruneEdge {
    NodeId from;
    NodeId to;
    bool operator==(const PruneEdge&) const = default;
};

using GraphEdit = std::variant<RewriteNode, AddNode, DeleteNode, AddEdge, PruneEdge>;

inline const char* edit_name(const GraphEdit& e) {
    static constexpr const char* names[] = {"REWRITE_NODE", "ADD_NODE", "DELETE_NODE", "ADD_EDGE", "PRUNE_EDGE"};
    return names[e.index()];
}

namespace detail {

inline std::optional<NodeId> parent_of(const GraphData& g, const NodeId& id) {
    for (const auto& [key, node] : g.nodes)
        if (std::find(node.children.begin(), node.children.end(), id) != node.children.end()) return key;
    return std::nullopt;
}

inline void check_fragment(const NodeSubtree& t, std::size_t index) {
    if (!t.nodes.contains(t.root)) throw EditError(index, "new node subtree lacks its top node");
    for (const auto& [key, n] : t.nodes) {
        if (key != n.id) throw EditError(index, "new node subtree has inconsistent id " + key.value);
        if (n.content.empty() == n.children.empty())
            throw EditError(index, "new node " + key.value + " must have exactly one of content or children");
        for (const auto& c : n.children)
            if (!t.nodes.contains(c)) throw EditError(index, "new node " + key.value + " references missing child " + c.value);
    }
}

inline void apply_one(GraphData& g, const GraphEdit& edit, std::size_t index) {
    auto require = [&](const NodeId& id, const char* what) -> PromptNode& {
        auto it = g.nodes.find(id);
        if (it == g.nodes.end()) throw EditError(index, std::string("missing ") + what + " " + id.value);
        return it->second;
    };

    std::visit(
        [&](const auto& e) {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, RewriteNode>) {
                auto& n = require(e.target, "target");
                if (!n.is_leaf()) throw EditError(index, "cannot rewrite internal node " + e.target.value);
                if (e.new_content.empty()) throw EditError(index, "rewrite of " + e.target.value + " has empty content");
                n.content = e.new_content;
            } else if constexpr (std::is_same_v<T, AddNode>) {
                check_fragment(e.node, index);
                for (const auto& [key, n] : e.node.nodes)
                    if (g.nodes.contains(key)) throw EditError(index, "node id " + key.value + " already exists");
                std::vector<NodeId>* siblings = &g.roots;
                if (e.parent) {
                    auto& p = require(*e.parent, "parent");
                    // content, not child count: an internal node emptied earlier in the batch still takes children
                    if (!p.content.empty()) throw EditError(index, "cannot add a node under leaf " + e.parent->value);
                    siblings = &p.children;
                }
                std::size_t pos = e.position.value_or(siblings->size());
                if (pos > siblings->size())
                    throw EditError(index, "position " + std::to_string(pos) + " out of range");
                siblings->insert(siblings->begin() + static_cast<std::ptrdiff_t>(pos), e.node.root);
                for (const auto& [key, n] : e.node.nodes) g.nodes.emplace(key, n);
            } else if constexpr (std::is_same_v<T, DeleteNode>) {
                require(e.target, "target");
                NodeSubtree doomed = extract_subtree(g, e.target);
                if (auto p = parent_of(g, e.target)) {
                    auto& kids = g.nodes.at(*p).children;
                    kids.erase(std::find(kids.begin(), kids.end(), e.target));
                } else {
                    g.roots.erase(std::find(g.roots.begin(), g.roots.end(), e.target));
                }
                for (const auto& [key, n] : doomed.nodes) g.nodes.erase(key);
                std::erase_if(g.edges, [&](const Edge& x) {
                    return doomed.nodes.contains(x.from) || doomed.nodes.contains(x.to);
                });
            } else if constexpr (std::is_same_v<T, AddEdge>) {
                require(e.from, "edge source");
                require(e.to, "edge target");
                if (e.from == e.to) throw EditError(index, "self-loop on " + e.from.value);
                if (!g.edges.insert(Edge{e.from, e.to, e.label}).second)
                    throw EditError(index, "duplicate edge " + e.from.value + " -> " + e.to.value);
            } else if constexpr (std::is_same_v<T, PruneEdge>) {
                auto it = g.edges.find(Edge{e.from, e.to, {}});
                if (it == g.edges.end())
                    throw EditError(index, "no edge " + e.from.value + " -> " + e.to.value);
                g.edges.erase(it);
            }
        },
        edit);
}

}  // namespace detail

// Applies all edits in order, or none. Per-edit preconditions are checked as
// each edit runs; graph invariants are checked once on the result, and a
// violation there is attributed to the last edit. Version advances by one.
inline TextualParameterGraph apply_edits(const TextualParameterGraph& graph, std::span<const GraphEdit> edits) {
    GraphData work = graph.data();
    for (std::size_t i = 0; i < edits.size(); ++i) detail::apply_one(work, edits[i], i);
    work.version = graph.version() + 1;
    try {
        return TextualParameterGraph::make(std::move(work));
    } catch (const SchemaError& e) {
        throw EditError(edits.empty() ? 0 : edits.size() - 1, std::string("result violates ") + e.what());
    }
}

inline TextualParameterGraph apply_edit(const TextualParameterGraph& graph, const GraphEdit& edit) {
    return apply_edits(graph, std::span<const GraphEdit>(&edit, 1));
}

}  // namespace tpgo
