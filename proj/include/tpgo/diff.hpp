#pragma once

#include <set>
#include <vector>

#include "tpgo/edit.hpp"

namespace tpgo {

namespace detail {

struct DiffState {
    const GraphData& before;
    const GraphData& after;
    std::set<NodeId> kept;
    // (parent or nullopt for the root list) in visiting order
    std::vector<std::optional<NodeId>> kept_parents;
};

inline bool same_shape(const PromptNode& a, const PromptNode& b) {
    return a.title == b.title && a.kind == b.kind && a.is_leaf() == b.is_leaf();
}

// Marks the after-siblings that can stay in place. A candidate must exist under
// the same parent in `before` with the same title, kind and leaf-ness, and the
// kept set must preserve before-order (greedy increasing subsequence).
inline void mark_kept(DiffState& s, const std::vector<NodeId>& before_sibs, const std::vector<NodeId>& after_sibs,
                      const std::optional<NodeId>& parent) {
    s.kept_parents.push_back(parent);
    std::ptrdiff_t last = -1;
    std::vector<NodeId> recurse;
    for (const auto& c : after_sibs) {
        auto it = std::find(before_sibs.begin(), before_sibs.end(), c);
        if (it == before_sibs.end()) continue;
        if (!same_shape(s.before.nodes.at(c), s.after.nodes.at(c))) continue;
        std::ptrdiff_t pos = it - before_sibs.begin();
        if (pos <= last) continue;
        last = pos;
        s.kept.insert(c);
        recurse.push_back(c);
    }
    for (const auto& c : recurse) {
        const auto& bn = s.before.nodes.at(c);
        if (!bn.is_leaf()) mark_kept(s, bn.children, s.after.nodes.at(c).children, c);
    }
}

}  // namespace detail

// Edit list that turns `before` into `after` (every root materializes equal, and
// the structure matches up to version). Order: prune edges, delete subtrees,
// add subtrees, rewrite leaves, add edges.
inline std::vector<GraphEdit> diff(const TextualParameterGraph& before, const TextualParameterGraph& after) {
    const auto& b = before.data();
    const auto& a = after.data();
    detail::DiffState s{b, a, {}, {}};
    detail::mark_kept(s, b.roots, a.roots, std::nullopt);

    auto children_in = [](const GraphData& g, const std::optional<NodeId>& parent) -> const std::vector<NodeId>& {
        return parent ? g.nodes.at(*parent).children : g.roots;
    };

    std::vector<GraphEdit> edits;

    for (const auto& e : b.edges) {
        if (!s.kept.contains(e.from) || !s.kept.contains(e.to)) continue;
        auto it = a.edges.find(e);
        if (it == a.edges.end() || it->label != e.label) edits.emplace_back(PruneEdge{e.from, e.to});
    }

    for (const auto& parent : s.kept_parents)
        for (const auto& c : children_in(b, parent))
            if (!s.kept.contains(c)) edits.emplace_back(DeleteNode{c});

    for (const auto& parent : s.kept_parents) {
        const auto& kids = children_in(a, parent);
        for (std::size_t i = 0; i < kids.size(); ++i)
            if (!s.kept.contains(kids[i])) edits.emplace_back(AddNode{parent, i, extract_subtree(a, kids[i])});
    }

    for (const auto& id : s.kept) {
        const auto& bn = b.nodes.at(id);
        const auto& an = a.nodes.at(id);
        if (bn.is_leaf() && bn.content != an.content) edits.emplace_back(RewriteNode{id, an.content});
    }

    for (const auto& e : a.edges) {
        auto it = b.edges.find(e);
        bool survives = it != b.edges.end() && it->label == e.label && s.kept.contains(e.from) && s.kept.contains(e.to);
        if (!survives) edits.emplace_back(AddEdge{e.from, e.to, e.label});
    }
    return edits;
}

}  // namespace tpgo
