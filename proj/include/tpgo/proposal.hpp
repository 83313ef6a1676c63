#pragma once

// Optimization proposals: the optimizer's machine-readable edit plan, its
// document form, lowering onto graph edits, and atomic application.

#include <string>
#include <vector>

#include "tpgo/edit.hpp"

namespace tpgo {

namespace op {
inline constexpr const char* kRewriteNode = "REWRITE_NODE";
inline constexpr const char* kAddNode = "ADD_NODE";
inline constexpr const char* kDeleteNode = "DELETE_NODE";
inline constexpr const char* kAddEdge = "ADD_EDGE";
inline constexpr const char* kPruneEdge = "PRUNE_EDGE";
}  // namespace op

struct EdgeRef {
    NodeId from;
    NodeId to;
    bool operator==(const EdgeRef&) const = default;
};

struct Modification {
    std::string operation;
    std::optional<NodeId> target;        // rewrite/delete target, or add-node parent
    std::optional<EdgeRef> edge;         // add/prune edge endpoints
    std::optional<std::size_t> position;  // add-node insertion index
    std::optional<NodeSubtree> new_node;
    std::optional<std::string> new_content;
    std::string edge_label;
    std::vector<int> addresses_errors;
    std::string rationale;

    bool operator==(const Modification&) const = default;
};

struct OptimizationProposal {
    std::string problem_context;
    std::vector<Modification> modifications;

    bool operator==(const OptimizationProposal&) const = default;
};

struct LowerOptions {
    // Ablation: only REWRITE_NODE survives lowering.
    bool rewrite_only = false;
};

// One GraphEdit per modification, order preserved. Throws EditError for an
// unknown or malformed operation.
inline std::vector<GraphEdit> lower(const OptimizationProposal& p, LowerOptions opts = {}) {
    std::vector<GraphEdit> edits;
    edits.reserve(p.modifications.size());
    for (std::size_t i = 0; i < p.modifications.size(); ++i) {
        const auto& m = p.modifications[i];
        auto need_target = [&]() -> const NodeId& {
            if (!m.target) throw EditError(i, m.operation + " needs a node target");
            return *m.target;
        };
        auto need_edge = [&]() -> const EdgeRef& {
            if (!m.edge) throw EditError(i, m.operation + " needs an edge target");
            return *m.edge;
        };
        if (opts.rewrite_only && m.operation != op::kRewriteNode)
            throw EditError(i, m.operation + " is disabled; only REWRITE_NODE is allowed");

        if (m.operation == op::kRewriteNode) {
            if (!m.new_content) throw EditError(i, "REWRITE_NODE needs new_content");
            edits.emplace_back(RewriteNode{need_target(), *m.new_content});
        } else if (m.operation == op::kAddNode) {
            if (!m.new_node) throw EditError(i, "ADD_NODE needs new_node");
            edits.emplace_back(AddNode{m.target, m.position, *m.new_node});
        } else if (m.operation == op::kDeleteNode) {
            edits.emplace_back(DeleteNode{need_target()});
        } else if (m.operation == op::kAddEdge) {
            const auto& e = need_edge();
            edits.emplace_back(AddEdge{e.from, e.to, m.edge_label});
        } else if (m.operation == op::kPruneEdge) {
            const auto& e = need_edge();
            edits.emplace_back(PruneEdge{e.from, e.to});
        } else {
            throw EditError(i, "unknown operation \"" + m.operation + "\"");
        }
    }
    return edits;
}

// G' = G (+) proposal. All-or-nothing; the input graph is never touched.
inline TextualParameterGraph apply_proposal(const TextualParameterGraph& g, const OptimizationProposal& p,
                                            LowerOptions opts = {}) {
    if (p.modifications.empty()) throw EditError(0, "proposal has no modifications");
    auto edits = lower(p, opts);
    return apply_edits(g, edits);
}

// Throws EditError if any addresses_errors index falls outside [0, cluster_size).
inline void check_error_indices(const OptimizationProposal& p, std::size_t cluster_size) {
    for (std::size_t i = 0; i < p.modifications.size(); ++i)
        for (int e : p.modifications[i].addresses_errors)
            if (e < 0 || static_cast<std::size_t>(e) >= cluster_size)
                throw EditError(i, "addresses_errors index " + std::to_string(e) + " outside cluster of " +
                                       std::to_string(cluster_size));
}

// ---------------------------------------------------------------------------
// Document form, field-for-field with the optimizer's output contract:
//   {"problem_context": str, "modifications": [{"operation", "target",
//    "new_node", "new_content", "addresses_errors", "rationale"}]}
// Targets: a node id string, {"node": id}, {"parent": id, "position": n},
// or {"from": a, "to": b, "label": l} for edge operations.

inline Json subtree_to_json(const NodeSubtree& t) {
    GraphData g;
    g.nodes = t.nodes;
    return node_to_json(g, t.root);
}

inline Json to_json(const Modification& m) {
    Json j;
    j["operation"] = m.operation;
    Json target = Json::object();
    if (m.edge) {
        target["from"] = m.edge->from.value;
        target["to"] = m.edge->to.value;
        if (!m.edge_label.empty()) target["label"] = m.edge_label;
    } else if (m.operation == op::kAddNode) {
        target["parent"] = m.target ? Json(m.target->value) : Json(nullptr);
        if (m.position) target["position"] = *m.position;
    } else if (m.target) {
        target["node"] = m.target->value;
    }
    j["target"] = std::move(target);
    if (m.new_node) j["new_node"] = subtree_to_json(*m.new_node);
    if (m.new_content) j["new_content"] = *m.new_content;
    j["addresses_errors"] = m.addresses_errors;
    j["rationale"] = m.rationale;
    return j;
}

inline Json to_json(const OptimizationProposal& p) {
    Json mods = Json::array();
    for (const auto& m : p.modifications) mods.push_back(to_json(m));
    return Json{{"problem_context", p.problem_context}, {"modifications", std::move(mods)}};
}

namespace detail {

inline NodeId read_id(const Json& j, const std::string& where) {
    if (!j.is_string() || j.get<std::string>().empty()) throw SchemaError("target", where + " must be a non-empty id");
    return NodeId(j.get<std::string>());
}

inline Modification read_modification(const Json& j, std::size_t index, const std::string& id_prefix) {
    std::string where = "modification " + std::to_string(index);
    if (!j.is_object()) throw SchemaError("modification-object", where + " is not an object");
    Modification m;
    m.operation = require_string(j, "operation", where);

    const Json target = j.contains("target") ? j.at("target") : Json();
    bool edge_op = m.operation == op::kAddEdge || m.operation == op::kPruneEdge;
    if (edge_op) {
        if (target.is_object() && target.contains("from") && target.contains("to")) {
            m.edge = EdgeRef{read_id(target.at("from"), where + " target.from"), read_id(target.at("to"), where + " target.to")};
            if (target.contains("label")) m.edge_label = require_string(target, "label", where + " target");
        } else if (target.is_array() && target.size() == 2) {
            m.edge = EdgeRef{read_id(target[0], where + " target[0]"), read_id(target[1], where + " target[1]")};
        } else {
            throw SchemaError("target", where + " needs an edge target {from, to}");
        }
    } else if (m.operation == op::kAddNode) {
        if (target.is_string()) {
            m.target = read_id(target, where + " target");
        } else if (target.is_object()) {
            if (target.contains("parent") && !target.at("parent").is_null())
                m.target = read_id(target.at("parent"), where + " target.parent");
            if (target.contains("position")) {
                if (!target.at("position").is_number_unsigned())
                    throw SchemaError("target", where + " target.position must be a non-negative integer");
                m.position = target.at("position").get<std::size_t>();
            }
        } else if (!target.is_null()) {
            throw SchemaError("target", where + " has a malformed ADD_NODE target");
        }
    } else {
        if (target.is_string()) m.target = read_id(target, where + " target");
        else if (target.is_object() && target.contains("node")) m.target = read_id(target.at("node"), where + " target.node");
        else if (target.is_object() && target.contains("id")) m.target = read_id(target.at("id"), where + " target.id");
        else throw SchemaError("target", where + " needs a node target");
    }

    bool has_node = j.contains("new_node") && !j.at("new_node").is_null();
    bool has_content = j.contains("new_content") && !j.at("new_content").is_null();
    if (has_node && has_content)
        throw SchemaError("new-node-xor-content", where + " carries both new_node and new_content");
    if (has_node) {
        IdAssigner ids{id_prefix + ".m" + std::to_string(index), 0};
        auto [root, frag] = subtree_from_json(j.at("new_node"), &ids);
        m.new_node = NodeSubtree{root, std::move(frag.nodes)};
    }
    if (has_content) m.new_content = require_string(j, "new_content", where);

    if (m.operation == op::kRewriteNode && !m.new_content)
        throw SchemaError("missing-field", where + " REWRITE_NODE lacks \"new_content\"");
    if (m.operation == op::kAddNode && !m.new_node)
        throw SchemaError("missing-field", where + " ADD_NODE lacks \"new_node\"");

    if (j.contains("addresses_errors")) {
        const auto& ae = j.at("addresses_errors");
        if (!ae.is_array()) throw SchemaError("field-type", where + " addresses_errors must be an array");
        for (const auto& v : ae) {
            if (!v.is_number_integer()) throw SchemaError("field-type", where + " addresses_errors must hold integers");
            m.addresses_errors.push_back(v.get<int>());
        }
    }
    if (j.contains("rationale")) m.rationale = require_string(j, "rationale", where);
    return m;
}

}  // namespace detail

// Nodes inside new_node that arrive without an id get "<id_prefix>.m<i>.<n>".
// Unknown operation names parse; lower() rejects them.
inline OptimizationProposal proposal_from_json(const Json& j, const std::string& id_prefix = "new") {
    if (!j.is_object()) throw SchemaError("document-object", "proposal must be an object");
    OptimizationProposal p;
    p.problem_context = detail::require_string(j, "problem_context", "proposal");
    if (!j.contains("modifications") || !j.at("modifications").is_array())
        throw SchemaError("missing-field", "proposal lacks a \"modifications\" array");
    const auto& mods = j.at("modifications");
    if (mods.empty()) throw SchemaError("modifications-nonempty", "proposal has no modifications");
    for (std::size_t i = 0; i < mods.size(); ++i) p.modifications.push_back(detail::read_modification(mods[i], i, id_prefix));
    return p;
}

inline OptimizationProposal parse_proposal(std::string_view raw, const std::string& id_prefix = "new") {
    auto body = extract_json_object(raw);
    if (!body) throw SchemaError("well-formed", "no JSON object in proposal text");
    Json j;
    try {
        j = Json::parse(*body);
    } catch (const Json::parse_error& e) {
        throw SchemaError("well-formed", e.what());
    }
    return proposal_from_json(j, id_prefix);
}

}  // namespace tpgo
