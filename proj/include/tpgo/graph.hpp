#pragma once

// Textual Parameter Graph: an agent system's prompts decomposed into typed nodes.
//
// Containment (each node's ordered `children`) forms a forest with one tree per
// agent prompt. Dependency edges are stored separately and never affect
// materialization; they are context for the optimizer.

#include <algorithm>
#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpgo/common.hpp"

namespace tpgo {

struct NodeId {
    std::string value;

    NodeId() = default;
    explicit NodeId(std::string v) : value(std::move(v)) {}

    bool empty() const noexcept { return value.empty(); }
    auto operator<=>(const NodeId&) const = default;
    bool operator==(const NodeId&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const NodeId& id) { return os << id.value; }

enum class NodeKind { role, logic, tool, generic };

inline const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::role: return "role";
        case NodeKind::logic: return "logic";
        case NodeKind::tool: return "tool";
        case NodeKind::generic: return "generic";
    }
    return "generic";
}

inline std::optional<NodeKind> parse_node_kind(std::string_view s) {
    if (s == "role") return NodeKind::role;
    if (s == "logic") return NodeKind::logic;
    if (s == "tool") return NodeKind::tool;
    if (s == "generic") return NodeKind::generic;
    return std::nullopt;
}

struct PromptNode {
    NodeId id;
    std::string title;
    NodeKind kind = NodeKind::generic;
    std::string content;          // leaf text; empty for internal nodes
    std::vector<NodeId> children;  // ordered; empty for leaves

    bool is_leaf() const noexcept { return children.empty(); }
    bool operator==(const PromptNode&) const = default;
};

struct Edge {
    NodeId from;
    NodeId to;
    std::string label;

    bool operator==(const Edge&) const = default;
};

// Edge identity is the (from, to) pair; labels ride along.
struct EdgeOrder {
    bool operator()(const Edge& a, const Edge& b) const {
        return std::tie(a.from, a.to) < std::tie(b.from, b.to);
    }
};

using EdgeSet = std::set<Edge, EdgeOrder>;

// Raw, unvalidated graph contents. Build one of these, then hand it to
// TextualParameterGraph::make.
struct GraphData {
    std::vector<NodeId> roots;
    std::map<NodeId, PromptNode> nodes;
    EdgeSet edges;
    long version = 0;

    bool operator==(const GraphData&) const = default;
};

// Throws SchemaError naming the first violated rule.
inline void validate(const GraphData& g) {
    if (g.roots.empty()) throw SchemaError("roots-nonempty", "graph has no roots");

    for (const auto& [key, node] : g.nodes) {
        if (key.empty() || node.id.empty()) throw SchemaError("empty-id", "node with empty id");
        if (key != node.id) throw SchemaError("id-mismatch", "table key " + key.value + " holds node " + node.id.value);
        bool has_content = !node.content.empty();
        bool has_children = !node.children.empty();
        if (has_content == has_children)
            throw SchemaError("leaf-xor-internal",
                              "node " + key.value + " must have exactly one of content or children");
    }

    std::map<NodeId, NodeId> parent;
    for (const auto& [key, node] : g.nodes) {
        for (const auto& c : node.children) {
            if (!g.nodes.contains(c))
                throw SchemaError("dangling-child", "node " + key.value + " references missing child " + c.value);
            auto [it, inserted] = parent.emplace(c, key);
            if (!inserted) throw SchemaError("multiple-parents", "node " + c.value + " has more than one parent");
        }
    }

    std::set<NodeId> seen_roots;
    for (const auto& r : g.roots) {
        if (!g.nodes.contains(r)) throw SchemaError("unknown-root", "root " + r.value + " is not in the node table");
        if (!seen_roots.insert(r).second) throw SchemaError("duplicate-root", "root " + r.value + " listed twice");
        if (parent.contains(r)) throw SchemaError("root-has-parent", "root " + r.value + " is contained by another node");
    }

    std::set<NodeId> reached;
    std::vector<NodeId> stack(g.roots.rbegin(), g.roots.rend());
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        if (!reached.insert(id).second) continue;
        const auto& node = g.nodes.at(id);
        for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) stack.push_back(*it);
    }
    for (const auto& [key, node] : g.nodes) {
        if (reached.contains(key)) continue;
        std::set<NodeId> walk{key};
        NodeId cur = key;
        while (parent.contains(cur)) {
            cur = parent.at(cur);
            if (!walk.insert(cur).second) throw SchemaError("containment-cycle", "cycle through node " + key.value);
        }
        throw SchemaError("unreachable-node", "node " + key.value + " is not reachable from any root");
    }

    for (const auto& e : g.edges) {
        if (!g.nodes.contains(e.from) || !g.nodes.contains(e.to))
            throw SchemaError("dangling-edge", "edge " + e.from.value + " -> " + e.to.value + " has a missing endpoint");
        if (e.from == e.to) throw SchemaError("self-loop", "edge on " + e.from.value + " is a self-loop");
    }
}

class TextualParameterGraph {
public:
    // Validates; throws SchemaError.
    static TextualParameterGraph make(GraphData data) {
        validate(data);
        return TextualParameterGraph(std::move(data));
    }

    const GraphData& data() const noexcept { return data_; }
    const std::vector<NodeId>& roots() const noexcept { return data_.roots; }
    const std::map<NodeId, PromptNode>& nodes() const noexcept { return data_.nodes; }
    const EdgeSet& edges() const noexcept { return data_.edges; }
    long version() const noexcept { return data_.version; }

    bool contains(const NodeId& id) const { return data_.nodes.contains(id); }

    const PromptNode& node(const NodeId& id) const {
        auto it = data_.nodes.find(id);
        if (it == data_.nodes.end()) throw NotFoundError("no node " + id.value);
        return it->second;
    }

    bool is_root(const NodeId& id) const {
        return std::find(data_.roots.begin(), data_.roots.end(), id) != data_.roots.end();
    }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(
            std::count_if(data_.nodes.begin(), data_.nodes.end(), [](const auto& kv) { return kv.second.is_leaf(); }));
    }

    bool operator==(const TextualParameterGraph&) const = default;

private:
    explicit TextualParameterGraph(GraphData d) : data_(std::move(d)) {}
    GraphData data_;
};

// ---------------------------------------------------------------------------
// Materialization

inline constexpr char kHeadingMarker = '#';

namespace detail {
inline void materialize_into(const TextualParameterGraph& g, const NodeId& id, int depth,
                             std::vector<std::string>& parts) {
    const auto& node = g.node(id);
    if (node.is_leaf()) {
        parts.push_back(node.content);
        return;
    }
    parts.push_back(std::string(static_cast<std::size_t>(depth), kHeadingMarker) + " " + node.title);
    for (const auto& c : node.children) materialize_into(g, c, depth + 1, parts);
}
}  // namespace detail

// Depth-first, child order. Internal nodes at depth d (roots are depth 1) emit
// "<d markers> <title>"; leaves emit their content verbatim. Parts are joined by '\n'.
inline std::string materialize(const TextualParameterGraph& g, const NodeId& root) {
    if (!g.is_root(root)) throw NotFoundError("no root " + root.value);
    std::vector<std::string> parts;
    detail::materialize_into(g, root, 1, parts);
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += '\n';
        out += parts[i];
    }
    return out;
}

struct MaterializedPrompt {
    NodeId root;
    std::string text;
    bool operator==(const MaterializedPrompt&) const = default;
};

using MaterializedConfig = std::vector<MaterializedPrompt>;

inline MaterializedConfig materialize_all(const TextualParameterGraph& g) {
    MaterializedConfig out;
    for (const auto& r : g.roots()) out.push_back({r, materialize(g, r)});
    return out;
}

inline std::string concatenate(const MaterializedConfig& cfg) {
    std::string out;
    for (const auto& p : cfg) {
        if (!out.empty()) out += "\n\n";
        out += p.text;
    }
    return out;
}

// Replaces every root with a single generic leaf holding its materialized text.
// Used by the whole-prompt ablation, where the optimizer only sees flat prompts.
inline TextualParameterGraph flatten(const TextualParameterGraph& g) {
    GraphData d;
    d.version = g.version();
    for (const auto& r : g.roots()) {
        PromptNode leaf{r, g.node(r).title, NodeKind::generic, materialize(g, r), {}};
        d.roots.push_back(r);
        d.nodes.emplace(r, std::move(leaf));
    }
    return TextualParameterGraph::make(std::move(d));
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr const char* kGraphSchemaId = "tpgo.graph/v1";

using Json = nlohmann::json;

inline Json node_to_json(const GraphData& g, const NodeId& id) {
    const auto& n = g.nodes.at(id);
    Json j;
    j["id"] = n.id.value;
    j["title"] = n.title;
    j["type"] = to_string(n.kind);
    if (n.is_leaf()) {
        j["content"] = n.content;
    } else {
        Json kids = Json::array();
        for (const auto& c : n.children) kids.push_back(node_to_json(g, c));
        j["children"] = std::move(kids);
    }
    return j;
}

inline Json to_json(const TextualParameterGraph& g) {
    Json doc;
    doc["schema"] = kGraphSchemaId;
    doc["version"] = g.version();
    Json roots = Json::array();
    for (const auto& r : g.roots()) roots.push_back(node_to_json(g.data(), r));
    doc["roots"] = std::move(roots);
    Json edges = Json::array();
    for (const auto& e : g.edges()) {
        Json je{{"from", e.from.value}, {"to", e.to.value}};
        if (!e.label.empty()) je["label"] = e.label;
        edges.push_back(std::move(je));
    }
    doc["edges"] = std::move(edges);
    return doc;
}

inline std::string serialize(const TextualParameterGraph& g) { return to_json(g).dump(2) + "\n"; }

inline std::string graph_hash(const TextualParameterGraph& g) { return content_hash(serialize(g)); }

namespace detail {

inline std::string require_string(const Json& j, const char* field, const std::string& where) {
    if (!j.contains(field)) throw SchemaError("missing-field", where + " lacks \"" + field + "\"");
    if (!j.at(field).is_string()) throw SchemaError("field-type", where + " field \"" + field + "\" must be a string");
    return j.at(field).get<std::string>();
}

// Id source for nodes that arrive without one (parser output). Generated ids are
// positional, so they are stable for a given document shape and never depend on text.
struct IdAssigner {
    std::string prefix;
    long next = 0;
    NodeId fresh() { return NodeId(prefix + "." + std::to_string(next++)); }
};

inline NodeId read_node(const Json& j, GraphData& g, IdAssigner* ids, const std::string& where) {
    if (!j.is_object()) throw SchemaError("node-object", where + " is not an object");
    NodeId id;
    if (j.contains("id")) {
        id = NodeId(require_string(j, "id", where));
        if (id.empty()) throw SchemaError("empty-id", where + " has an empty id");
    } else if (ids) {
        id = ids->fresh();
    } else {
        throw SchemaError("missing-field", where + " lacks \"id\"");
    }
    std::string here = "node " + id.value;

    PromptNode node;
    node.id = id;
    node.title = j.contains("title") ? require_string(j, "title", here) : std::string();
    std::string type = j.contains("type") ? require_string(j, "type", here) : std::string("generic");
    auto kind = parse_node_kind(type);
    if (!kind) throw SchemaError("node-type", here + " has unknown type \"" + type + "\"");
    node.kind = *kind;

    bool has_content = j.contains("content") && !(j.at("content").is_string() && j.at("content").get<std::string>().empty());
    bool has_children = j.contains("children") && !(j.at("children").is_array() && j.at("children").empty());
    if (has_content == has_children)
        throw SchemaError("leaf-xor-internal", here + " must have exactly one of content or children");

    if (!g.nodes.contains(id)) g.nodes.emplace(id, PromptNode{id, {}, NodeKind::generic, {}, {}});
    else throw SchemaError("duplicate-id", "node id " + id.value + " appears twice");

    if (has_content) {
        node.content = require_string(j, "content", here);
    } else {
        const auto& kids = j.at("children");
        if (!kids.is_array()) throw SchemaError("field-type", here + " field \"children\" must be an array");
        for (std::size_t i = 0; i < kids.size(); ++i)
            node.children.push_back(read_node(kids[i], g, ids, here + " child " + std::to_string(i)));
    }
    g.nodes[id] = std::move(node);
    return id;
}

}  // namespace detail

// A single node subtree in document form (ids optional when `ids` is given).
inline std::pair<NodeId, GraphData> subtree_from_json(const Json& j, detail::IdAssigner* ids = nullptr) {
    GraphData g;
    NodeId root = detail::read_node(j, g, ids, "node");
    g.roots.push_back(root);
    return {root, std::move(g)};
}

inline TextualParameterGraph from_json(const Json& doc) {
    if (!doc.is_object()) throw SchemaError("document-object", "graph document must be an object");
    if (doc.contains("schema") && doc.at("schema") != kGraphSchemaId)
        throw SchemaError("schema-id", "unsupported schema " + doc.at("schema").dump());
    GraphData g;
    if (doc.contains("version")) {
        if (!doc.at("version").is_number_integer()) throw SchemaError("field-type", "version must be an integer");
        g.version = doc.at("version").get<long>();
    }
    if (!doc.contains("roots") || !doc.at("roots").is_array())
        throw SchemaError("missing-field", "document lacks a \"roots\" array");
    const auto& roots = doc.at("roots");
    for (std::size_t i = 0; i < roots.size(); ++i)
        g.roots.push_back(detail::read_node(roots[i], g, nullptr, "root " + std::to_string(i)));
    if (doc.contains("edges")) {
        const auto& edges = doc.at("edges");
        if (!edges.is_array()) throw SchemaError("field-type", "\"edges\" must be an array");
        for (std::size_t i = 0; i < edges.size(); ++i) {
            std::string where = "edge " + std::to_string(i);
            if (!edges[i].is_object()) throw SchemaError("edge-object", where + " is not an object");
            Edge e{NodeId(detail::require_string(edges[i], "from", where)),
                   NodeId(detail::require_string(edges[i], "to", where)),
                   edges[i].contains("label") ? detail::require_string(edges[i], "label", where) : std::string()};
            if (!g.edges.insert(e).second)
                throw SchemaError("duplicate-edge", where + " duplicates " + e.from.value + " -> " + e.to.value);
        }
    }
    return TextualParameterGraph::make(std::move(g));
}

inline TextualParameterGraph deserialize(std::string_view text) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw SchemaError("well-formed", e.what());
    }
    return from_json(doc);
}

inline TextualParameterGraph load_graph(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace tpgo
