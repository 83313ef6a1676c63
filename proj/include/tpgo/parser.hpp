#pragma once

// Prompt -> Textual Parameter Graph via the parser role.

#include <string>
#include <vector>

#include "tpgo/gateway.hpp"
#include "tpgo/graph.hpp"
#include "tpgo/prompt_template.hpp"

namespace tpgo {

struct ParseOptions {
    int schema_attempts = 3;
};

struct ParseResult {
    TextualParameterGraph graph;
    bool unparsed = false;  // parser output never validated; graph is one generic leaf
    int attempts = 0;
    std::string last_error;
};

namespace detail {

inline void strip_ids(Json& j) {
    if (!j.is_object()) return;
    j.erase("id");
    if (j.contains("children") && j.at("children").is_array())
        for (auto& c : j.at("children")) strip_ids(c);
}

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// Non-blank source lines (trimmed) that do not survive in the leaf text.
inline std::vector<std::string> missing_lines(std::string_view source, const std::string& leaf_text) {
    std::vector<std::string> missing;
    std::size_t start = 0;
    while (start <= source.size()) {
        auto end = source.find('\n', start);
        if (end == std::string_view::npos) end = source.size();
        std::string line = trim(source.substr(start, end - start));
        line = trim(std::string_view(line).substr(std::min(line.find_first_not_of('#'), line.size())));
        if (!line.empty() && leaf_text.find(line) == std::string::npos) missing.push_back(line);
        start = end + 1;
    }
    return missing;
}

inline TextualParameterGraph graph_from_parser_reply(const std::string& reply, const std::string& label,
                                                     const std::string& prompt_text) {
    auto body = extract_json_object(reply);
    if (!body) throw SchemaError("well-formed", "no JSON object in parser reply");
    Json j;
    try {
        j = Json::parse(*body);
    } catch (const Json::parse_error& e) {
        throw SchemaError("well-formed", e.what());
    }
    strip_ids(j);
    IdAssigner ids{label, 0};
    auto [root, data] = subtree_from_json(j, &ids);
    auto graph = TextualParameterGraph::make(std::move(data));

    // Section headings may survive as titles rather than leaf text.
    std::string leaf_text;
    for (const auto& [id, n] : graph.nodes()) leaf_text += n.title + "\n" + n.content + "\n";
    auto lost = missing_lines(prompt_text, leaf_text);
    if (!lost.empty()) throw SchemaError("content-preserved", "source line not preserved: \"" + lost.front() + "\"");
    return graph;
}

}  // namespace detail

inline TextualParameterGraph single_leaf_graph(const std::string& label, const std::string& text) {
    GraphData d;
    NodeId id(label + ".0");
    d.roots.push_back(id);
    d.nodes.emplace(id, PromptNode{id, label, NodeKind::generic, text, {}});
    return TextualParameterGraph::make(std::move(d));
}

// Decomposes one prompt. Node ids are "<label>.<preorder index>". Schema-invalid
// replies (including ones that drop source lines) are retried with a repair
// message; after `schema_attempts` the prompt becomes one flagged generic leaf.
// Transport failures propagate as TransportError.
inline ParseResult parse_prompt(const std::string& prompt_text, const std::string& label, ChatGateway& parser,
                                ParseOptions opts = {}) {
    if (prompt_text.empty()) throw Error("cannot parse an empty prompt");
    if (label.empty()) throw Error("prompt label must be non-empty");

    std::vector<Message> messages{
        {"system", std::string(templates::parser_system_v1)},
        {"user", render_template(templates::parser_user_v1, {{"prompt_type", label}, {"prompt", prompt_text}})},
    };
    std::string last_error;
    for (int attempt = 1; attempt <= opts.schema_attempts; ++attempt) {
        auto ex = parser.chat(messages);
        try {
            return ParseResult{detail::graph_from_parser_reply(ex.response, label, prompt_text), false, attempt, {}};
        } catch (const SchemaError& e) {
            last_error = e.what();
            messages.push_back({"assistant", ex.response});
            messages.push_back({"user", render_template(templates::repair_v1, {{"error", last_error}})});
        }
    }
    return ParseResult{single_leaf_graph(label, prompt_text), true, opts.schema_attempts, last_error};
}

// Combines per-prompt graphs (disjoint ids) into one multi-root graph.
inline TextualParameterGraph merge_graphs(const std::vector<TextualParameterGraph>& parts) {
    GraphData d;
    for (const auto& g : parts) {
        for (const auto& r : g.roots()) d.roots.push_back(r);
        for (const auto& [id, n] : g.nodes())
            if (!d.nodes.emplace(id, n).second) throw SchemaError("duplicate-id", "node id " + id.value + " appears twice");
        for (const auto& e : g.edges()) d.edges.insert(e);
    }
    return TextualParameterGraph::make(std::move(d));
}

}  // namespace tpgo
