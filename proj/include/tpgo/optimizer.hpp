#pragma once

// Optimizer role: error cluster + graph snapshot + exemplars -> proposal.

#include <string>

#include "tpgo/cluster.hpp"
#include "tpgo/memory.hpp"
#include "tpgo/prompt_template.hpp"
#include "tpgo/proposal.hpp"

namespace tpgo {

enum class MemoryMode { with_memory, without_memory };

struct ProposalRequest {
    TextualParameterGraph graph;  // snapshot; never mutated
    ErrorCluster cluster;
    ExemplarBlock exemplars;
    MemoryMode mode = MemoryMode::with_memory;
};

struct ProposeOptions {
    LowerOptions lowering;
    // Prefix for ids of nodes the proposal adds without naming them.
    std::string id_prefix = "new";
};

inline std::string render_error_cluster(const ErrorCluster& c) {
    std::string out = "Representative: " + c.representative + "\nErrors:\n";
    for (std::size_t i = 0; i < c.members.size(); ++i) {
        out += "[" + std::to_string(i) + "] " + c.members[i].text + " (tasks:";
        for (const auto& t : c.members[i].sources) out += " " + t;
        out += ")\n";
    }
    return out;
}

inline std::vector<Message> optimizer_messages(const ProposalRequest& req) {
    std::string experiences = "(none)";
    if (req.mode == MemoryMode::with_memory && !req.exemplars.empty()) experiences = req.exemplars.rendered;
    return {
        {"system", std::string(templates::optimizer_system_v1)},
        {"user", render_template(templates::optimizer_user_v1, {{"graph", serialize(req.graph)},
                                                                 {"error_cluster", render_error_cluster(req.cluster)},
                                                                 {"experiences", experiences}})},
    };
}

// Parses and statically checks an optimizer reply against the snapshot: schema,
// lowering, error indices, and a dry-run application. Throws SchemaError or EditError.
inline OptimizationProposal check_proposal(std::string_view reply, const ProposalRequest& req, const ProposeOptions& opts) {
    auto p = parse_proposal(reply, opts.id_prefix);
    lower(p, opts.lowering);
    check_error_indices(p, req.cluster.members.size());
    apply_proposal(req.graph, p, opts.lowering);
    return p;
}

// One proposal per cluster. An unusable reply is retried once with a repair
// message; the second failure propagates (SchemaError / EditError), as do
// transport errors.
inline OptimizationProposal propose(const ProposalRequest& req, ChatGateway& optimizer, const ProposeOptions& opts = {}) {
    if (req.cluster.members.empty()) throw Error("cannot propose for an empty cluster");
    auto messages = optimizer_messages(req);
    auto first = optimizer.chat(messages);
    std::string problem;
    try {
        return check_proposal(first.response, req, opts);
    } catch (const SchemaError& e) {
        problem = e.what();
    } catch (const EditError& e) {
        problem = e.what();
    }
    messages.push_back({"assistant", first.response});
    messages.push_back({"user", render_template(templates::repair_v1, {{"error", problem}})});
    auto second = optimizer.chat(messages);
    return check_proposal(second.response, req, opts);
}

}  // namespace tpgo
