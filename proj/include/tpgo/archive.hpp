#pragma once

// Run archive layout:
//   <dir>/run_meta.json
//   <dir>/final_graph.json
//   <dir>/iter_<n>/{graph_before,graph_after,gradients,clusters,proposals,validations,report}.json
//
// proposals.json lists every attempt in application order with its accepted
// flag, so replaying accepted proposals over iter_1/graph_before reproduces
// final_graph.json.

#include <filesystem>
#include <string>

#include "tpgo/proposal.hpp"

namespace tpgo {

namespace fs = std::filesystem;

class ArchiveWriter {
public:
    explicit ArchiveWriter(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw StorageError("cannot create archive " + dir_.string() + ": " + ec.message());
    }

    const fs::path& dir() const noexcept { return dir_; }

    fs::path iteration_dir(int n) const { return dir_ / ("iter_" + std::to_string(n)); }

    void write_json(const fs::path& rel, const Json& j) const { write_text(rel, j.dump(2) + "\n"); }

    void write_text(const fs::path& rel, std::string_view text) const {
        fs::path p = dir_ / rel;
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw StorageError("cannot create " + p.parent_path().string() + ": " + ec.message());
        write_file(p.string(), text);
    }

    void write_graph(const fs::path& rel, const TextualParameterGraph& g) const { write_text(rel, serialize(g)); }

private:
    fs::path dir_;
};

inline Json load_json(const fs::path& p) {
    try {
        return Json::parse(read_file(p.string()));
    } catch (const Json::parse_error& e) {
        throw StorageError("malformed " + p.string() + ": " + e.what());
    }
}

struct ReplayResult {
    bool ok = false;
    int iterations = 0;
    int diverged_at = 0;  // first iteration whose archived state disagrees; 0 when ok
    std::string message;
    std::string final_hash;
};

// Recomputes the final graph from iter_1/graph_before plus every accepted
// proposal, checking each iteration's archived before/after states on the way.
inline ReplayResult replay_archive(const fs::path& dir) {
    ReplayResult r;
    if (!fs::exists(dir / "iter_1" / "graph_before.json")) {
        r.message = "archive has no iter_1/graph_before.json";
        r.diverged_at = 1;
        return r;
    }
    auto graph = load_graph((dir / "iter_1" / "graph_before.json").string());
    for (int n = 1; fs::exists(dir / ("iter_" + std::to_string(n))); ++n) {
        fs::path it = dir / ("iter_" + std::to_string(n));
        auto fail = [&](const std::string& why) {
            r.diverged_at = n;
            r.message = "iteration " + std::to_string(n) + ": " + why;
            return r;
        };
        try {
            if (graph_hash(load_graph((it / "graph_before.json").string())) != graph_hash(graph))
                return fail("graph_before does not match the replayed state");
            auto attempts = load_json(it / "proposals.json");
            for (const auto& a : attempts) {
                if (!a.at("accepted").get<bool>()) continue;
                LowerOptions lo{a.value("rewrite_only", false)};
                graph = apply_proposal(graph, proposal_from_json(a.at("proposal")), lo);
            }
            if (graph_hash(load_graph((it / "graph_after.json").string())) != graph_hash(graph))
                return fail("graph_after does not match the replayed state");
        } catch (const Error& e) {
            return fail(e.what());
        } catch (const Json::exception& e) {
            return fail(e.what());
        }
        r.iterations = n;
    }
    r.final_hash = graph_hash(graph);
    if (fs::exists(dir / "final_graph.json")) {
        if (graph_hash(load_graph((dir / "final_graph.json").string())) != r.final_hash) {
            r.diverged_at = r.iterations;
            r.message = "final_graph does not match the replayed state";
            return r;
        }
    }
    r.ok = true;
    r.message = "replayed " + std::to_string(r.iterations) + " iteration(s); final graph " + r.final_hash;
    return r;
}

}  // namespace tpgo
