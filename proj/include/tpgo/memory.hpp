#pragma once

// Optimization experience memory: (problem context, proposal, effectiveness)
// triplets, retrieved by similarity and ranked by effectiveness to build
// few-shot exemplars for the optimizer.

#include <cstdio>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "tpgo/gateway.hpp"
#include "tpgo/proposal.hpp"

namespace tpgo {

struct ExperienceEntry {
    std::string entry_id;
    std::string problem_context;
    EmbeddingVector context_vector;
    OptimizationProposal proposal;
    double effectiveness = 0;
    bool accepted = false;
    int iteration = 0;
    std::int64_t created_at = 0;  // milliseconds; only its order matters

    void validate() const {
        if (problem_context.empty()) throw Error("experience entry needs a problem context");
        if (context_vector.values.empty()) throw Error("experience entry needs a context vector");
        if (!(effectiveness >= 0 && effectiveness <= 1)) throw Error("effectiveness must be in [0, 1]");
    }
    bool operator==(const ExperienceEntry&) const = default;
};

inline Json to_json(const ExperienceEntry& e) {
    return Json{{"entry_id", e.entry_id},
                {"problem_context", e.problem_context},
                {"context_vector", e.context_vector.values},
                {"proposal", to_json(e.proposal)},
                {"effectiveness", e.effectiveness},
                {"accepted", e.accepted},
                {"iteration", e.iteration},
                {"created_at", e.created_at}};
}

inline ExperienceEntry experience_from_json(const Json& j) {
    ExperienceEntry e;
    e.entry_id = j.at("entry_id").get<std::string>();
    e.problem_context = j.at("problem_context").get<std::string>();
    e.context_vector.values = j.at("context_vector").get<std::vector<double>>();
    e.proposal = proposal_from_json(j.at("proposal"));
    e.effectiveness = j.at("effectiveness").get<double>();
    e.accepted = j.at("accepted").get<bool>();
    e.iteration = j.at("iteration").get<int>();
    e.created_at = j.at("created_at").get<std::int64_t>();
    return e;
}

// Append-only, one JSON entry per line. Single writer; readers get a snapshot.
class ExperienceMemory {
public:
    // Empty path keeps the memory in process only.
    explicit ExperienceMemory(std::string path = {}) : path_(std::move(path)) {
        if (path_.empty()) return;
        std::ifstream in(path_);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                entries_.push_back(experience_from_json(Json::parse(line)));
            } catch (const std::exception& e) {
                throw StorageError(path_ + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    std::string record(ExperienceEntry entry) {
        entry.validate();
        std::lock_guard lock(mu_);
        if (entry.entry_id.empty()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "exp-%06zu", entries_.size() + 1);
            entry.entry_id = buf;
        }
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            out << to_json(entry).dump() << '\n';
            if (!out.flush()) throw StorageError("cannot append to " + path_);
        }
        entries_.push_back(std::move(entry));
        return entries_.back().entry_id;
    }

    std::vector<ExperienceEntry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    std::optional<ExperienceEntry> find(const std::string& id) const {
        std::lock_guard lock(mu_);
        for (const auto& e : entries_)
            if (e.entry_id == id) return e;
        return std::nullopt;
    }

    // Top-k by cosine similarity, descending. Ties go to the newer entry
    // (later created_at, then later position in the store).
    std::vector<ExperienceEntry> retrieve(const EmbeddingVector& query, std::size_t k) const {
        auto snapshot = entries();
        if (k == 0 || snapshot.empty()) return {};
        struct Scored {
            double sim;
            std::size_t index;
        };
        std::vector<Scored> scored;
        scored.reserve(snapshot.size());
        for (std::size_t i = 0; i < snapshot.size(); ++i)
            scored.push_back({cosine_similarity(query, snapshot[i].context_vector), i});
        std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
            if (a.sim != b.sim) return a.sim > b.sim;
            const auto& ea = snapshot[a.index];
            const auto& eb = snapshot[b.index];
            if (ea.created_at != eb.created_at) return ea.created_at > eb.created_at;
            return a.index > b.index;
        });
        std::vector<ExperienceEntry> out;
        for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(snapshot[scored[i].index]);
        return out;
    }

    std::vector<ExperienceEntry> retrieve(const std::string& context, std::size_t k, EmbeddingProvider& embedder) const {
        return retrieve(embed_one(embedder, context), k);
    }

private:
    std::string path_;
    mutable std::mutex mu_;
    std::vector<ExperienceEntry> entries_;
};

// Within a retrieved group, order by effectiveness descending; equal scores keep
// retrieval order.
inline std::vector<ExperienceEntry> rank_group(std::vector<ExperienceEntry> entries) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const ExperienceEntry& a, const ExperienceEntry& b) { return a.effectiveness > b.effectiveness; });
    return entries;
}

struct ExemplarParams {
    std::size_t k = 8;
    std::size_t n_pos = 2;
    std::size_t n_neg = 1;
    double pos_floor = 0.5;
    double neg_ceiling = 0.25;
};

struct ExemplarBlock {
    std::vector<ExperienceEntry> positives;  // effectiveness descending
    std::vector<ExperienceEntry> negatives;  // effectiveness ascending
    std::string rendered;

    bool empty() const noexcept { return positives.empty() && negatives.empty(); }
};

inline std::string render_exemplar(const ExperienceEntry& e, const char* verdict) {
    char score[16];
    std::snprintf(score, sizeof score, "%.2f", e.effectiveness);
    return std::string("### ") + verdict + " (effectiveness " + score + ")\n" + "Problem: " + e.problem_context + "\n" +
           "Edit: " + to_json(e.proposal).dump() + "\n";
}

inline ExemplarBlock select_exemplars(const std::vector<ExperienceEntry>& ranked, const ExemplarParams& params) {
    auto sorted = rank_group(ranked);
    ExemplarBlock block;
    std::vector<bool> used(sorted.size(), false);
    for (std::size_t i = 0; i < sorted.size() && block.positives.size() < params.n_pos; ++i) {
        if (sorted[i].effectiveness >= params.pos_floor) {
            block.positives.push_back(sorted[i]);
            used[i] = true;
        }
    }
    for (std::size_t i = sorted.size(); i-- > 0 && block.negatives.size() < params.n_neg;) {
        if (!used[i] && sorted[i].effectiveness <= params.neg_ceiling) block.negatives.push_back(sorted[i]);
    }
    if (block.empty()) return block;

    block.rendered = "Earlier edits for similar failures. Effectiveness is the share of targeted tasks each edit fixed.\n"
                     "Build on what worked; do not repeat what failed.\n\n";
    for (const auto& e : block.positives) block.rendered += render_exemplar(e, "Worked") + "\n";
    for (const auto& e : block.negatives) block.rendered += render_exemplar(e, "Did not work") + "\n";
    return block;
}

}  // namespace tpgo
