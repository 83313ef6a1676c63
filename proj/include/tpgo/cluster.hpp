#pragma once

// Negative-gradient aggregation: near-duplicate filtering and density-based
// clustering over embeddings, distance = 1 - cosine similarity.

#include <deque>
#include <limits>
#include <numeric>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tpgo/gateway.hpp"
#include "tpgo/graph.hpp"

namespace tpgo {

struct EmbeddedGradient {
    std::string text;
    EmbeddingVector vector;
    std::set<std::string> sources;  // task ids
    bool operator==(const EmbeddedGradient&) const = default;
};

struct ErrorCluster {
    std::vector<EmbeddedGradient> members;
    std::string representative;
    std::set<std::string> member_tasks;
};

struct ClusteringParams {
    double eps = 0.3;
    std::size_t min_samples = 2;
    double dedupe_threshold = 0.95;

    void validate() const {
        if (!(eps > 0)) throw ConfigError("eps must be > 0");
        if (min_samples < 1) throw ConfigError("min_samples must be >= 1");
        if (!(dedupe_threshold > 0 && dedupe_threshold <= 1)) throw ConfigError("dedupe_threshold must be in (0, 1]");
    }
};

struct ClusteringResult {
    std::vector<ErrorCluster> clusters;
    std::vector<EmbeddedGradient> noise;
};

// Greedy scan in input order: an item whose similarity to any kept item is
// >= threshold is dropped and its sources merge into the first such kept item.
inline std::vector<EmbeddedGradient> dedupe(const std::vector<EmbeddedGradient>& items, double threshold) {
    std::vector<EmbeddedGradient> kept;
    for (const auto& item : items) {
        auto dup = std::find_if(kept.begin(), kept.end(), [&](const EmbeddedGradient& k) {
            return cosine_similarity(k.vector, item.vector) >= threshold;
        });
        if (dup == kept.end()) kept.push_back(item);
        else dup->sources.insert(item.sources.begin(), item.sources.end());
    }
    return kept;
}

// Medoid index: maximizes summed similarity to all members; earliest wins ties.
inline std::size_t medoid_index(const std::vector<EmbeddedGradient>& members) {
    if (members.empty()) throw Error("medoid of an empty cluster");
    std::size_t best = 0;
    double best_sum = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < members.size(); ++i) {
        double sum = 0;
        for (const auto& m : members) sum += cosine_similarity(members[i].vector, m.vector);
        if (sum > best_sum) {
            best_sum = sum;
            best = i;
        }
    }
    return best;
}

inline std::string representative(const ErrorCluster& c) { return c.members.at(medoid_index(c.members)).text; }

inline ErrorCluster make_cluster(std::vector<EmbeddedGradient> members) {
    ErrorCluster c;
    c.members = std::move(members);
    for (const auto& m : c.members) c.member_tasks.insert(m.sources.begin(), m.sources.end());
    c.representative = representative(c);
    return c;
}

// Labels for dbscan: cluster index per item, or -1 for noise.
//
// Core point: at least min_samples items (itself included) within eps.
// Clusters grow from cores in input order over core-to-core reachability;
// a border point joins the cluster of its lowest-index core neighbor.
inline std::vector<int> dbscan_labels(const std::vector<EmbeddingVector>& points, double eps, std::size_t min_samples) {
    const std::size_t n = points.size();
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i == j || cosine_distance(points[i], points[j]) <= eps) neighbors[i].push_back(j);

    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) core[i] = neighbors[i].size() >= min_samples;

    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!core[seed] || label[seed] != -1) continue;
        const int id = next++;
        std::deque<std::size_t> frontier{seed};
        label[seed] = id;
        while (!frontier.empty()) {
            std::size_t p = frontier.front();
            frontier.pop_front();
            for (std::size_t q : neighbors[p]) {
                if (core[q] && label[q] == -1) {
                    label[q] = id;
                    frontier.push_back(q);
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        for (std::size_t q : neighbors[i]) {  // ascending index
            if (core[q]) {
                label[i] = label[q];
                break;
            }
        }
    }
    return label;
}

inline ClusteringResult dbscan(const std::vector<EmbeddedGradient>& items, const ClusteringParams& params) {
    params.validate();
    std::vector<EmbeddingVector> points;
    points.reserve(items.size());
    for (const auto& it : items) points.push_back(it.vector);
    auto label = dbscan_labels(points, params.eps, params.min_samples);

    int count = label.empty() ? 0 : *std::max_element(label.begin(), label.end()) + 1;
    std::vector<std::vector<EmbeddedGradient>> groups(static_cast<std::size_t>(std::max(count, 0)));
    ClusteringResult out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (label[i] < 0) out.noise.push_back(items[i]);
        else groups[static_cast<std::size_t>(label[i])].push_back(items[i]);
    }
    for (auto& g : groups) out.clusters.push_back(make_cluster(std::move(g)));
    return out;
}

// Ablation: every item is its own cluster.
inline std::vector<ErrorCluster> singleton_clusters(const std::vector<EmbeddedGradient>& items) {
    std::vector<ErrorCluster> out;
    for (const auto& it : items) out.push_back(make_cluster({it}));
    return out;
}

// Ablation: seeded shuffle, then deal round-robin into k non-empty groups.
// Members keep input order inside each group.
inline std::vector<ErrorCluster> random_clusters(const std::vector<EmbeddedGradient>& items, std::size_t k,
                                                 std::uint64_t seed) {
    if (k < 1) throw Error("random_clusters needs k >= 1");
    if (k > items.size())
        throw Error("random_clusters: k=" + std::to_string(k) + " exceeds " + std::to_string(items.size()) + " items");
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    std::vector<std::vector<std::size_t>> groups(k);
    for (std::size_t pos = 0; pos < order.size(); ++pos) groups[pos % k].push_back(order[pos]);
    std::vector<ErrorCluster> out;
    for (auto& g : groups) {
        std::sort(g.begin(), g.end());
        std::vector<EmbeddedGradient> members;
        for (auto idx : g) members.push_back(items[idx]);
        out.push_back(make_cluster(std::move(members)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient store: append-only JSON lines,
//   {"text": str, "vector": [decimal...], "sources": [task ids], "iteration": n}

inline Json to_json(const EmbeddedGradient& g) {
    return Json{{"text", g.text}, {"vector", g.vector.values}, {"sources", g.sources}};
}

inline EmbeddedGradient embedded_gradient_from_json(const Json& j) {
    EmbeddedGradient g;
    g.text = j.at("text").get<std::string>();
    g.vector.values = j.at("vector").get<std::vector<double>>();
    g.sources = j.at("sources").get<std::set<std::string>>();
    return g;
}

inline Json to_json(const ErrorCluster& c) {
    Json members = Json::array();
    for (const auto& m : c.members) members.push_back(Json{{"text", m.text}, {"sources", m.sources}});
    return Json{{"representative", c.representative}, {"member_tasks", c.member_tasks}, {"members", std::move(members)}};
}

struct StoredGradient {
    EmbeddedGradient gradient;
    int iteration = 0;
};

class GradientStore {
public:
    // Empty path keeps the store in memory only.
    explicit GradientStore(std::string path = {}) : path_(std::move(path)) {
        if (path_.empty()) return;
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                auto j = Json::parse(line);
                records_.push_back({embedded_gradient_from_json(j), j.value("iteration", 0)});
            } catch (const std::exception& e) {
                throw StorageError("corrupt gradient store " + path_ + ": " + e.what());
            }
        }
    }

    void append(const std::vector<EmbeddedGradient>& items, int iteration) {
        std::ofstream out;
        if (!path_.empty()) {
            out.open(path_, std::ios::app);
            if (!out) throw StorageError("cannot append to " + path_);
        }
        for (const auto& g : items) {
            records_.push_back({g, iteration});
            if (out.is_open()) {
                Json j = to_json(g);
                j["iteration"] = iteration;
                out << j.dump() << '\n';
            }
        }
        if (out.is_open() && !out.flush()) throw StorageError("write failed: " + path_);
    }

    const std::vector<StoredGradient>& records() const noexcept { return records_; }

private:
    std::string path_;
    std::vector<StoredGradient> records_;
};

}  // namespace tpgo
