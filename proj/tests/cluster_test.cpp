#include <gtest/gtest.h>

#include <chrono>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "tpgo/cluster.hpp"
#include "tpgo/sim.hpp"

using namespace tpgo;

TEST(Dbscan, MatchesBruteForceOracle) {
    auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1234);
    for (int inst = 0; inst < 100; ++inst) {
        auto points = oracle::random_instance(rng);
        auto got = dbscan_labels(points, 0.3, 2);
        auto want = oracle::dbscan(points, 0.3, 2);
        ASSERT_EQ(oracle::canonical(got), oracle::canonical(want)) << "instance " << inst;
    }
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));
}

TEST(Dbscan, OtherParameters) {
    std::mt19937_64 rng(99);
    for (int inst = 0; inst < 30; ++inst) {
        auto points = oracle::random_instance(rng);
        double eps = 0.05 + 0.1 * static_cast<double>(inst % 5);
        std::size_t ms = 1 + inst % 4;
        EXPECT_EQ(oracle::canonical(dbscan_labels(points, eps, ms)), oracle::canonical(oracle::dbscan(points, eps, ms)));
    }
}

TEST(Dbscan, ClusterInvariants) {
    std::mt19937_64 rng(5);
    for (int inst = 0; inst < 30; ++inst) {
        auto points = oracle::random_instance(rng);
        std::vector<EmbeddedGradient> items;
        for (std::size_t i = 0; i < points.size(); ++i) items.push_back({"g" + std::to_string(i), points[i], {"t" + std::to_string(i)}});
        auto r = dbscan(items, {});
        std::size_t total = r.noise.size();
        for (const auto& c : r.clusters) {
            EXPECT_GE(c.members.size(), 2u);  // min_samples 2: a core and a neighbor
            total += c.members.size();
            EXPECT_EQ(c.representative, c.members[oracle::medoid(c.members)].text);
        }
        EXPECT_EQ(total, items.size());
    }
}

TEST(Dbscan, EmptyInputAndValidation) {
    EXPECT_TRUE(dbscan({}, {}).clusters.empty());
    ClusteringParams p;
    p.eps = 0;
    EXPECT_THROW(dbscan({}, p), ConfigError);
    p = {};
    p.min_samples = 0;
    EXPECT_THROW(dbscan({}, p), ConfigError);
}

TEST(Dedupe, MatchesPairwiseOracle) {
    std::mt19937_64 rng(21);
    for (int inst = 0; inst < 100; ++inst) {
        auto items = oracle::near_duplicate_items(rng);
        auto got = dedupe(items, 0.95);
        auto want = oracle::dedupe(items, 0.95);
        ASSERT_EQ(got, want) << inst;
        // kept items are pairwise below the threshold; every source survives
        for (std::size_t i = 0; i < got.size(); ++i)
            for (std::size_t j = i + 1; j < got.size(); ++j) EXPECT_LT(cosine_similarity(got[i].vector, got[j].vector), 0.95);
        std::set<std::string> in, out;
        for (const auto& it : items) in.insert(it.sources.begin(), it.sources.end());
        for (const auto& it : got) out.insert(it.sources.begin(), it.sources.end());
        EXPECT_EQ(in, out);
    }
}

TEST(Dedupe, Idempotent) {
    std::mt19937_64 rng(8);
    auto once = dedupe(oracle::near_duplicate_items(rng), 0.95);
    EXPECT_EQ(dedupe(once, 0.95), once);
}

TEST(Medoid, MatchesExhaustiveSearch) {
    std::mt19937_64 rng(31);
    for (int inst = 0; inst < 100; ++inst) {
        auto points = oracle::random_instance(rng, 30);
        std::vector<EmbeddedGradient> members;
        for (std::size_t i = 0; i < points.size(); ++i) members.push_back({"m" + std::to_string(i), points[i], {}});
        EXPECT_EQ(medoid_index(members), oracle::medoid(members)) << inst;
    }
    EXPECT_THROW(medoid_index({}), Error);
}

TEST(Medoid, TiesGoToTheEarliest) {
    auto v = normalize({1, 0});
    std::vector<EmbeddedGradient> same{{"a", v, {}}, {"b", v, {}}, {"c", v, {}}};
    EXPECT_EQ(medoid_index(same), 0u);
}

TEST(RandomClusters, PartitionIntoKNonEmptyGroups) {
    std::mt19937_64 rng(4);
    auto points = oracle::random_instance(rng, 40);
    std::vector<EmbeddedGradient> items;
    for (std::size_t i = 0; i < points.size(); ++i) items.push_back({"g" + std::to_string(i), points[i], {}});
    for (std::size_t k = 1; k <= items.size(); k += 3) {
        auto groups = random_clusters(items, k, 17);
        ASSERT_EQ(groups.size(), k);
        std::multiset<std::string> seen;
        for (const auto& g : groups) {
            EXPECT_FALSE(g.members.empty());
            for (const auto& m : g.members) seen.insert(m.text);
        }
        EXPECT_EQ(seen.size(), items.size());
        EXPECT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), items.size());
        // same seed, same grouping
        auto again = random_clusters(items, k, 17);
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(again[i].members, groups[i].members);
    }
    EXPECT_THROW(random_clusters(items, 0, 1), Error);
    EXPECT_THROW(random_clusters(items, items.size() + 1, 1), Error);
}

TEST(Singletons, OnePerItem) {
    std::vector<EmbeddedGradient> items{{"a", normalize({1, 0}), {"t1"}}, {"b", normalize({0, 1}), {"t2"}}};
    auto s = singleton_clusters(items);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[1].representative, "b");
    EXPECT_EQ(s[1].member_tasks, std::set<std::string>{"t2"});
}

// The shipped fixtures rely on the hash embedder keeping same-family gradients
// inside eps but under the dedupe threshold, and other families outside eps.
TEST(FixtureGeometry, FamiliesClusterWithoutMerging) {
    HashEmbedder e(0);
    auto check = [&](const std::map<std::string, std::string>& canonical) {
        std::vector<std::pair<std::string, EmbeddingVector>> v;
        for (const auto& [family, text] : canonical)
            for (const char* tid : {"t01", "t05", "t09"}) v.emplace_back(family, embed_one(e, text + " [" + tid + "]"));
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t j = i + 1; j < v.size(); ++j) {
                double s = cosine_similarity(v[i].second, v[j].second);
                if (v[i].first == v[j].first) {
                    EXPECT_GE(s, 0.7);
                    EXPECT_LT(s, 0.95);
                } else {
                    EXPECT_GT(1.0 - s, 0.3);
                }
            }
    };
    check(sim::convergence::kGradients);
    check({{"citation", sim::stability::kCiteGradient}, {"confidence", sim::stability::kConfidenceGradient}});
}

TEST(GradientStore, AppendAndReload) {
    auto path = std::filesystem::temp_directory_path() / ("tpgo-gs-" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(path);
    {
        GradientStore s(path.string());
        s.append({{"a", normalize({1, 2}), {"t1"}}}, 1);
        s.append({{"b", normalize({2, 1}), {"t2", "t3"}}}, 2);
    }
    GradientStore back(path.string());
    ASSERT_EQ(back.records().size(), 2u);
    EXPECT_EQ(back.records()[1].iteration, 2);
    EXPECT_EQ(back.records()[1].gradient.sources.size(), 2u);
    std::filesystem::remove(path);
}
