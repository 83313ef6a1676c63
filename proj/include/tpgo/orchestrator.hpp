#pragma once

// The closed optimization loop:
//   execute -> reflect -> embed/dedupe/cluster -> per cluster: exemplars,
//   propose, apply, validate on the contributing tasks, spot-check for
//   regressions, accept or roll back, record experience -> archive.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tpgo/archive.hpp"
#include "tpgo/cluster.hpp"
#include "tpgo/gradient.hpp"
#include "tpgo/memory.hpp"
#include "tpgo/optimizer.hpp"
#include "tpgo/parallel.hpp"

namespace tpgo {

struct Task {
    std::string task_id;
    std::string query;
    std::optional<std::string> reference_answer;
    std::string domain_tag;
    bool operator==(const Task&) const = default;
};

inline Json to_json(const Task& t) {
    Json j{{"task_id", t.task_id}, {"query", t.query}, {"domain_tag", t.domain_tag}};
    if (t.reference_answer) j["reference_answer"] = *t.reference_answer;
    return j;
}

inline Task task_from_json(const Json& j) {
    Task t;
    t.task_id = j.at("task_id").get<std::string>();
    t.query = j.value("query", "");
    if (j.contains("reference_answer") && j.at("reference_answer").is_string())
        t.reference_answer = j.at("reference_answer").get<std::string>();
    t.domain_tag = j.value("domain_tag", "");
    return t;
}

class AgentRunner {
public:
    virtual ~AgentRunner() = default;
    virtual Trajectory run(const MaterializedConfig& config, const Task& task) = 0;
};

class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual Outcome judge(const Trajectory& trajectory, const Task& task) = 0;
};

enum class OptimizationMode { exploratory, imitative };

inline const char* to_string(OptimizationMode m) { return m == OptimizationMode::imitative ? "imitative" : "exploratory"; }

struct Ablations {
    bool no_graph = false;             // optimize flat whole prompts
    bool no_structural_edits = false;  // REWRITE_NODE only
    bool no_clustering = false;        // one cluster per gradient
    bool random_clustering = false;    // seeded random groups
    bool no_grao = false;              // no experience exemplars
};

struct ValidationPolicy {
    std::size_t spot_check = 3;         // previously passing tasks re-run per proposal; 0 disables
    double acceptance_threshold = 0.0;  // accept iff effectiveness > threshold and no regressions
    bool full_suite = false;            // spot-check every passing task instead of a same-domain sample
};

struct LoopParams {
    OptimizationMode mode = OptimizationMode::exploratory;
    ClusteringParams clustering;
    ExemplarParams grao;
    ValidationPolicy validation;
    Ablations ablations;
    std::size_t concurrency = 8;
    int max_iterations = 5;
    std::uint64_t seed = 0;
};

inline Json to_json(const LoopParams& p) {
    return Json{{"mode", to_string(p.mode)},
                {"clustering", {{"eps", p.clustering.eps}, {"min_samples", p.clustering.min_samples},
                                {"dedupe_threshold", p.clustering.dedupe_threshold}}},
                {"grao", {{"k", p.grao.k}, {"n_pos", p.grao.n_pos}, {"n_neg", p.grao.n_neg},
                          {"pos_floor", p.grao.pos_floor}, {"neg_ceiling", p.grao.neg_ceiling}}},
                {"validation", {{"spot_check", p.validation.spot_check},
                                {"acceptance_threshold", p.validation.acceptance_threshold},
                                {"full_suite", p.validation.full_suite}}},
                {"ablations", {{"no_graph", p.ablations.no_graph}, {"no_structural_edits", p.ablations.no_structural_edits},
                               {"no_clustering", p.ablations.no_clustering},
                               {"random_clustering", p.ablations.random_clustering}, {"no_grao", p.ablations.no_grao}}},
                {"concurrency", p.concurrency},
                {"max_iterations", p.max_iterations},
                {"seed", p.seed}};
}

struct LoopServices {
    std::shared_ptr<AgentRunner> runner;
    std::shared_ptr<Evaluator> evaluator;
    std::shared_ptr<ChatGateway> reflector;
    std::shared_ptr<ChatGateway> optimizer;
    std::shared_ptr<EmbeddingProvider> embedder;
    std::shared_ptr<UsageLedger> ledger = std::make_shared<UsageLedger>();
    std::shared_ptr<ExperienceMemory> memory = std::make_shared<ExperienceMemory>();
    std::shared_ptr<GradientStore> gradients = std::make_shared<GradientStore>();
    std::shared_ptr<ArchiveWriter> archive;  // optional
    Clock clock = system_clock();
    std::function<std::int64_t()> timestamp;  // experience created_at; defaults to wall clock ms
    std::function<void(const std::string&)> log;
};

struct ValidationReport {
    std::size_t cluster_index = 0;
    std::string representative;
    std::vector<std::string> subset_task_ids;
    std::size_t fixed_count = 0;
    std::size_t subset_size = 0;
    double effectiveness = 0;
    std::vector<std::string> spot_check_task_ids;
    std::size_t regressions = 0;
    bool accepted = false;
    std::string entry_id;
    std::string note;
};

inline Json to_json(const ValidationReport& v) {
    return Json{{"cluster_index", v.cluster_index}, {"representative", v.representative},
                {"subset_task_ids", v.subset_task_ids}, {"fixed_count", v.fixed_count},
                {"subset_size", v.subset_size}, {"effectiveness", v.effectiveness},
                {"spot_check_task_ids", v.spot_check_task_ids}, {"regressions", v.regressions},
                {"accepted", v.accepted}, {"entry_id", v.entry_id}, {"note", v.note}};
}

struct IterationReport {
    int iteration = 0;
    std::size_t tasks = 0;
    std::size_t passed_before = 0;
    std::size_t passed_after = 0;
    std::size_t proposals_attempted = 0;
    std::size_t proposals_accepted = 0;
    std::size_t proposals_rolled_back = 0;
    std::size_t clusters_skipped = 0;
    std::size_t cluster_count = 0;
    std::size_t noise_count = 0;
    std::size_t trajectories = 0;
    std::size_t calls = 0;
    UsageCounters usage;
    Millis wall_time{0};
    std::vector<ValidationReport> validations;

    double success_before() const { return tasks ? double(passed_before) / double(tasks) : 0.0; }
    double success_after() const { return tasks ? double(passed_after) / double(tasks) : 0.0; }
};

inline Json to_json(const IterationReport& r) {
    return Json{{"iteration", r.iteration},
                {"tasks", r.tasks},
                {"passed_before", r.passed_before},
                {"passed_after", r.passed_after},
                {"success_before", r.success_before()},
                {"success_after", r.success_after()},
                {"proposals_attempted", r.proposals_attempted},
                {"proposals_accepted", r.proposals_accepted},
                {"proposals_rolled_back", r.proposals_rolled_back},
                {"clusters_skipped", r.clusters_skipped},
                {"cluster_count", r.cluster_count},
                {"noise_count", r.noise_count},
                {"trajectories", r.trajectories},
                {"calls", r.calls},
                {"usage", {{"prompt_tokens", r.usage.prompt_tokens},
                           {"completion_tokens", r.usage.completion_tokens},
                           {"total_tokens", r.usage.total_tokens()},
                           {"call_time_ms", r.usage.wall_time.count()}}},
                {"wall_time_ms", r.wall_time.count()}};
}

// Counters only; validations stay in their own file.
inline IterationReport iteration_report_from_json(const Json& j) {
    IterationReport r;
    r.iteration = j.at("iteration").get<int>();
    r.tasks = j.at("tasks").get<std::size_t>();
    r.passed_before = j.at("passed_before").get<std::size_t>();
    r.passed_after = j.at("passed_after").get<std::size_t>();
    r.proposals_attempted = j.value("proposals_attempted", std::size_t{0});
    r.proposals_accepted = j.value("proposals_accepted", std::size_t{0});
    r.proposals_rolled_back = j.value("proposals_rolled_back", std::size_t{0});
    r.clusters_skipped = j.value("clusters_skipped", std::size_t{0});
    r.cluster_count = j.value("cluster_count", std::size_t{0});
    r.noise_count = j.value("noise_count", std::size_t{0});
    r.trajectories = j.at("trajectories").get<std::size_t>();
    r.calls = j.value("calls", std::size_t{0});
    const auto& u = j.at("usage");
    r.usage.prompt_tokens = u.at("prompt_tokens").get<long>();
    r.usage.completion_tokens = u.at("completion_tokens").get<long>();
    r.usage.wall_time = Millis{u.value("call_time_ms", 0L)};
    r.wall_time = Millis{j.value("wall_time_ms", 0L)};
    return r;
}

// ---------------------------------------------------------------------------

// Runs every task against the materialized graph with at most `concurrency`
// in flight. A runner that throws yields an environment-failure trajectory.
// Agent usage goes to the ledger under role "agent". Sorted by task id.
inline std::vector<Trajectory> run_batch(const TextualParameterGraph& graph, const std::vector<Task>& tasks,
                                         AgentRunner& runner, Evaluator& evaluator, std::size_t concurrency,
                                         UsageLedger* ledger = nullptr) {
    if (tasks.empty()) throw Error("run_batch needs at least one task");
    const auto config = materialize_all(graph);
    std::vector<Trajectory> out(tasks.size());
    parallel_for(tasks.size(), concurrency, [&](std::size_t i) {
        const auto& task = tasks[i];
        Trajectory t;
        try {
            t = runner.run(config, task);
            t.task_id = task.task_id;
            if (t.query.empty()) t.query = task.query;
            t.outcome = t.environment_failure ? Outcome::failure : evaluator.judge(t, task);
        } catch (const std::exception& e) {
            t = Trajectory{};
            t.task_id = task.task_id;
            t.query = task.query;
            t.steps.push_back({"environment", StepKind::message, std::string("runner error: ") + e.what()});
            t.outcome = Outcome::failure;
            t.environment_failure = true;
        }
        if (ledger) ledger->record({"agent", t.usage, 1});
        out[i] = std::move(t);
    });
    std::sort(out.begin(), out.end(), [](const Trajectory& a, const Trajectory& b) { return a.task_id < b.task_id; });
    return out;
}

struct CostSummary {
    long prompt_tokens = 0;
    long completion_tokens = 0;
    long total_tokens = 0;
    Millis wall_time{0};
    std::size_t trajectories = 0;
    std::size_t iterations = 0;
    double amortized_tokens = 0;   // total_tokens / trajectories
    double amortized_time_ms = 0;  // wall_time / trajectories
};

inline CostSummary cost_report(const std::vector<IterationReport>& reports) {
    if (reports.empty()) throw Error("cost report needs at least one iteration");
    CostSummary s;
    for (const auto& r : reports) {
        s.prompt_tokens += r.usage.prompt_tokens;
        s.completion_tokens += r.usage.completion_tokens;
        s.wall_time += r.wall_time;
        s.trajectories += r.trajectories;
    }
    s.iterations = reports.size();
    s.total_tokens = s.prompt_tokens + s.completion_tokens;
    if (s.trajectories == 0) throw Error("amortization undefined: zero trajectories");
    s.amortized_tokens = double(s.total_tokens) / double(s.trajectories);
    s.amortized_time_ms = double(s.wall_time.count()) / double(s.trajectories);
    return s;
}

inline Json to_json(const CostSummary& s) {
    return Json{{"iterations", s.iterations},       {"trajectories", s.trajectories},
                {"prompt_tokens", s.prompt_tokens}, {"completion_tokens", s.completion_tokens},
                {"total_tokens", s.total_tokens},   {"wall_time_ms", s.wall_time.count()},
                {"amortized_tokens_per_trajectory", s.amortized_tokens},
                {"amortized_time_ms_per_trajectory", s.amortized_time_ms}};
}

struct IterationResult {
    TextualParameterGraph graph;
    IterationReport report;
};

struct OptimizationResult {
    TextualParameterGraph final_graph;
    std::vector<IterationReport> reports;
    std::string stop_reason;
};

class Orchestrator {
public:
    Orchestrator(TextualParameterGraph initial, std::vector<Task> tasks, LoopParams params, LoopServices services)
        : graph_(params.ablations.no_graph ? flatten(initial) : std::move(initial)),
          tasks_(std::move(tasks)),
          params_(std::move(params)),
          svc_(std::move(services)) {
        if (tasks_.empty()) throw ConfigError("task suite is empty");
        if (!svc_.runner || !svc_.evaluator || !svc_.reflector || !svc_.optimizer || !svc_.embedder)
            throw ConfigError("runner, evaluator, reflector, optimizer and embedder are all required");
        params_.clustering.validate();
        std::set<std::string> ids;
        for (const auto& t : tasks_) {
            if (!ids.insert(t.task_id).second) throw ConfigError("duplicate task id " + t.task_id);
            bool has_ref = t.reference_answer.has_value();
            if (params_.mode == OptimizationMode::imitative && !has_ref)
                throw ConfigError("imitative mode needs a reference answer for task " + t.task_id);
        }
        if (!svc_.timestamp) {
            svc_.timestamp = [] {
                return std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                    .count();
            };
        }
        initial_hash_ = graph_hash(graph_);
    }

    const TextualParameterGraph& graph() const noexcept { return graph_; }
    const std::vector<IterationReport>& reports() const noexcept { return reports_; }
    int iteration() const noexcept { return iteration_; }

    IterationResult run_iteration() {
        const int n = ++iteration_;
        const auto started = svc_.clock();
        const std::size_t ledger_mark = svc_.ledger->size();
        IterationReport report;
        report.iteration = n;
        report.tasks = tasks_.size();
        const auto graph_before = graph_;
        const std::string iter_dir = "iter_" + std::to_string(n);
        if (svc_.archive) svc_.archive->write_graph(iter_dir + "/graph_before.json", graph_before);

        // 1. execute
        std::vector<Trajectory> batch;
        if (pending_batch_) {
            batch = std::move(*pending_batch_);
            pending_batch_.reset();
        } else {
            batch = execute(graph_, tasks_, report);
        }
        for (const auto& t : batch) status_[t.task_id] = t.outcome;
        report.passed_before = count_passed(batch);

        // 2. reflect
        std::map<std::string, std::string> references;
        if (params_.mode == OptimizationMode::imitative)
            for (const auto& t : tasks_) references[t.task_id] = *t.reference_answer;
        auto reflections = reflect_batch(batch, references, *svc_.reflector, params_.concurrency);

        // 3. embed, dedupe, cluster (negatives of failed runs only)
        std::set<std::string> failed;
        for (const auto& t : batch)
            if (t.outcome == Outcome::failure) failed.insert(t.task_id);
        std::vector<EmbeddedGradient> negatives;
        std::vector<std::string> texts;
        for (const auto& r : reflections) {
            if (!r.gradient || !failed.contains(r.task_id)) continue;
            for (const auto& s : r.gradient->negative) {
                negatives.push_back({s, {}, {r.task_id}});
                texts.push_back(s);
            }
        }
        std::vector<ErrorCluster> clusters;
        std::vector<EmbeddedGradient> noise, deduped;
        try {
            if (!texts.empty()) {
                auto vectors = embed(*svc_.embedder, texts);
                for (std::size_t i = 0; i < negatives.size(); ++i) negatives[i].vector = std::move(vectors[i]);
            }
            deduped = dedupe(negatives, params_.clustering.dedupe_threshold);
            svc_.gradients->append(deduped, n);
            std::tie(clusters, noise) = cluster(deduped, n);
        } catch (const StorageError&) {
            throw;
        } catch (const Error& e) {
            log("iteration " + std::to_string(n) + ": gradient embedding failed, no clusters: " + e.what());
        }
        report.cluster_count = clusters.size();
        report.noise_count = noise.size();
        std::stable_sort(clusters.begin(), clusters.end(), [](const ErrorCluster& a, const ErrorCluster& b) {
            return a.members.size() > b.members.size();
        });
        if (svc_.archive) write_gradients(iter_dir, reflections, deduped, clusters, noise);

        // 4-5. propose, validate, accept or roll back, record
        Json attempts = Json::array();
        for (std::size_t c = 0; c < clusters.size(); ++c) handle_cluster(n, c, clusters[c], batch, report, attempts);

        // after-state of the full suite; doubles as the next iteration's batch
        auto after = execute(graph_, tasks_, report);
        for (const auto& t : after) status_[t.task_id] = t.outcome;
        report.passed_after = count_passed(after);
        pending_batch_ = std::move(after);

        auto calls = svc_.ledger->snapshot();
        report.calls = calls.size() - ledger_mark;
        report.usage = svc_.ledger->total(ledger_mark);
        report.wall_time = std::chrono::duration_cast<Millis>(svc_.clock() - started);

        // 6. archive
        if (svc_.archive) {
            Json validations = Json::array();
            for (const auto& v : report.validations) validations.push_back(to_json(v));
            svc_.archive->write_json(iter_dir + "/proposals.json", attempts);
            svc_.archive->write_json(iter_dir + "/validations.json", validations);
            svc_.archive->write_json(iter_dir + "/report.json", to_json(report));
            svc_.archive->write_graph(iter_dir + "/graph_after.json", graph_);
        }
        log("iteration " + std::to_string(n) + ": " + std::to_string(report.passed_before) + "/" +
            std::to_string(report.tasks) + " -> " + std::to_string(report.passed_after) + "/" +
            std::to_string(report.tasks) + ", clusters " + std::to_string(report.cluster_count) + ", accepted " +
            std::to_string(report.proposals_accepted) + "/" + std::to_string(report.proposals_attempted));
        reports_.push_back(report);
        return {graph_, report};
    }

    // Up to max_iterations; stops early after two consecutive iterations with
    // no clusters or no accepted proposal.
    OptimizationResult optimize() {
        std::string reason = "iteration budget exhausted";
        int fruitless = 0;
        if (svc_.archive) write_run_meta("running");
        while (iteration_ < params_.max_iterations) {
            auto [g, report] = run_iteration();
            bool fruitful = report.cluster_count > 0 && report.proposals_accepted > 0;
            fruitless = fruitful ? 0 : fruitless + 1;
            if (fruitless >= 2) {
                reason = "two consecutive iterations without accepted proposals";
                break;
            }
        }
        if (svc_.archive) {
            svc_.archive->write_graph("final_graph.json", graph_);
            write_run_meta(reason);
        }
        return {graph_, reports_, reason};
    }

private:
    void log(const std::string& line) const {
        if (svc_.log) svc_.log(line);
    }

    static std::size_t count_passed(const std::vector<Trajectory>& ts) {
        return static_cast<std::size_t>(
            std::count_if(ts.begin(), ts.end(), [](const Trajectory& t) { return t.outcome == Outcome::success; }));
    }

    std::vector<Trajectory> execute(const TextualParameterGraph& g, const std::vector<Task>& tasks, IterationReport& report) {
        if (tasks.empty()) return {};
        report.trajectories += tasks.size();
        return run_batch(g, tasks, *svc_.runner, *svc_.evaluator, params_.concurrency, svc_.ledger.get());
    }

    std::vector<Task> tasks_by_id(const std::vector<std::string>& ids) const {
        std::vector<Task> out;
        for (const auto& t : tasks_)
            if (std::find(ids.begin(), ids.end(), t.task_id) != ids.end()) out.push_back(t);
        return out;
    }

    std::pair<std::vector<ErrorCluster>, std::vector<EmbeddedGradient>> cluster(const std::vector<EmbeddedGradient>& items,
                                                                                int iteration) const {
        if (items.empty()) return {};
        if (params_.ablations.no_clustering) return {singleton_clusters(items), {}};
        auto density = dbscan(items, params_.clustering);
        if (params_.ablations.random_clustering) {
            std::size_t k = std::clamp<std::size_t>(density.clusters.size(), 1, items.size());
            return {random_clusters(items, k, params_.seed + static_cast<std::uint64_t>(iteration)), {}};
        }
        return {std::move(density.clusters), std::move(density.noise)};
    }

    // Up to `spot_check` previously passing tasks outside the subset, drawn with
    // a seeded shuffle from the subset's domain tags (or all passing tasks in
    // full-suite mode).
    std::vector<std::string> spot_check_ids(const std::vector<std::string>& subset, int iteration, std::size_t cluster) const {
        if (params_.validation.spot_check == 0 && !params_.validation.full_suite) return {};
        std::set<std::string> domains;
        for (const auto& t : tasks_by_id(subset)) domains.insert(t.domain_tag);
        std::vector<std::string> pool;
        for (const auto& t : tasks_) {
            if (std::find(subset.begin(), subset.end(), t.task_id) != subset.end()) continue;
            if (status_.at(t.task_id) != Outcome::success) continue;
            if (params_.validation.full_suite || domains.contains(t.domain_tag)) pool.push_back(t.task_id);
        }
        if (params_.validation.full_suite) return pool;
        std::mt19937_64 rng(fnv1a64(std::to_string(params_.seed) + ":" + std::to_string(iteration) + ":" +
                                    std::to_string(cluster)));
        std::size_t m = std::min(params_.validation.spot_check, pool.size());
        for (std::size_t i = 0; i < m; ++i) std::swap(pool[i], pool[i + rng() % (pool.size() - i)]);
        pool.resize(m);
        std::sort(pool.begin(), pool.end());
        return pool;
    }

    void handle_cluster(int n, std::size_t c, const ErrorCluster& cluster, const std::vector<Trajectory>& batch,
                        IterationReport& report, Json& attempts) {
        ValidationReport v;
        v.cluster_index = c;
        v.representative = cluster.representative;
        for (const auto& t : batch)
            if (t.outcome == Outcome::failure && cluster.member_tasks.contains(t.task_id)) v.subset_task_ids.push_back(t.task_id);
        v.subset_size = v.subset_task_ids.size();
        if (v.subset_size == 0) {
            ++report.clusters_skipped;
            log("iteration " + std::to_string(n) + " cluster " + std::to_string(c) + " skipped: no failing task contributed");
            return;
        }

        const LowerOptions lowering{params_.ablations.no_structural_edits};
        EmbeddingVector context_vector;
        OptimizationProposal proposal;
        try {
            context_vector = embed_one(*svc_.embedder, cluster.representative);
            ProposalRequest req{graph_, cluster, {}, params_.ablations.no_grao ? MemoryMode::without_memory : MemoryMode::with_memory};
            if (req.mode == MemoryMode::with_memory)
                req.exemplars = select_exemplars(rank_group(svc_.memory->retrieve(context_vector, params_.grao.k)), params_.grao);
            ProposeOptions popts{lowering, "n" + std::to_string(graph_.version() + 1)};
            proposal = propose(req, *svc_.optimizer, popts);
        } catch (const StorageError&) {
            throw;
        } catch (const Error& e) {
            ++report.clusters_skipped;
            log("iteration " + std::to_string(n) + " cluster " + std::to_string(c) + " skipped: " + e.what());
            return;
        }
        ++report.proposals_attempted;

        const std::string base_hash = graph_hash(graph_);
        std::optional<TextualParameterGraph> candidate;
        try {
            candidate = apply_proposal(graph_, proposal, lowering);
        } catch (const EditError& e) {
            v.note = std::string("apply failed: ") + e.what();
        }

        std::map<std::string, Outcome> observed;
        if (candidate) {
            auto subset_runs = execute(*candidate, tasks_by_id(v.subset_task_ids), report);
            for (const auto& t : subset_runs) {
                observed[t.task_id] = t.outcome;
                if (t.outcome == Outcome::success) ++v.fixed_count;
            }
            v.effectiveness = double(v.fixed_count) / double(v.subset_size);
            v.spot_check_task_ids = spot_check_ids(v.subset_task_ids, n, c);
            for (const auto& t : execute(*candidate, tasks_by_id(v.spot_check_task_ids), report)) {
                observed[t.task_id] = t.outcome;
                if (t.outcome != Outcome::success) ++v.regressions;
            }
            v.accepted = v.effectiveness > params_.validation.acceptance_threshold && v.regressions == 0;
        }

        if (v.accepted) {
            graph_ = std::move(*candidate);
            for (const auto& [id, o] : observed) status_[id] = o;
            ++report.proposals_accepted;
        } else {
            // graph_ was never replaced, so the rollback state is the exact pre-proposal graph
            ++report.proposals_rolled_back;
        }

        ExperienceEntry entry;
        entry.problem_context = cluster.representative;
        entry.context_vector = context_vector;
        entry.proposal = proposal;
        entry.effectiveness = v.effectiveness;
        entry.accepted = v.accepted;
        entry.iteration = n;
        entry.created_at = svc_.timestamp();
        v.entry_id = svc_.memory->record(std::move(entry));

        attempts.push_back(Json{{"cluster_index", c},
                                {"base_version", graph_before_version(v.accepted)},
                                {"base_hash", base_hash},
                                {"result_hash", graph_hash(graph_)},
                                {"accepted", v.accepted},
                                {"effectiveness", v.effectiveness},
                                {"rewrite_only", lowering.rewrite_only},
                                {"entry_id", v.entry_id},
                                {"proposal", to_json(proposal)}});
        report.validations.push_back(v);
    }

    long graph_before_version(bool accepted) const { return accepted ? graph_.version() - 1 : graph_.version(); }

    void write_gradients(const std::string& dir, const std::vector<Reflection>& reflections,
                         const std::vector<EmbeddedGradient>& deduped, const std::vector<ErrorCluster>& clusters,
                         const std::vector<EmbeddedGradient>& noise) const {
        Json refl = Json::array();
        for (const auto& r : reflections) {
            Json j{{"task_id", r.task_id}, {"excluded", r.excluded}, {"skipped", r.skipped},
                   {"low_information", r.low_information}, {"leakage", r.leakage}, {"note", r.note}};
            j["gradient"] = r.gradient ? to_json(*r.gradient) : Json(nullptr);
            refl.push_back(std::move(j));
        }
        Json negs = Json::array();
        for (const auto& g : deduped) negs.push_back(Json{{"text", g.text}, {"sources", g.sources}});
        svc_.archive->write_json(dir + "/gradients.json", Json{{"reflections", refl}, {"negatives", negs}});

        Json cl = Json::array();
        for (const auto& c : clusters) cl.push_back(to_json(c));
        Json nz = Json::array();
        for (const auto& g : noise) nz.push_back(Json{{"text", g.text}, {"sources", g.sources}});
        const char* method = params_.ablations.no_clustering      ? "singleton"
                             : params_.ablations.random_clustering ? "random"
                                                                   : "dbscan";
        svc_.archive->write_json(dir + "/clusters.json", Json{{"method", method}, {"clusters", cl}, {"noise", nz}});
    }

    void write_run_meta(const std::string& status) const {
        Json reports = Json::array();
        for (const auto& r : reports_) reports.push_back(to_json(r));
        Json meta{{"tool", "tpgo"},
                  {"format", 1},
                  {"status", status},
                  {"params", to_json(params_)},
                  {"tasks", tasks_.size()},
                  {"iterations", iteration_},
                  {"initial_graph_hash", initial_hash_},
                  {"final_graph_hash", graph_hash(graph_)},
                  {"memory_entries", svc_.memory->size()},
                  {"reports", reports}};
        if (!reports_.empty()) meta["cost"] = to_json(cost_report(reports_));
        svc_.archive->write_json("run_meta.json", meta);
    }

    TextualParameterGraph graph_;
    std::vector<Task> tasks_;
    LoopParams params_;
    LoopServices svc_;
    std::map<std::string, Outcome> status_;
    std::optional<std::vector<Trajectory>> pending_batch_;
    std::vector<IterationReport> reports_;
    std::string initial_hash_;
    int iteration_ = 0;
};

}  // namespace tpgo
