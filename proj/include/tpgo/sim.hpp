#pragma once

// Offline test bed: a rule-based agent, its evaluator, a scripted chat
// transport, and the built-in convergence/stability suites.

#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "tpgo/orchestrator.hpp"

namespace tpgo::sim {

struct SyntheticTask {
    Task task;
    std::vector<std::string> required_markers;  // matched as plain substrings
    std::string failure_family;
    bool operator==(const SyntheticTask&) const = default;
};

inline Json to_json(const SyntheticTask& t) {
    Json j = tpgo::to_json(t.task);
    j["required_markers"] = t.required_markers;
    j["failure_family"] = t.failure_family;
    return j;
}

inline SyntheticTask synthetic_task_from_json(const Json& j) {
    SyntheticTask t;
    t.task = task_from_json(j);
    t.required_markers = j.at("required_markers").get<std::vector<std::string>>();
    t.failure_family = j.at("failure_family").get<std::string>();
    if (t.required_markers.empty()) throw SchemaError("required-markers", "task " + t.task.task_id + " has no markers");
    return t;
}

inline std::vector<Task> plain_tasks(const std::vector<SyntheticTask>& ts) {
    std::vector<Task> out;
    for (const auto& t : ts) out.push_back(t.task);
    return out;
}

inline std::string failure_line(const SyntheticTask& t) {
    return "Task " + t.task.task_id + " failed: missing guidance for the " + t.failure_family + " family.";
}

// Succeeds iff every required marker occurs in the concatenated config.
class RuleRunner : public AgentRunner {
public:
    explicit RuleRunner(std::vector<SyntheticTask> tasks) : tasks_(std::move(tasks)) {}

    Trajectory run(const MaterializedConfig& config, const Task& task) override {
        const SyntheticTask& st = lookup(task.task_id);
        const std::string text = concatenate(config);
        std::vector<std::string> missing;
        for (const auto& m : st.required_markers)
            if (text.find(m) == std::string::npos) missing.push_back(m);

        Trajectory t;
        t.task_id = task.task_id;
        t.query = task.query;
        t.steps.push_back({"agent", StepKind::reasoning, "Reading the task: " + task.query});
        t.steps.push_back({"agent", StepKind::tool_call, "check_instructions(" + std::to_string(st.required_markers.size()) + ")"});
        t.steps.push_back({"tool", StepKind::tool_result,
                           std::to_string(st.required_markers.size() - missing.size()) + " of " +
                               std::to_string(st.required_markers.size()) + " instructions present"});
        if (missing.empty()) {
            t.steps.push_back({"agent", StepKind::message, "Task " + task.task_id + " succeeded."});
            t.final_answer = "answer-" + task.task_id;
        } else {
            t.steps.push_back({"agent", StepKind::message, failure_line(st)});
            t.final_answer = "incomplete";
        }
        t.usage.prompt_tokens = estimate_tokens(text) + estimate_tokens(task.query);
        t.usage.completion_tokens = estimate_tokens(*t.final_answer) + 16;
        return t;
    }

private:
    const SyntheticTask& lookup(const std::string& id) const {
        for (const auto& t : tasks_)
            if (t.task.task_id == id) return t;
        throw NotFoundError("unknown synthetic task " + id);
    }

    std::vector<SyntheticTask> tasks_;
};

class RuleEvaluator : public Evaluator {
public:
    Outcome judge(const Trajectory& t, const Task& task) override {
        return t.final_answer && *t.final_answer == "answer-" + task.task_id ? Outcome::success : Outcome::failure;
    }
};

// ---------------------------------------------------------------------------
// Scripted chat transport.
//
// A rule matches on role plus every condition; a condition looks for a
// substring inside one "## <section>" block of the user messages (an empty
// section searches every message). Rules are tried in order. Each rule hands
// out its responses in sequence and repeats the last one once exhausted.

struct ScriptCondition {
    std::string section;
    std::string contains;
    bool operator==(const ScriptCondition&) const = default;
};

struct ScriptRule {
    std::string role;
    std::vector<ScriptCondition> when;
    std::vector<std::string> responses;
    bool operator==(const ScriptRule&) const = default;
};

struct ScriptedCall {
    std::string role;
    std::string fingerprint;  // hex64 hash of the message list
    int rule = -1;            // index of the matching rule, -1 if none
};

// Text of the "## name" block: from the heading line to the next "## " heading.
inline std::string section_text(const std::string& text, const std::string& name) {
    const std::string heading = "## " + name + "\n";
    std::size_t at = text.rfind("\n" + heading);
    if (at != std::string::npos) ++at;
    else if (text.starts_with(heading)) at = 0;
    else return {};
    std::size_t begin = at + heading.size();
    std::size_t end = text.find("\n## ", begin);
    return text.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

inline std::string message_fingerprint(const std::vector<Message>& messages) {
    std::string all;
    for (const auto& m : messages) all += m.role + "\x1f" + m.content + "\x1e";
    return hex64(fnv1a64(all));
}

class ScriptedProvider : public ChatTransport {
public:
    explicit ScriptedProvider(std::vector<ScriptRule> rules = {}, bool strict = true)
        : rules_(std::move(rules)), cursor_(rules_.size(), 0), strict_(strict) {}

    void add(ScriptRule rule) {
        std::lock_guard lock(mu_);
        rules_.push_back(std::move(rule));
        cursor_.push_back(0);
    }

    // Used for unmatched requests when not strict.
    void set_fallback(std::string response) { fallback_ = std::move(response); }

    ChatReply send(const ChatRequest& req) override {
        std::string user;
        for (const auto& m : req.messages)
            if (m.role == "user") user += m.content + "\n";
        std::lock_guard lock(mu_);
        ScriptedCall call{req.role, message_fingerprint(req.messages), -1};
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            const auto& r = rules_[i];
            if (r.role != req.role || r.responses.empty()) continue;
            bool ok = std::all_of(r.when.begin(), r.when.end(), [&](const ScriptCondition& c) {
                std::string hay = c.section.empty() ? user : section_text(user, c.section);
                return hay.find(c.contains) != std::string::npos;
            });
            if (!ok) continue;
            call.rule = static_cast<int>(i);
            log_.push_back(call);
            std::size_t k = std::min(cursor_[i]++, r.responses.size() - 1);
            return ChatReply{r.responses[k], std::nullopt};
        }
        log_.push_back(call);
        if (!strict_ && fallback_) return ChatReply{*fallback_, std::nullopt};
        throw ProviderRejection("no scripted response for " + req.role + " request " + call.fingerprint);
    }

    std::vector<ScriptedCall> calls() const {
        std::lock_guard lock(mu_);
        return log_;
    }

    const std::vector<ScriptRule>& rules() const noexcept { return rules_; }
    bool strict() const noexcept { return strict_; }

private:
    std::vector<ScriptRule> rules_;
    std::vector<std::size_t> cursor_;
    bool strict_;
    std::optional<std::string> fallback_;
    mutable std::mutex mu_;
    std::vector<ScriptedCall> log_;
};

inline Json to_json(const ScriptRule& r) {
    Json when = Json::array();
    for (const auto& c : r.when) when.push_back(Json{{"section", c.section}, {"contains", c.contains}});
    return Json{{"role", r.role}, {"when", when}, {"responses", r.responses}};
}

inline ScriptRule script_rule_from_json(const Json& j) {
    ScriptRule r;
    r.role = j.at("role").get<std::string>();
    if (j.contains("when"))
        for (const auto& c : j.at("when")) r.when.push_back({c.value("section", ""), c.at("contains").get<std::string>()});
    r.responses = j.at("responses").get<std::vector<std::string>>();
    if (r.responses.empty()) throw SchemaError("responses", "script rule for " + r.role + " has no responses");
    return r;
}

inline Json script_to_json(const std::vector<ScriptRule>& rules, bool strict) {
    Json rs = Json::array();
    for (const auto& r : rules) rs.push_back(to_json(r));
    return Json{{"strict", strict}, {"rules", rs}};
}

inline std::shared_ptr<ScriptedProvider> script_from_json(const Json& j) {
    std::vector<ScriptRule> rules;
    for (const auto& r : j.at("rules")) rules.push_back(script_rule_from_json(r));
    return std::make_shared<ScriptedProvider>(std::move(rules), j.value("strict", true));
}

// ---------------------------------------------------------------------------
// Built-in suites

struct Fixture {
    std::string name;
    TextualParameterGraph graph;
    std::vector<SyntheticTask> tasks;
    std::vector<ScriptRule> script;
    std::uint64_t embed_seed = 0;
};

inline Json to_json(const Fixture& f) {
    Json tasks = Json::array();
    for (const auto& t : f.tasks) tasks.push_back(to_json(t));
    return Json{{"name", f.name}, {"embed_seed", f.embed_seed}, {"graph", tpgo::to_json(f.graph)},
                {"tasks", tasks}, {"script", script_to_json(f.script, true)}};
}

inline Fixture fixture_from_json(const Json& j) {
    Fixture f{j.at("name").get<std::string>(), from_json(j.at("graph")), {}, {}, j.value("embed_seed", std::uint64_t{0})};
    for (const auto& t : j.at("tasks")) f.tasks.push_back(synthetic_task_from_json(t));
    for (const auto& r : j.at("script").at("rules")) f.script.push_back(script_rule_from_json(r));
    return f;
}

namespace detail {

inline std::string reflection_json(const std::string& summary, const std::vector<std::string>& errors,
                                   const std::vector<std::string>& experiences) {
    return Json{{"summary", summary}, {"error_list", errors}, {"experience_list", experiences}}.dump();
}

inline std::string add_leaf_proposal(const std::string& context, const std::string& parent, const std::string& title,
                                     const std::string& kind, const std::string& content) {
    Json mod{{"operation", op::kAddNode},
             {"target", {{"parent", parent}}},
             {"new_node", {{"title", title}, {"type", kind}, {"content", content}}},
             {"addresses_errors", {0}},
             {"rationale", "Add the missing instruction as its own section."}};
    return Json{{"problem_context", context}, {"modifications", {mod}}}.dump(2);
}

inline std::string rewrite_proposal(const std::string& context, const std::string& node, const std::string& content) {
    Json mod{{"operation", op::kRewriteNode},
             {"target", {{"node", node}}},
             {"new_content", content},
             {"addresses_errors", {0}},
             {"rationale", "Fold the missing instruction into the existing guidance."}};
    return Json{{"problem_context", context}, {"modifications", {mod}}}.dump(2);
}

// Per-task reflector rules. Each failing task gets its family's canonical
// gradient plus a bracketed task id, which keeps same-family gradients close
// (cosine well under the dedupe threshold, well inside eps) without merging them.
inline void add_reflector_rules(std::vector<ScriptRule>& script, const std::vector<SyntheticTask>& tasks,
                                const std::map<std::string, std::string>& canonical) {
    for (const auto& t : tasks) {
        std::string tag = "Task " + t.task.task_id + ":";
        auto it = canonical.find(t.failure_family);
        if (it == canonical.end()) continue;
        script.push_back({"reflector",
                          {{"Task", tag}, {"Trajectory", "the " + t.failure_family + " family"}},
                          {reflection_json("The run stopped without the guidance it needed.",
                                           {it->second + " [" + t.task.task_id + "]"}, {})}});
    }
    script.push_back({"reflector",
                      {{"Trajectory", "succeeded."}},
                      {reflection_json("The run completed as instructed.", {}, {"Following the listed instructions worked."})}});
}

inline std::vector<SyntheticTask> assign_families(const std::vector<std::string>& families, std::uint64_t seed) {
    std::vector<std::string> order = families;
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    std::vector<SyntheticTask> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        SyntheticTask t;
        t.task.task_id = (i + 1 < 10 ? "t0" : "t") + std::to_string(i + 1);
        t.failure_family = order[i];
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace detail

namespace convergence {
inline const std::string kCore = "Restate the question before answering.";
inline const std::map<std::string, std::string> kMarkers{
    {"alpha", "Verify every citation against its source document."},
    {"beta", "Report units and measurement precision for every number."},
    {"gamma", "Return the answer in the requested output format."},
};
inline const std::map<std::string, std::string> kGradients{
    {"alpha", "The agent never verified citations against the original source documents"},
    {"beta", "Numbers were reported without units or any precision estimate"},
    {"gamma", "Ignored the requested output format and replied with free prose"},
};
inline const std::map<std::string, std::string> kKeywords{{"alpha", "citations"}, {"beta", "units"}, {"gamma", "format"}};
}  // namespace convergence

// Ten tasks: four need only the core instruction (already present), two each
// from the alpha, beta and gamma families also need one family instruction.
// `poisoned` makes the optimizer's first beta answer rewrite the core
// instruction away.
inline Fixture build_convergence_suite(std::uint64_t seed = 7, bool poisoned = false) {
    using namespace convergence;
    GraphData d;
    auto leaf = [&](const std::string& id, const std::string& title, NodeKind k, const std::string& content) {
        d.nodes.emplace(NodeId(id), PromptNode{NodeId(id), title, k, content, {}});
    };
    auto inner = [&](const std::string& id, const std::string& title, NodeKind k, std::vector<std::string> kids) {
        PromptNode n{NodeId(id), title, k, {}, {}};
        for (auto& c : kids) n.children.emplace_back(c);
        d.nodes.emplace(NodeId(id), std::move(n));
    };
    inner("main.0", "Research Assistant", NodeKind::generic, {"main.1", "main.2", "main.4"});
    leaf("main.1", "Persona", NodeKind::role, "You are a careful research assistant.");
    inner("main.2", "Workflow", NodeKind::logic, {"main.3"});
    leaf("main.3", "Core rule", NodeKind::logic, kCore);
    inner("main.4", "Tools", NodeKind::tool, {"main.5"});
    leaf("main.5", "Search", NodeKind::tool, "Use the search tool for every factual question.");
    d.roots.emplace_back("main.0");
    d.edges.insert(Edge{NodeId("main.5"), NodeId("main.3"), "informs"});
    Fixture f{poisoned ? "convergence-poisoned" : "convergence", TextualParameterGraph::make(std::move(d)), {}, {}, 0};

    f.tasks = detail::assign_families(
        {"core", "core", "core", "core", "alpha", "alpha", "beta", "beta", "gamma", "gamma"}, seed);
    for (auto& t : f.tasks) {
        t.task.query = "Task " + t.task.task_id + ": prepare a short research brief (" + t.failure_family + ").";
        t.task.domain_tag = "research";
        t.required_markers = {kCore};
        if (t.failure_family != "core") t.required_markers.push_back(kMarkers.at(t.failure_family));
    }

    detail::add_reflector_rules(f.script, f.tasks, kGradients);
    for (const auto& [family, marker] : kMarkers) {
        std::vector<std::string> responses;
        if (poisoned && family == "beta")
            responses.push_back(detail::rewrite_proposal(kGradients.at(family), "main.3", marker));
        responses.push_back(detail::add_leaf_proposal(kGradients.at(family), "main.2",
                                                      "Rule " + family, "logic", marker));
        f.script.push_back({"optimizer", {{"Error cluster", kKeywords.at(family)}}, responses});
    }
    return f;
}

namespace stability {
inline const std::string kBase = "Answer concisely.";
inline const std::string kCite = "Cite a source for every claim.";
inline const std::string kConfidence = "State a confidence level for each conclusion.";
inline const std::string kCiteGradient = "Claims were made with no supporting source or citation attached";
inline const std::string kConfidenceGradient = "Conclusions were stated without any confidence level or hedging";
}  // namespace stability

// Two families share one leaf. Without memory the optimizer fixes each family
// by rewriting that leaf, which erases the other family's fix; with the earlier
// fix visible among past experiences it adds a separate leaf instead. The
// families sit in different domains, so the same-domain spot check cannot
// catch the breakage.
inline Fixture build_stability_suite() {
    using namespace stability;
    GraphData d;
    d.nodes.emplace(NodeId("main.0"), PromptNode{NodeId("main.0"), "Analyst", NodeKind::generic, {},
                                                 {NodeId("main.1"), NodeId("main.2")}});
    d.nodes.emplace(NodeId("main.1"), PromptNode{NodeId("main.1"), "Persona", NodeKind::role, "You are a helpful analyst.", {}});
    d.nodes.emplace(NodeId("main.2"), PromptNode{NodeId("main.2"), "Style", NodeKind::logic, kBase, {}});
    d.roots.emplace_back("main.0");
    Fixture f{"stability", TextualParameterGraph::make(std::move(d)), {}, {}, 0};

    auto task = [&](const std::string& id, const std::string& family, const std::string& domain,
                    std::vector<std::string> markers) {
        SyntheticTask t;
        t.task = {id, "Task " + id + ": write a short analysis (" + family + ").", std::nullopt, domain};
        t.required_markers = std::move(markers);
        t.failure_family = family;
        f.tasks.push_back(std::move(t));
    };
    task("t01", "citation", "citations", {kBase, kCite});
    task("t02", "citation", "citations", {kBase, kCite});
    task("t03", "citation", "citations", {kBase, kCite});
    task("t04", "confidence", "confidence", {kBase, kConfidence});
    task("t05", "confidence", "confidence", {kBase, kConfidence});
    task("t06", "general", "general", {kBase});

    detail::add_reflector_rules(f.script, f.tasks,
                                {{"citation", kCiteGradient}, {"confidence", kConfidenceGradient}});
    // memory-aware answers come first so they win when the earlier fix is visible
    f.script.push_back({"optimizer",
                        {{"Error cluster", "source"}, {"Past experiences", kConfidence}},
                        {detail::add_leaf_proposal(kCiteGradient, "main.0", "Citations", "logic", kCite)}});
    f.script.push_back({"optimizer",
                        {{"Error cluster", "confidence"}, {"Past experiences", kCite}},
                        {detail::add_leaf_proposal(kConfidenceGradient, "main.0", "Confidence", "logic", kConfidence)}});
    f.script.push_back({"optimizer",
                        {{"Error cluster", "source"}},
                        {detail::rewrite_proposal(kCiteGradient, "main.2", kBase + " " + kCite)}});
    f.script.push_back({"optimizer",
                        {{"Error cluster", "confidence"}},
                        {detail::rewrite_proposal(kConfidenceGradient, "main.2", kBase + " " + kConfidence)}});
    return f;
}

inline Fixture build_fixture(const std::string& name, std::uint64_t seed = 7) {
    if (name == "convergence") return build_convergence_suite(seed, false);
    if (name == "convergence-poisoned") return build_convergence_suite(seed, true);
    if (name == "stability") return build_stability_suite();
    throw ConfigError("unknown fixture \"" + name + "\" (convergence, convergence-poisoned, stability)");
}

// Everything needed to run a fixture through the loop offline.
struct SimRun {
    Fixture fixture;
    std::shared_ptr<ScriptedProvider> provider;
    LoopServices services;
};

inline ModelConfig offline_model(const std::string& name) {
    ModelConfig m;
    m.model_name = name;
    m.backoff_base = Millis{0};
    return m;
}

// Deterministic services: frozen clock, counter timestamps, no-op sleeper.
inline SimRun make_sim_run(Fixture f, std::shared_ptr<ArchiveWriter> archive = nullptr, std::string memory_path = {}) {
    auto provider = std::make_shared<ScriptedProvider>(f.script, true);
    SimRun run{std::move(f), provider, {}};
    const Fixture& fx = run.fixture;
    auto& s = run.services;
    s.runner = std::make_shared<RuleRunner>(fx.tasks);
    s.evaluator = std::make_shared<RuleEvaluator>();
    s.ledger = std::make_shared<UsageLedger>();
    Sleeper no_sleep = [](Millis) {};
    s.reflector = std::make_shared<ChatGateway>("reflector", offline_model("scripted"), run.provider, s.ledger, no_sleep, frozen_clock());
    s.optimizer = std::make_shared<ChatGateway>("optimizer", offline_model("scripted"), run.provider, s.ledger, no_sleep, frozen_clock());
    s.embedder = std::make_shared<HashEmbedder>(fx.embed_seed);
    s.memory = std::make_shared<ExperienceMemory>(std::move(memory_path));
    s.gradients = std::make_shared<GradientStore>();
    s.archive = std::move(archive);
    s.clock = frozen_clock();
    auto counter = std::make_shared<std::int64_t>(0);
    s.timestamp = [counter] { return ++*counter; };
    return run;
}

inline Orchestrator make_orchestrator(SimRun& run, LoopParams params) {
    return Orchestrator(run.fixture.graph, plain_tasks(run.fixture.tasks), std::move(params), run.services);
}

}  // namespace tpgo::sim
