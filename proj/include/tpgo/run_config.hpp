#pragma once

// Run configuration file -> wired LoopServices. Relative paths resolve
// against the config file's directory.
//
// {
//   "task_suite": "tasks.json",          // [Task...] or {"tasks": [...]}
//   "initial_graph": "graph.json",
//   "archive_dir": "runs/demo",
//   "memory_path": "shared/memory.jsonl", // optional; default <archive_dir>/memory.jsonl
//   "mode": "exploratory" | "imitative",
//   "runner": {"type": "rule"} | {"type": "command", "command": "./agent"},
//   "evaluator": "rule" | "reference" | "trajectory",
//   "providers": {
//     "reflector": {"type": "openai", "model": "...", "endpoint": "https://host/v1"} | {"type": "scripted", "script": "s.json"},
//     "optimizer": {...},
//     "parser":    {...},
//     "embedder":  {"type": "hash", "seed": 0} | {"type": "openai", "model": "..."}
//   },
//   "clustering": {"eps": 0.3, "min_samples": 2, "dedupe_threshold": 0.95},
//   "grao": {"k": 8, "n_pos": 2, "n_neg": 1, "pos_floor": 0.5, "neg_ceiling": 0.25},
//   "validation": {"spot_check": 3, "acceptance_threshold": 0.0, "full_suite": false},
//   "concurrency": 8, "max_iterations": 5, "seed": 0,
//   "ablations": {"no_graph": false, "no_structural_edits": false, "no_clustering": false,
//                 "random_clustering": false, "no_grao": false}
// }
//
// OpenAI-type providers take "endpoint" from the role entry or TPGO_API_BASE,
// and the key from TPGO_API_KEY. Optional per-role knobs: temperature, top_p,
// max_retries, backoff_ms.

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <string>

#include "tpgo/openai.hpp"
#include "tpgo/sim.hpp"

namespace tpgo {

// Runs an external agent per task. The command reads
// {"config": {root id: text}, "task": {...}} on stdin and prints a trajectory
// document on stdout. A non-zero exit throws, which run_batch records as an
// environment failure.
class CommandRunner : public AgentRunner {
public:
    explicit CommandRunner(std::string command) : command_(std::move(command)) {}

    Trajectory run(const MaterializedConfig& config, const Task& task) override {
        Json cfg = Json::object();
        for (const auto& p : config) cfg[p.root.value] = p.text;
        Json input{{"config", cfg}, {"task", to_json(task)}};

        auto dir = std::filesystem::temp_directory_path();
        static std::atomic<unsigned long> counter{0};
        auto in_path = dir / ("tpgo-agent-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".json");
        write_file(in_path.string(), input.dump());
        std::string cmd = command_ + " < '" + in_path.string() + "'";
        std::string out;
        int status = -1;
        if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
            char buf[4096];
            std::size_t n;
            while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
            status = ::pclose(pipe);
        }
        std::filesystem::remove(in_path);
        if (status != 0) throw Error("agent command exited with status " + std::to_string(status));
        try {
            auto t = trajectory_from_json(Json::parse(out));
            t.task_id = task.task_id;
            return t;
        } catch (const std::exception& e) {
            throw Error(std::string("agent command printed no trajectory: ") + e.what());
        }
    }

private:
    std::string command_;
};

// Exact match against the reference answer (whitespace-trimmed).
class ReferenceEvaluator : public Evaluator {
public:
    Outcome judge(const Trajectory& t, const Task& task) override {
        if (!t.final_answer || !task.reference_answer) return Outcome::failure;
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r\n"));
            s.erase(s.find_last_not_of(" \t\r\n") + 1);
            return s;
        };
        return trim(*t.final_answer) == trim(*task.reference_answer) ? Outcome::success : Outcome::failure;
    }
};

// Trusts the outcome the runner reported.
class TrajectoryEvaluator : public Evaluator {
public:
    Outcome judge(const Trajectory& t, const Task&) override {
        return t.outcome == Outcome::success ? Outcome::success : Outcome::failure;
    }
};

struct RunConfig {
    std::filesystem::path base_dir;
    Json doc;
    LoopParams params;
    std::filesystem::path task_suite;
    std::filesystem::path initial_graph;
    std::filesystem::path archive_dir;
    std::filesystem::path memory_path;
};

namespace detail {

template <class T>
T config_value(const Json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(where + key + " has the wrong type");
    }
}

inline std::filesystem::path required_path(const RunConfig& c, const char* key) {
    if (!c.doc.contains(key) || !c.doc.at(key).is_string() || c.doc.at(key).get<std::string>().empty())
        throw ConfigError("missing required key \"" + std::string(key) + "\"");
    std::filesystem::path p = c.doc.at(key).get<std::string>();
    return p.is_absolute() ? p : c.base_dir / p;
}

}  // namespace detail

inline LoopParams loop_params_from_json(const Json& j) {
    using detail::config_value;
    LoopParams p;
    std::string mode = config_value<std::string>(j, "mode", "exploratory", "");
    if (mode == "imitative") p.mode = OptimizationMode::imitative;
    else if (mode != "exploratory") throw ConfigError("mode must be \"exploratory\" or \"imitative\"");
    const Json empty = Json::object();
    const Json& cl = j.contains("clustering") ? j.at("clustering") : empty;
    p.clustering.eps = config_value(cl, "eps", p.clustering.eps, "clustering.");
    p.clustering.min_samples = config_value(cl, "min_samples", p.clustering.min_samples, "clustering.");
    p.clustering.dedupe_threshold = config_value(cl, "dedupe_threshold", p.clustering.dedupe_threshold, "clustering.");
    p.clustering.validate();
    const Json& g = j.contains("grao") ? j.at("grao") : empty;
    p.grao.k = config_value(g, "k", p.grao.k, "grao.");
    p.grao.n_pos = config_value(g, "n_pos", p.grao.n_pos, "grao.");
    p.grao.n_neg = config_value(g, "n_neg", p.grao.n_neg, "grao.");
    p.grao.pos_floor = config_value(g, "pos_floor", p.grao.pos_floor, "grao.");
    p.grao.neg_ceiling = config_value(g, "neg_ceiling", p.grao.neg_ceiling, "grao.");
    const Json& v = j.contains("validation") ? j.at("validation") : empty;
    p.validation.spot_check = config_value(v, "spot_check", p.validation.spot_check, "validation.");
    p.validation.acceptance_threshold = config_value(v, "acceptance_threshold", p.validation.acceptance_threshold, "validation.");
    p.validation.full_suite = config_value(v, "full_suite", p.validation.full_suite, "validation.");
    const Json& a = j.contains("ablations") ? j.at("ablations") : empty;
    p.ablations.no_graph = config_value(a, "no_graph", false, "ablations.");
    p.ablations.no_structural_edits = config_value(a, "no_structural_edits", false, "ablations.");
    p.ablations.no_clustering = config_value(a, "no_clustering", false, "ablations.");
    p.ablations.random_clustering = config_value(a, "random_clustering", false, "ablations.");
    p.ablations.no_grao = config_value(a, "no_grao", false, "ablations.");
    if (p.ablations.no_clustering && p.ablations.random_clustering)
        throw ConfigError("no_clustering and random_clustering are mutually exclusive");
    p.concurrency = config_value(j, "concurrency", p.concurrency, "");
    p.max_iterations = config_value(j, "max_iterations", p.max_iterations, "");
    p.seed = config_value(j, "seed", p.seed, "");
    if (p.concurrency < 1) throw ConfigError("concurrency must be >= 1");
    if (p.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    return p;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c;
    c.base_dir = path.parent_path();
    std::string text;
    try {
        text = read_file(path.string());
    } catch (const StorageError& e) {
        throw ConfigError(e.what());
    }
    try {
        c.doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!c.doc.is_object()) throw ConfigError("config must be a JSON object");
    c.params = loop_params_from_json(c.doc);
    c.task_suite = detail::required_path(c, "task_suite");
    c.initial_graph = detail::required_path(c, "initial_graph");
    c.archive_dir = detail::required_path(c, "archive_dir");
    c.memory_path = c.doc.contains("memory_path") ? detail::required_path(c, "memory_path") : c.archive_dir / "memory.jsonl";
    return c;
}

inline ModelConfig model_config_from_json(const Json& j, const std::string& where) {
    using detail::config_value;
    ModelConfig m;
    m.model_name = config_value<std::string>(j, "model", "", where);
    m.temperature = config_value(j, "temperature", m.temperature, where);
    m.top_p = config_value(j, "top_p", m.top_p, where);
    m.max_retries = config_value(j, "max_retries", m.max_retries, where);
    m.backoff_base = Millis{config_value<long>(j, "backoff_ms", m.backoff_base.count(), where)};
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
    }
    return m;
}

inline const Json& provider_entry(const Json& doc, const std::string& role) {
    if (!doc.contains("providers") || !doc.at("providers").contains(role))
        throw ConfigError("missing required key \"providers." + role + "\"");
    return doc.at("providers").at(role);
}

inline Endpoint provider_endpoint(const Json& entry, const std::string& role) {
    if (entry.contains("endpoint")) return parse_endpoint(entry.at("endpoint").get<std::string>());
    if (auto env = env_var("TPGO_API_BASE")) return parse_endpoint(*env);
    throw ConfigError("missing required key \"providers." + role + ".endpoint\" (or set TPGO_API_BASE)");
}

inline std::shared_ptr<ChatGateway> make_chat_gateway(const RunConfig& c, const std::string& role,
                                                      std::shared_ptr<UsageLedger> ledger) {
    const Json& e = provider_entry(c.doc, role);
    std::string where = "providers." + role + ".";
    std::string type = detail::config_value<std::string>(e, "type", "openai", where);
    auto model = model_config_from_json(e, where);
    std::shared_ptr<ChatTransport> transport;
    if (type == "scripted") {
        if (!e.contains("script")) throw ConfigError("missing required key \"" + where + "script\"");
        std::filesystem::path p = e.at("script").get<std::string>();
        if (p.is_relative()) p = c.base_dir / p;
        try {
            transport = sim::script_from_json(Json::parse(read_file(p.string())));
        } catch (const Json::exception& ex) {
            throw ConfigError("bad script " + p.string() + ": " + ex.what());
        } catch (const StorageError& ex) {
            throw ConfigError(ex.what());
        }
    } else if (type == "openai") {
        if (model.model_name.empty()) throw ConfigError("missing required key \"" + where + "model\"");
        transport = std::make_shared<OpenAIChatTransport>(provider_endpoint(e, role), env_var("TPGO_API_KEY").value_or(""));
    } else {
        throw ConfigError(where + "type must be \"openai\" or \"scripted\"");
    }
    return std::make_shared<ChatGateway>(role, model, transport, std::move(ledger));
}

inline std::shared_ptr<EmbeddingProvider> make_embedder(const RunConfig& c) {
    const Json& e = provider_entry(c.doc, "embedder");
    std::string type = detail::config_value<std::string>(e, "type", "hash", "providers.embedder.");
    if (type == "hash") return std::make_shared<HashEmbedder>(detail::config_value<std::uint64_t>(e, "seed", 0, "providers.embedder."));
    if (type == "openai") {
        auto model = model_config_from_json(e, "providers.embedder.");
        if (model.model_name.empty()) throw ConfigError("missing required key \"providers.embedder.model\"");
        return std::make_shared<OpenAIEmbedder>(provider_endpoint(e, "embedder"), env_var("TPGO_API_KEY").value_or(""), model);
    }
    throw ConfigError("providers.embedder.type must be \"hash\" or \"openai\"");
}

// Synthetic tasks (with markers) when the suite carries them, plain tasks otherwise.
inline std::vector<sim::SyntheticTask> load_task_suite(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path.string()));
    } catch (const Json::exception& e) {
        throw ConfigError("task suite " + path.string() + " is not valid JSON: " + e.what());
    } catch (const StorageError& e) {
        throw ConfigError(e.what());
    }
    const Json& list = j.is_object() && j.contains("tasks") ? j.at("tasks") : j;
    if (!list.is_array() || list.empty()) throw ConfigError("task suite " + path.string() + " has no tasks");
    std::vector<sim::SyntheticTask> out;
    try {
        for (const auto& t : list) {
            if (t.contains("required_markers")) {
                out.push_back(sim::synthetic_task_from_json(t));
            } else {
                sim::SyntheticTask st;
                st.task = task_from_json(t);
                out.push_back(std::move(st));
            }
        }
    } catch (const Error& e) {
        throw ConfigError(std::string("task suite: ") + e.what());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("task suite: ") + e.what());
    }
    return out;
}

struct WiredRun {
    TextualParameterGraph graph;
    std::vector<Task> tasks;
    LoopServices services;
};

// Builds everything optimize() needs; the archive itself is attached by the caller.
inline WiredRun wire_run(const RunConfig& c) {
    auto synthetic = load_task_suite(c.task_suite);
    TextualParameterGraph graph = [&] {
        try {
            return load_graph(c.initial_graph.string());
        } catch (const StorageError& e) {
            throw ConfigError(e.what());
        } catch (const SchemaError& e) {
            throw ConfigError("initial graph: " + std::string(e.what()));
        }
    }();

    LoopServices s;
    s.ledger = std::make_shared<UsageLedger>();
    const Json empty = Json::object();
    const Json& runner = c.doc.contains("runner") ? c.doc.at("runner") : empty;
    std::string runner_type = detail::config_value<std::string>(runner, "type", "rule", "runner.");
    std::string default_eval = runner_type == "rule" ? "rule" : "trajectory";
    if (runner_type == "rule") {
        for (const auto& t : synthetic)
            if (t.required_markers.empty())
                throw ConfigError("rule runner needs required_markers on task " + t.task.task_id);
        s.runner = std::make_shared<sim::RuleRunner>(synthetic);
    } else if (runner_type == "command") {
        if (!runner.contains("command")) throw ConfigError("missing required key \"runner.command\"");
        s.runner = std::make_shared<CommandRunner>(runner.at("command").get<std::string>());
    } else {
        throw ConfigError("runner.type must be \"rule\" or \"command\"");
    }
    std::string eval = detail::config_value<std::string>(c.doc, "evaluator", default_eval, "");
    if (eval == "rule") s.evaluator = std::make_shared<sim::RuleEvaluator>();
    else if (eval == "reference") s.evaluator = std::make_shared<ReferenceEvaluator>();
    else if (eval == "trajectory") s.evaluator = std::make_shared<TrajectoryEvaluator>();
    else throw ConfigError("evaluator must be \"rule\", \"reference\" or \"trajectory\"");

    s.reflector = make_chat_gateway(c, "reflector", s.ledger);
    s.optimizer = make_chat_gateway(c, "optimizer", s.ledger);
    s.embedder = make_embedder(c);
    return {std::move(graph), sim::plain_tasks(synthetic), std::move(s)};
}

}  // namespace tpgo
