// tpgo command-line driver.
//
// Exit codes: 0 success, 1 provider/runtime failure or replay mismatch,
// 2 configuration or usage error, 3 storage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tpgo/diff.hpp"
#include "tpgo/parser.hpp"
#include "tpgo/run_config.hpp"

namespace fs = std::filesystem;
using namespace tpgo;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfig = 2;
constexpr int kStorage = 3;

std::string first_line(const std::string& s, std::size_t width = 72) {
    std::string line = s.substr(0, s.find('\n'));
    if (line.size() > width) line = line.substr(0, width - 3) + "...";
    return line;
}

std::string ratio(std::size_t a, std::size_t b) { return std::to_string(a) + "/" + std::to_string(b); }

// ---------------------------------------------------------------------------
// parse

struct ParseArgs {
    std::vector<std::string> prompts;
    std::vector<std::string> labels;
    std::string out;
    std::string config;
    std::string script;
};

std::string label_for(const std::string& path) {
    std::string stem = fs::path(path).stem().string();
    std::string out;
    for (char c : stem) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out.empty() ? "prompt" : out;
}

int cmd_parse(const ParseArgs& a) {
    if (!a.labels.empty() && a.labels.size() != a.prompts.size())
        throw ConfigError("give one --label per --prompt, or none");
    if (a.config.empty() == a.script.empty()) throw ConfigError("parse needs exactly one of --config or --script");

    std::vector<std::pair<std::string, std::string>> inputs;  // label, text
    for (std::size_t i = 0; i < a.prompts.size(); ++i) {
        std::string text;
        try {
            text = read_file(a.prompts[i]);
        } catch (const StorageError& e) {
            throw ConfigError(e.what());
        }
        inputs.emplace_back(a.labels.empty() ? label_for(a.prompts[i]) : a.labels[i], std::move(text));
    }

    std::shared_ptr<ChatGateway> parser;
    auto ledger = std::make_shared<UsageLedger>();
    if (!a.script.empty()) {
        std::shared_ptr<ChatTransport> script;
        try {
            script = sim::script_from_json(Json::parse(read_file(a.script)));
        } catch (const StorageError& e) {
            throw ConfigError(e.what());
        } catch (const Json::exception& e) {
            throw ConfigError("bad script " + a.script + ": " + e.what());
        }
        parser = std::make_shared<ChatGateway>("parser", sim::offline_model("scripted"), script, ledger);
    } else {
        RunConfig c;
        c.base_dir = fs::path(a.config).parent_path();
        try {
            c.doc = Json::parse(read_file(a.config));
        } catch (const StorageError& e) {
            throw ConfigError(e.what());
        } catch (const Json::exception& e) {
            throw ConfigError("config " + a.config + " is not valid JSON: " + e.what());
        }
        parser = make_chat_gateway(c, "parser", ledger);
    }

    std::vector<TextualParameterGraph> parts;
    for (const auto& [label, text] : inputs) {
        auto r = parse_prompt(text, label, *parser);
        if (r.unparsed)
            std::cerr << "warning: " << label << " kept as a single unparsed leaf after " << r.attempts
                      << " attempts: " << r.last_error << "\n";
        parts.push_back(std::move(r.graph));
    }
    auto graph = merge_graphs(parts);
    if (a.out.empty()) {
        std::cout << serialize(graph);
    } else {
        write_file(a.out, serialize(graph));
    }
    std::cerr << "graph: " << graph.nodes().size() << " nodes, " << graph.edges().size() << " edges, "
              << graph.roots().size() << " roots\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// optimize

struct OptimizeArgs {
    std::string config;
    std::string fixture;
    std::string archive;
    int max_iterations = 0;
    std::size_t concurrency = 0;
    std::optional<std::uint64_t> seed;
    bool no_graph = false, no_structural_edits = false, no_clustering = false, random_clustering = false, no_grao = false;
    bool force = false;
    bool quiet = false;
};

void prepare_archive(const fs::path& dir, bool force) {
    if (!fs::exists(dir)) return;
    if (fs::is_directory(dir) && fs::is_empty(dir)) return;
    if (!fs::exists(dir / "run_meta.json"))
        throw ConfigError("archive directory " + dir.string() + " exists and does not hold a run archive");
    if (!force) throw ConfigError("archive directory " + dir.string() + " already holds a run; pass --force to replace it");
    std::error_code ec;
    fs::remove_all(dir, ec);
    if (ec) throw StorageError("cannot clear " + dir.string() + ": " + ec.message());
}

void print_table(const OptimizationResult& r) {
    std::printf("%-5s %-8s %-8s %-9s %-12s %-9s %-7s %s\n", "iter", "before", "after", "accepted", "rolled_back",
                "clusters", "noise", "tokens");
    for (const auto& it : r.reports)
        std::printf("%-5d %-8s %-8s %-9zu %-12zu %-9zu %-7zu %ld\n", it.iteration, ratio(it.passed_before, it.tasks).c_str(),
                    ratio(it.passed_after, it.tasks).c_str(), it.proposals_accepted, it.proposals_rolled_back,
                    it.cluster_count, it.noise_count, it.usage.total_tokens());
    const auto& last = r.reports.back();
    auto cost = cost_report(r.reports);
    std::printf("final success %s\n", ratio(last.passed_after, last.tasks).c_str());
    std::printf("stopped: %s\n", r.stop_reason.c_str());
    std::printf("tokens %ld over %zu trajectories (%.2f per trajectory)\n", cost.total_tokens, cost.trajectories,
                cost.amortized_tokens);
}

int cmd_optimize(const OptimizeArgs& a) {
    if (a.config.empty() == a.fixture.empty()) throw ConfigError("optimize needs exactly one of --config or --fixture");

    LoopParams params;
    std::optional<TextualParameterGraph> graph;
    std::vector<Task> tasks;
    LoopServices services;
    fs::path archive_dir;
    std::optional<sim::SimRun> sim_run;

    if (!a.fixture.empty()) {
        auto fixture = sim::build_fixture(a.fixture, a.seed.value_or(7));
        archive_dir = a.archive.empty() ? fs::path("runs") / a.fixture : fs::path(a.archive);
        prepare_archive(archive_dir, a.force);
        auto archive = std::make_shared<ArchiveWriter>(archive_dir);
        sim_run.emplace(sim::make_sim_run(std::move(fixture), archive, (archive_dir / "memory.jsonl").string()));
        graph = sim_run->fixture.graph;
        tasks = sim::plain_tasks(sim_run->fixture.tasks);
        services = sim_run->services;
        services.clock = system_clock();  // real iteration wall time; archives differ only in *_ms fields
        if (a.seed) params.seed = *a.seed;
    } else {
        auto cfg = load_run_config(a.config);
        params = cfg.params;
        archive_dir = a.archive.empty() ? cfg.archive_dir : fs::path(a.archive);
        auto wired = wire_run(cfg);
        prepare_archive(archive_dir, a.force);
        graph = std::move(wired.graph);
        tasks = std::move(wired.tasks);
        services = std::move(wired.services);
        services.archive = std::make_shared<ArchiveWriter>(archive_dir);
        fs::path memory = cfg.doc.contains("memory_path") ? cfg.memory_path : archive_dir / "memory.jsonl";
        services.memory = std::make_shared<ExperienceMemory>(memory.string());
        services.gradients = std::make_shared<GradientStore>((archive_dir / "gradients.jsonl").string());
        if (a.seed) params.seed = *a.seed;
    }

    if (a.max_iterations > 0) params.max_iterations = a.max_iterations;
    if (a.concurrency > 0) params.concurrency = a.concurrency;
    params.ablations.no_graph |= a.no_graph;
    params.ablations.no_structural_edits |= a.no_structural_edits;
    params.ablations.no_clustering |= a.no_clustering;
    params.ablations.random_clustering |= a.random_clustering;
    params.ablations.no_grao |= a.no_grao;
    if (params.ablations.no_clustering && params.ablations.random_clustering)
        throw ConfigError("--no-clustering and --random-clustering are mutually exclusive");
    if (!a.quiet) services.log = [](const std::string& line) { std::cerr << line << "\n"; };

    Orchestrator orch(std::move(*graph), std::move(tasks), params, services);
    auto result = orch.optimize();
    print_table(result);
    std::printf("archive: %s\n", archive_dir.string().c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// memory

fs::path memory_file(const std::string& path) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= "memory.jsonl";
    if (!fs::exists(p)) throw ConfigError("no experience memory at " + p.string());
    return p;
}

int cmd_memory_ls(const std::string& path) {
    ExperienceMemory mem(memory_file(path).string());
    for (const auto& e : mem.entries())
        std::printf("%s  iter %-3d E=%.2f  %-8s  %s\n", e.entry_id.c_str(), e.iteration, e.effectiveness,
                    e.accepted ? "accepted" : "rejected", first_line(e.problem_context).c_str());
    std::fprintf(stderr, "%zu entries\n", mem.size());
    return kOk;
}

int cmd_memory_show(const std::string& path, const std::string& id) {
    ExperienceMemory mem(memory_file(path).string());
    auto e = mem.find(id);
    if (!e) {
        std::cerr << "no entry " << id << "\n";
        return kFailure;
    }
    std::cout << to_json(*e).dump(2) << "\n";
    return kOk;
}

int cmd_memory_export(const std::string& path, const std::string& out) {
    ExperienceMemory mem(memory_file(path).string());
    Json arr = Json::array();
    for (const auto& e : mem.entries()) arr.push_back(to_json(e));
    if (out.empty()) std::cout << arr.dump(2) << "\n";
    else write_file(out, arr.dump(2) + "\n");
    return kOk;
}

// ---------------------------------------------------------------------------
// graph

TextualParameterGraph open_graph(const std::string& path) {
    try {
        return load_graph(path);
    } catch (const SchemaError& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const StorageError& e) {
        throw ConfigError(e.what());
    }
}

void print_node(const TextualParameterGraph& g, const NodeId& id, int depth) {
    const auto& n = g.node(id);
    std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
    std::cout << indent << n.id.value << " [" << to_string(n.kind) << "] " << n.title;
    if (n.children.empty()) std::cout << ": " << first_line(n.content, 60);
    std::cout << "\n";
    for (const auto& c : n.children) print_node(g, c, depth + 1);
}

int cmd_graph_show(const std::string& path) {
    auto g = open_graph(path);
    for (const auto& r : g.roots()) print_node(g, r, 0);
    for (const auto& e : g.edges())
        std::cout << "edge " << e.from.value << " -> " << e.to.value << (e.label.empty() ? "" : " (" + e.label + ")") << "\n";
    std::cout << "version " << g.version() << ", " << g.nodes().size() << " nodes, " << g.edges().size() << " edges\n";
    return kOk;
}

int cmd_graph_materialize(const std::string& path, const std::string& root) {
    auto g = open_graph(path);
    if (!root.empty()) {
        if (!g.contains(NodeId(root)) || !g.is_root(NodeId(root))) throw ConfigError("no root " + root);
        std::cout << materialize(g, NodeId(root)) << "\n";
        return kOk;
    }
    std::cout << concatenate(materialize_all(g)) << "\n";
    return kOk;
}

std::string describe(const GraphEdit& e) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, RewriteNode>) return "rewrite " + x.target.value + ": " + first_line(x.new_content, 60);
            else if constexpr (std::is_same_v<T, AddNode>)
                return "add " + x.node.root.value + " under " + (x.parent ? x.parent->value : std::string("(new root)"));
            else if constexpr (std::is_same_v<T, DeleteNode>) return "delete " + x.target.value;
            else if constexpr (std::is_same_v<T, AddEdge>) return "add edge " + x.from.value + " -> " + x.to.value;
            else return "prune edge " + x.from.value + " -> " + x.to.value;
        },
        e);
}

int cmd_graph_diff(const std::string& a, const std::string& b) {
    auto before = open_graph(a);
    auto after = open_graph(b);
    auto edits = diff(before, after);
    for (const auto& e : edits) std::cout << describe(e) << "\n";
    std::cerr << edits.size() << " edit(s)\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// replay / cost

int cmd_replay(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("no archive at " + dir);
    auto r = replay_archive(dir);
    if (r.ok) {
        std::cout << r.message << "\n";
        return kOk;
    }
    std::cout << "diverged at iteration " << r.diverged_at << ": " << r.message << "\n";
    return kFailure;
}

int cmd_cost(const std::string& dir, bool json) {
    if (!fs::is_directory(dir)) throw ConfigError("no archive at " + dir);
    std::vector<IterationReport> reports;
    for (int n = 1; fs::exists(fs::path(dir) / ("iter_" + std::to_string(n)) / "report.json"); ++n)
        reports.push_back(iteration_report_from_json(load_json(fs::path(dir) / ("iter_" + std::to_string(n)) / "report.json")));
    if (reports.empty()) throw ConfigError("archive " + dir + " has no iteration reports");
    auto s = cost_report(reports);
    if (json) {
        std::cout << to_json(s).dump(2) << "\n";
        return kOk;
    }
    std::printf("%-5s %-12s %-12s %-12s %s\n", "iter", "trajectories", "prompt", "completion", "total");
    for (const auto& r : reports)
        std::printf("%-5d %-12zu %-12ld %-12ld %ld\n", r.iteration, r.trajectories, r.usage.prompt_tokens,
                    r.usage.completion_tokens, r.usage.total_tokens());
    std::printf("total %ld tokens, %zu trajectories, %.2f tokens/trajectory, %.2f ms/trajectory\n", s.total_tokens,
                s.trajectories, s.amortized_tokens, s.amortized_time_ms);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Textual parameter graph optimizer"};
    app.require_subcommand(1);

    ParseArgs parse_args;
    auto* parse = app.add_subcommand("parse", "Decompose prompt files into a graph document");
    parse->add_option("--prompt", parse_args.prompts, "Prompt file (repeatable)")->required();
    parse->add_option("--label", parse_args.labels, "Root label per prompt (default: file stem)");
    parse->add_option("--out", parse_args.out, "Output graph file (default: stdout)");
    parse->add_option("--config", parse_args.config, "Run config naming providers.parser");
    parse->add_option("--script", parse_args.script, "Scripted parser responses (offline)");

    OptimizeArgs opt;
    auto* optimize = app.add_subcommand("optimize", "Run the optimization loop");
    optimize->add_option("--config", opt.config, "Run config file");
    optimize->add_option("--fixture", opt.fixture, "Built-in offline suite: convergence, convergence-poisoned, stability");
    optimize->add_option("--archive", opt.archive, "Archive directory (overrides config)");
    optimize->add_option("--max-iterations", opt.max_iterations)->check(CLI::PositiveNumber);
    optimize->add_option("--concurrency", opt.concurrency)->check(CLI::PositiveNumber);
    optimize->add_option("--seed", opt.seed);
    optimize->add_flag("--no-graph", opt.no_graph, "Optimize each prompt as one flat leaf");
    optimize->add_flag("--no-structural-edits", opt.no_structural_edits, "Allow REWRITE_NODE only");
    optimize->add_flag("--no-clustering", opt.no_clustering, "One cluster per gradient");
    optimize->add_flag("--random-clustering", opt.random_clustering, "Seeded random clusters");
    optimize->add_flag("--no-grao", opt.no_grao, "No experience exemplars");
    optimize->add_flag("--force", opt.force, "Replace an existing archive");
    optimize->add_flag("--quiet", opt.quiet, "No progress log on stderr");

    auto* memory = app.add_subcommand("memory", "Inspect an experience memory");
    memory->require_subcommand(1);
    std::string mem_path, mem_id, mem_out;
    auto* mem_ls = memory->add_subcommand("ls", "List entries");
    mem_ls->add_option("path", mem_path, "memory.jsonl or archive directory")->required();
    auto* mem_show = memory->add_subcommand("show", "Print one entry");
    mem_show->add_option("path", mem_path)->required();
    mem_show->add_option("id", mem_id)->required();
    auto* mem_export = memory->add_subcommand("export", "Export entries as a JSON array");
    mem_export->add_option("path", mem_path)->required();
    mem_export->add_option("--out", mem_out);

    auto* graph = app.add_subcommand("graph", "Inspect graph documents");
    graph->require_subcommand(1);
    std::string g_a, g_b, g_root;
    auto* g_show = graph->add_subcommand("show", "Print the node tree and edges");
    g_show->add_option("file", g_a)->required();
    auto* g_diff = graph->add_subcommand("diff", "Print the edits turning one graph into another");
    g_diff->add_option("before", g_a)->required();
    g_diff->add_option("after", g_b)->required();
    auto* g_mat = graph->add_subcommand("materialize", "Render prompt text");
    g_mat->add_option("file", g_a)->required();
    g_mat->add_option("--root", g_root);

    std::string dir;
    auto* replay = app.add_subcommand("replay", "Recompute an archive's final graph from its accepted proposals");
    replay->add_option("archive", dir)->required();
    bool cost_json = false;
    auto* cost = app.add_subcommand("cost", "Token and time totals for an archive");
    cost->add_option("archive", dir)->required();
    cost->add_flag("--json", cost_json);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (*parse) return cmd_parse(parse_args);
        if (*optimize) return cmd_optimize(opt);
        if (*mem_ls) return cmd_memory_ls(mem_path);
        if (*mem_show) return cmd_memory_show(mem_path, mem_id);
        if (*mem_export) return cmd_memory_export(mem_path, mem_out);
        if (*g_show) return cmd_graph_show(g_a);
        if (*g_diff) return cmd_graph_diff(g_a, g_b);
        if (*g_mat) return cmd_graph_materialize(g_a, g_root);
        if (*replay) return cmd_replay(dir);
        if (*cost) return cmd_cost(dir, cost_json);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const StorageError& e) {
        std::cerr << "storage error: " << e.what() << "\n";
        return kStorage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kConfig;
}
