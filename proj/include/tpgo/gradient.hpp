#pragma once

// Trajectories and textual gradients: the reflector role turns one execution
// record into failure patterns (negative) and working patterns (positive).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tpgo/gateway.hpp"
#include "tpgo/graph.hpp"
#include "tpgo/parallel.hpp"
#include "tpgo/prompt_template.hpp"

namespace tpgo {

enum class StepKind { reasoning, tool_call, tool_result, message };
enum class Outcome { success, failure, unknown };

inline const char* to_string(StepKind k) {
    switch (k) {
        case StepKind::reasoning: return "reasoning";
        case StepKind::tool_call: return "tool_call";
        case StepKind::tool_result: return "tool_result";
        case StepKind::message: return "message";
    }
    return "message";
}

inline const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::success: return "success";
        case Outcome::failure: return "failure";
        case Outcome::unknown: return "unknown";
    }
    return "unknown";
}

struct Step {
    std::string actor;
    StepKind kind = StepKind::message;
    std::string payload;
    bool operator==(const Step&) const = default;
};

struct Trajectory {
    std::string task_id;
    std::string query;
    std::vector<Step> steps;
    std::optional<std::string> final_answer;
    Outcome outcome = Outcome::unknown;
    UsageCounters usage;
    double duration_seconds = 0;
    // The run died on infrastructure (transport, tool service), not on agent behavior.
    bool environment_failure = false;

    bool operator==(const Trajectory&) const = default;
};

// Worth reflecting on: executed, and not an infrastructure failure.
inline bool is_informative(const Trajectory& t) { return !t.steps.empty() && !t.environment_failure; }

inline Json to_json(const Trajectory& t) {
    Json steps = Json::array();
    for (const auto& s : t.steps) steps.push_back({{"actor", s.actor}, {"kind", to_string(s.kind)}, {"payload", s.payload}});
    Json j{{"task_id", t.task_id},
           {"query", t.query},
           {"steps", std::move(steps)},
           {"outcome", to_string(t.outcome)},
           {"usage", {{"prompt_tokens", t.usage.prompt_tokens}, {"completion_tokens", t.usage.completion_tokens}}},
           {"duration_seconds", t.duration_seconds},
           {"environment_failure", t.environment_failure}};
    j["final_answer"] = t.final_answer ? Json(*t.final_answer) : Json(nullptr);
    return j;
}

inline Trajectory trajectory_from_json(const Json& j) {
    Trajectory t;
    t.task_id = j.at("task_id").get<std::string>();
    t.query = j.value("query", "");
    for (const auto& s : j.at("steps")) {
        Step step;
        step.actor = s.value("actor", "agent");
        std::string kind = s.value("kind", "message");
        if (kind == "reasoning") step.kind = StepKind::reasoning;
        else if (kind == "tool_call") step.kind = StepKind::tool_call;
        else if (kind == "tool_result") step.kind = StepKind::tool_result;
        else if (kind == "message") step.kind = StepKind::message;
        else throw SchemaError("step-kind", "unknown step kind \"" + kind + "\"");
        step.payload = s.value("payload", "");
        t.steps.push_back(std::move(step));
    }
    if (j.contains("final_answer") && j.at("final_answer").is_string()) t.final_answer = j.at("final_answer").get<std::string>();
    std::string outcome = j.value("outcome", "unknown");
    t.outcome = outcome == "success" ? Outcome::success : outcome == "failure" ? Outcome::failure : Outcome::unknown;
    if (j.contains("usage")) {
        t.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0L);
        t.usage.completion_tokens = j.at("usage").value("completion_tokens", 0L);
    }
    t.duration_seconds = j.value("duration_seconds", 0.0);
    t.environment_failure = j.value("environment_failure", false);
    return t;
}

inline std::string render_trajectory(const Trajectory& t) {
    std::string out;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        out += "[" + std::to_string(i + 1) + "] " + s.actor + " (" + to_string(s.kind) + "): " + s.payload + "\n";
    }
    out += "Final answer: " + t.final_answer.value_or("(none)") + "\n";
    out += "Outcome: " + std::string(to_string(t.outcome));
    return out;
}

struct TextualGradient {
    std::string source_task;
    std::string summary;
    std::vector<std::string> negative;
    std::vector<std::string> positive;
    bool operator==(const TextualGradient&) const = default;
};

inline Json to_json(const TextualGradient& g) {
    return Json{{"source_task", g.source_task}, {"summary", g.summary}, {"error_list", g.negative}, {"experience_list", g.positive}};
}

namespace detail {
inline std::vector<std::string> string_list(const Json& j, const char* field, bool required) {
    std::vector<std::string> out;
    if (!j.contains(field)) {
        if (required) throw SchemaError(field, std::string("reflection lacks \"") + field + "\"");
        return out;
    }
    const auto& arr = j.at(field);
    if (!arr.is_array()) throw SchemaError(field, std::string("\"") + field + "\" must be a list of strings");
    for (const auto& v : arr) {
        if (!v.is_string()) throw SchemaError(field, std::string("\"") + field + "\" must be a list of strings");
        if (!v.get<std::string>().empty()) out.push_back(v.get<std::string>());
    }
    return out;
}
}  // namespace detail

// Strict field names; extra fields ignored. `summary` and `error_list` are
// required, `experience_list` defaults to empty. SchemaError::rule() names the
// offending field.
inline TextualGradient parse_reflection(std::string_view raw) {
    auto body = extract_json_object(raw);
    if (!body) throw SchemaError("well-formed", "no JSON object in reflection");
    Json j;
    try {
        j = Json::parse(*body);
    } catch (const Json::parse_error& e) {
        throw SchemaError("well-formed", e.what());
    }
    TextualGradient g;
    if (!j.contains("summary")) throw SchemaError("summary", "reflection lacks \"summary\"");
    if (!j.at("summary").is_string()) throw SchemaError("summary", "\"summary\" must be a string");
    g.summary = j.at("summary").get<std::string>();
    g.negative = detail::string_list(j, "error_list", true);
    g.positive = detail::string_list(j, "experience_list", false);
    return g;
}

struct Reflection {
    std::string task_id;
    std::optional<TextualGradient> gradient;
    bool excluded = false;         // environment failure or never executed; no call made
    bool skipped = false;          // unusable reply or transport failure
    bool low_information = false;  // failed run with no negative gradient
    bool leakage = false;          // an entry restated the reference answer and was dropped
    std::string note;
};

// Reflects on one trajectory. `reference_answer` switches on imitative mode.
// Never throws for schema or transport trouble; those come back as `skipped`.
inline Reflection reflect(const Trajectory& t, const std::optional<std::string>& reference_answer, ChatGateway& reflector) {
    Reflection r;
    r.task_id = t.task_id;
    if (!is_informative(t)) {
        r.excluded = true;
        r.note = t.environment_failure ? "environment failure" : "not executed";
        return r;
    }

    TemplateVars vars{{"task", t.query}, {"trajectory", render_trajectory(t)}};
    if (reference_answer)
        vars["reference_answer"] = "\n## Reference answer (for diagnosis only; never restate it)\n" + *reference_answer;
    std::vector<Message> messages{{"system", std::string(templates::reflector_system_v1)},
                                  {"user", render_template(templates::reflector_user_v1, vars)}};

    std::optional<TextualGradient> parsed;
    try {
        for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
            auto ex = reflector.chat(messages);
            try {
                parsed = parse_reflection(ex.response);
            } catch (const SchemaError& e) {
                r.note = e.what();
                messages.push_back({"assistant", ex.response});
                messages.push_back({"user", render_template(templates::repair_v1, {{"error", e.what()}})});
            }
        }
    } catch (const TransportError& e) {
        r.skipped = true;
        r.note = e.what();
        return r;
    }
    if (!parsed) {
        r.skipped = true;
        return r;
    }

    parsed->source_task = t.task_id;
    if (reference_answer && !reference_answer->empty()) {
        auto leaks = [&](const std::string& s) { return s.find(*reference_answer) != std::string::npos; };
        auto before = parsed->negative.size() + parsed->positive.size();
        std::erase_if(parsed->negative, leaks);
        std::erase_if(parsed->positive, leaks);
        r.leakage = before != parsed->negative.size() + parsed->positive.size();
    }
    r.low_information = t.outcome == Outcome::failure && parsed->negative.empty();
    r.note.clear();
    r.gradient = std::move(*parsed);
    return r;
}

// Concurrent over the batch; results come back sorted by task id.
inline std::vector<Reflection> reflect_batch(const std::vector<Trajectory>& trajectories,
                                             const std::map<std::string, std::string>& reference_answers,
                                             ChatGateway& reflector, std::size_t concurrency) {
    std::vector<Reflection> out(trajectories.size());
    parallel_for(trajectories.size(), concurrency, [&](std::size_t i) {
        const auto& t = trajectories[i];
        std::optional<std::string> ref;
        if (auto it = reference_answers.find(t.task_id); it != reference_answers.end()) ref = it->second;
        out[i] = reflect(t, ref, reflector);
    });
    std::stable_sort(out.begin(), out.end(), [](const Reflection& a, const Reflection& b) { return a.task_id < b.task_id; });
    return out;
}

}  // namespace tpgo
