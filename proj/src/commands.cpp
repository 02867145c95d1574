#include "intentcheck/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "intentcheck/explicit_io.hpp"
#include "intentcheck/log.hpp"

namespace intentcheck::app {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_number(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.17g", v);
    return buffer;
}

std::string format_real(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%g", v);
    return buffer;
}

std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError(path.string() + ": cannot open for writing");
    out << text;
    out.flush();
    if (!out) throw ValidationError(path.string() + ": write failed");
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json thresholds_json(const intention::Thresholds& t) {
    return {{"rho_low", t.rho_low}, {"rho_high", t.rho_high}, {"sigma_min", t.sigma_min}};
}

json params_json(const std::vector<std::int32_t>& integral, const mdp::VariableSchema& schema) {
    json out = json::object();
    const auto positions = schema.positions(mdp::VariableKind::integral);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const mdp::Variable& v = schema[positions[i]];
        out[v.name] = v.domain.scale == 1 ? json(integral[i]) : json(v.domain.to_real(integral[i]));
    }
    return out;
}

/// Reference states mapped into the model, with file:line errors for states the model cannot
/// reproduce.
mdp::Trace resolve_trace(const Document& doc, const std::vector<mdp::FactoredState>& states,
                         const mdp::FactoredMdp& model) {
    std::vector<mdp::StateId> ids;
    auto fail = [&](std::size_t i, const std::string& message) {
        const std::string pointer = "/states/" + std::to_string(i);
        throw ValidationError(doc.source + ":" + std::to_string(doc.lines.line_of(pointer)) + ": states[" +
                              std::to_string(i) + "]: " + message);
    };
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto id = model.find(states[i]);
        if (!id) fail(i, "state is not reachable in the scenario model");
        if (i == 0 && *id != model.initial()) fail(i, "trace must start in the scenario's initial state");
        if (i > 0 && !mdp::is_valid_trace(model, mdp::Trace({ids.back(), *id}))) {
            fail(i, "no action reaches this state from the previous one with positive probability");
        }
        ids.push_back(*id);
    }
    return mdp::Trace(std::move(ids));
}

struct Loaded {
    Scenario scenario;
    std::vector<mdp::FactoredState> states;
};

Loaded load_inputs(const CommonOptions& common, const std::filesystem::path& trace_path) {
    Loaded out;
    out.scenario = resolve_scenario(common);
    const Document doc = load_document(trace_path);
    out.states = parse_trace(doc, out.scenario);
    // Validates reachability and steps with line numbers before the heavier work starts.
    const cf::Problem problem = build_problem(out.scenario);
    resolve_trace(doc, out.states, problem.mdp);
    return out;
}

cf::CounterfactualSpec make_spec(const Scenario& scenario, std::uint32_t batch, std::uint32_t limit,
                                 std::uint64_t seed, unsigned threads, std::uint32_t high_sigma) {
    cf::CounterfactualSpec spec;
    spec.variables = scenario.counterfactual;
    spec.batch_size = batch;
    spec.trace_limit = limit;
    spec.seed = seed;
    spec.threads = threads;
    spec.high_sigma_candidates = high_sigma;
    try {
        spec.validate();
    } catch (const SpecError& e) {
        throw ValidationError(e.what());
    }
    return spec;
}

json run_json(const Scenario& scenario, const cf::CounterfactualSpec& spec) {
    return {{"seed", spec.seed},
            {"rng", cf::CounterRng::name()},
            {"batch", spec.batch_size},
            {"limit", spec.trace_limit},
            {"high_sigma_candidates", spec.high_sigma_candidates},
            {"thresholds", thresholds_json(scenario.thresholds)}};
}

}  // namespace

intention::Thresholds parse_thresholds(const std::string& text) {
    std::vector<double> values;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ValidationError("--thresholds: '" + part + "' is not a number");
        }
    }
    if (values.size() != 3) throw ValidationError("--thresholds expects L,U,S");
    intention::Thresholds t{values[0], values[1], values[2]};
    try {
        t.validate();
    } catch (const Error& e) {
        throw ValidationError(std::string("--thresholds: ") + e.what());
    }
    return t;
}

std::pair<std::string, double> parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("assignment must look like name=value, got '" + text + "'");
    }
    const std::string name = text.substr(0, eq);
    const std::string value = text.substr(eq + 1);
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size() || !std::isfinite(x)) {
        throw ValidationError("assignment '" + text + "' needs a numeric value");
    }
    return {name, x};
}

void apply_assignment(Scenario& scenario, const std::string& name, double value) {
    const mdp::VariableSchema schema = crosswalk::crosswalk_schema();
    const auto index = schema.index_of(name);
    if (!index || schema[*index].kind != mdp::VariableKind::integral) {
        throw ValidationError("'" + name + "' is not an integral variable (sl_init, sl_end, sl_fact, h_fact, vis)");
    }
    const mdp::Domain& domain = schema[*index].domain;
    const double scaled = value * domain.scale;
    const auto raw = static_cast<std::int32_t>(std::lround(scaled));
    if (std::abs(scaled - raw) > 1e-6 || !domain.contains(raw)) {
        throw ValidationError("value " + format_real(value) + " for '" + name + "' is not on the grid [" +
                              format_real(domain.to_real(domain.lo)) + ", " + format_real(domain.to_real(domain.hi)) +
                              "] in steps of " + format_real(1.0 / domain.scale));
    }
    const auto positions = schema.positions(mdp::VariableKind::integral);
    std::vector<std::int32_t> integral = crosswalk::integral_values(scenario.params);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] == *index) integral[i] = raw;
    }
    crosswalk::ScenarioParams params = crosswalk::params_from_integral(integral);
    try {
        params.validate();
    } catch (const SchemaError& e) {
        throw ValidationError(std::string("assignment ") + name + "=" + format_real(value) + ": " + e.what());
    }
    scenario.params = params;
}

Scenario resolve_scenario(const CommonOptions& options) {
    Scenario s = load_scenario(options.scenario);
    for (const auto& [name, value] : options.assignments) apply_assignment(s, name, value);
    if (options.thresholds) s.thresholds = *options.thresholds;
    if (options.semantics) {
        s.semantics = *options.semantics;
        if (crosswalk::collision(s.car_init, s.ped_init, s.semantics)) {
            throw ValidationError(options.scenario.string() + ": initial positions collide under " +
                                  crosswalk::to_string(s.semantics) + " semantics");
        }
    }
    if (!(options.tolerance > 0.0)) throw ValidationError("--tolerance must be positive");
    return s;
}

std::filesystem::path sibling(const std::filesystem::path& path, const std::string& suffix) {
    std::filesystem::path out = path;
    out.replace_extension();
    return std::filesystem::path(out.string() + suffix);
}

json analysis_report(const Scenario& scenario, const std::string& agent, const mdp::FactoredMdp& model,
                     const intention::ReachTriple& reach, const intention::TraceAssessment& assessment) {
    json rows = json::array();
    for (std::size_t i = 0; i < assessment.per_state.size(); ++i) {
        const auto& s = assessment.per_state[i];
        const crosswalk::CrosswalkState cs = crosswalk::decode(model.state(s.state));
        rows.push_back({{"step", i},
                        {"state", mdp::to_index(s.state)},
                        {"car", {{"x", cs.car.x}, {"y", cs.car.y}, {"v", cs.car.v}}},
                        {"ped", {{"x", cs.ped.x}, {"y", cs.ped.y}}},
                        {"p_min", s.p_min},
                        {"p_pi", s.p_pi},
                        {"p_max", s.p_max},
                        {"sigma", s.sigma},
                        {"rho", optional_number(s.rho)}});
    }
    auto solver = [](const reach::ReachProbabilities& r) {
        return json{{"mode", reach::to_string(r.mode)},
                    {"converged", r.converged},
                    {"iterations", r.iterations},
                    {"residual", r.residual}};
    };
    return {{"tool", "intentcheck"},
            {"version", kToolVersion},
            {"command", "analyze"},
            {"scenario", to_json(scenario)},
            {"agent", agent},
            {"thresholds", thresholds_json(scenario.thresholds)},
            {"model",
             {{"states", model.num_states()},
              {"choices", model.num_choices()},
              {"transitions", model.num_transitions()}}},
            {"solver", {{"p_min", solver(reach.p_min)}, {"p_max", solver(reach.p_max)}, {"p_pi", solver(reach.p_pi)}}},
            {"verdict", intention::to_string(assessment.verdict)},
            {"rho", optional_number(assessment.rho)},
            {"sigma", assessment.sigma},
            {"per_state", rows}};
}

std::string per_state_csv(const intention::TraceAssessment& assessment) {
    std::string out = "step,p_min,p_pi,p_max,sigma,rho\n";
    for (std::size_t i = 0; i < assessment.per_state.size(); ++i) {
        const auto& s = assessment.per_state[i];
        out += std::to_string(i) + "," + csv_number(s.p_min) + "," + csv_number(s.p_pi) + "," + csv_number(s.p_max) +
               "," + csv_number(s.sigma) + "," + csv_number(s.rho) + "\n";
    }
    return out;
}

json evidence_report(const cf::EvidenceLog& log, const mdp::VariableSchema& schema) {
    json entries = json::array();
    for (std::size_t i = 0; i < log.entries.size(); ++i) {
        const auto& e = log.entries[i];
        entries.push_back({{"index", i},
                           {"reference", e.reference},
                           {"params", params_json(e.integral, schema)},
                           {"rho", optional_number(e.assessment.rho)},
                           {"sigma", e.assessment.sigma},
                           {"verdict", intention::to_string(e.assessment.verdict)}});
    }
    return {{"traces", log.entries.size()},
            {"rho", optional_number(log.aggregate.rho)},
            {"sigma", log.aggregate.sigma},
            {"undefined_rho", log.aggregate.undefined_rho},
            {"verdict", intention::to_string(log.verdict)},
            {"stop_reason", cf::to_string(log.stop_reason)},
            {"draws", log.draws},
            {"rejections", log.rejections},
            {"entries", entries}};
}

std::string scatter_csv(const cf::EvidenceLog& log) {
    std::string out = "trace,reference,rho,sigma\n";
    for (std::size_t i = 0; i < log.entries.size(); ++i) {
        const auto& e = log.entries[i];
        out += std::to_string(i) + "," + (e.reference ? "1" : "0") + "," + csv_number(e.assessment.rho) + "," +
               csv_number(e.assessment.sigma) + "\n";
    }
    return out;
}

int cmd_analyze(const AnalyzeOptions& options, std::ostream& err) {
    return guarded(
        [&] {
            const auto start = Clock::now();
            const crosswalk::AgentKind kind = crosswalk::parse_agent(options.agent);
            const Scenario scenario = resolve_scenario(options.common);
            const Document doc = load_document(options.trace);
            const auto states = parse_trace(doc, scenario);
            const cf::Problem problem = build_problem(scenario);
            const mdp::Trace trace = resolve_trace(doc, states, problem.mdp);
            if (!problem.target.contains(trace.back())) spdlog::warn("analyzed trace does not end in a collision");

            reach::SolverOptions solver;
            solver.tolerance = options.common.tolerance;
            const mdp::Policy policy = crosswalk::make_agent(kind, problem.mdp);
            const intention::ReachTriple reach =
                intention::compute_reach_triple(problem.mdp, policy, problem.policy_class, problem.target, solver);
            const intention::TraceAssessment assessment =
                intention::assess_with(reach, trace, scenario.thresholds, solver.tolerance);

            json report = analysis_report(scenario, options.agent, problem.mdp, reach, assessment);
            report["timing"] = {{"seconds", seconds_since(start)}};
            write_json(options.out, report);
            write_text(sibling(options.out, ".csv"), per_state_csv(assessment));
            err << "verdict: " << intention::to_string(assessment.verdict) << " (rho "
                << (assessment.rho ? std::to_string(*assessment.rho) : "undefined") << ", sigma "
                << assessment.sigma << ")\n";
            return static_cast<int>(kExitOk);
        },
        err);
}

int cmd_counterfactual(const CounterfactualOptions& options, std::ostream& err) {
    return guarded(
        [&] {
            const auto start = Clock::now();
            const crosswalk::AgentKind kind = crosswalk::parse_agent(options.agent);
            const Loaded in = load_inputs(options.common, options.trace);
            const cf::CounterfactualSpec spec =
                make_spec(in.scenario, options.batch, options.limit, options.seed, options.threads,
                          options.high_sigma_candidates);
            cf::LoopOptions loop;
            loop.thresholds = in.scenario.thresholds;
            loop.solver.tolerance = options.common.tolerance;
            const mdp::VariableSchema schema = crosswalk::crosswalk_schema();
            const cf::EvidenceLog log = cf::evidence_loop(schema, make_problem_builder(in.scenario), in.states,
                                                          make_policy_builder(kind), spec, loop);

            json report = {{"tool", "intentcheck"},
                           {"version", kToolVersion},
                           {"command", "counterfactual"},
                           {"scenario", to_json(in.scenario)},
                           {"agent", options.agent},
                           {"run", run_json(in.scenario, spec)},
                           {"log", evidence_report(log, schema)},
                           {"timing", {{"seconds", seconds_since(start)}}}};
            write_json(options.out, report);
            write_text(sibling(options.out, "_scatter.csv"), scatter_csv(log));
            err << "verdict: " << intention::to_string(log.verdict) << " after " << log.entries.size()
                << " traces (" << cf::to_string(log.stop_reason) << ")\n";
            return static_cast<int>(kExitOk);
        },
        err);
}

int cmd_compare(const CompareOptions& options, std::ostream& err) {
    return guarded(
        [&] {
            const auto start = Clock::now();
            if (options.agents.size() < 2) throw ValidationError("compare needs at least two agents");
            std::vector<cf::PolicyBuilder> builders;
            for (const auto& name : options.agents) builders.push_back(make_policy_builder(crosswalk::parse_agent(name)));
            const Loaded in = load_inputs(options.common, options.trace);
            const cf::CounterfactualSpec spec =
                make_spec(in.scenario, options.batch, options.limit, options.seed, options.threads,
                          options.high_sigma_candidates);
            cf::LoopOptions loop;
            loop.thresholds = in.scenario.thresholds;
            loop.solver.tolerance = options.common.tolerance;
            const mdp::VariableSchema schema = crosswalk::crosswalk_schema();
            const auto logs =
                cf::evidence_loop_multi(schema, make_problem_builder(in.scenario), in.states, builders, spec, loop);

            json agents = json::array();
            std::string table = "agent,traces,rho,sigma,verdict,stop_reason\n";
            for (std::size_t a = 0; a < logs.size(); ++a) {
                json entry = evidence_report(logs[a], schema);
                entry["agent"] = options.agents[a];
                agents.push_back(entry);
                table += options.agents[a] + "," + std::to_string(logs[a].entries.size()) + "," +
                         csv_number(logs[a].aggregate.rho) + "," + csv_number(logs[a].aggregate.sigma) + "," +
                         intention::to_string(logs[a].verdict) + "," + cf::to_string(logs[a].stop_reason) + "\n";
                err << options.agents[a] << ": |T| = " << logs[a].entries.size() << ", rho "
                    << (logs[a].aggregate.rho ? std::to_string(*logs[a].aggregate.rho) : "undefined") << ", sigma "
                    << logs[a].aggregate.sigma << ", " << intention::to_string(logs[a].verdict) << "\n";
            }
            json report = {{"tool", "intentcheck"},
                           {"version", kToolVersion},
                           {"command", "compare"},
                           {"scenario", to_json(in.scenario)},
                           {"run", run_json(in.scenario, spec)},
                           {"agents", agents},
                           {"timing", {{"seconds", seconds_since(start)}}}};
            write_json(options.out, report);
            write_text(sibling(options.out, ".csv"), table);
            return static_cast<int>(kExitOk);
        },
        err);
}

int cmd_export_model(const ExportOptions& options, std::ostream& err) {
    return guarded(
        [&] {
            const Scenario scenario = resolve_scenario(options.common);
            const cf::Problem problem = build_problem(scenario);
            if (options.agent) {
                const mdp::Policy policy = crosswalk::make_agent(crosswalk::parse_agent(*options.agent), problem.mdp);
                export_model(options.prefix, mdp::induced_chain(problem.mdp, policy), problem.target);
            } else {
                export_model(options.prefix, problem.mdp, problem.target);
            }
            err << "exported " << problem.mdp.num_states() << " states to " << options.prefix.string()
                << ".tra and " << options.prefix.string() << ".lab\n";
            return static_cast<int>(kExitOk);
        },
        err);
}

int guarded(const std::function<int()>& body, std::ostream& err) {
    try {
        return body();
    } catch (const SamplingError& e) {
        err << "error: " << e.what() << "\n";
        return kExitSampling;
    } catch (const SolverError& e) {
        err << "error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitSolver;
    }
}

}  // namespace intentcheck::app
