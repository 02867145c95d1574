// Command-line front end: analyze, counterfactual, compare, export-model.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "intentcheck/commands.hpp"
#include "intentcheck/log.hpp"

namespace app = intentcheck::app;

namespace {

struct CommonFlags {
    std::string scenario = "data/reference_scenario.json";
    std::string thresholds;
    std::string semantics;
    double tolerance = intentcheck::reach::kDefaultTolerance;
    std::vector<std::string> assignments;

    void attach(CLI::App* cmd) {
        cmd->add_option("--scenario", scenario, "Scenario JSON file")->capture_default_str();
        cmd->add_option("--thresholds", thresholds, "Override thresholds as rho_low,rho_high,sigma_min");
        cmd->add_option("--collision-semantics", semantics, "Collision predicate: conj or disj")
            ->check(CLI::IsMember({"conj", "disj"}));
        cmd->add_option("--tolerance", tolerance, "Value-iteration tolerance")->capture_default_str();
        cmd->add_option("--set", assignments,
                        "Pin an integral variable, e.g. --set sl_fact=1.5 (repeatable; real units)");
    }

    app::CommonOptions resolve() const {
        app::CommonOptions out;
        out.scenario = scenario;
        if (!thresholds.empty()) out.thresholds = app::parse_thresholds(thresholds);
        if (!semantics.empty()) out.semantics = intentcheck::crosswalk::parse_collision_semantics(semantics);
        out.tolerance = tolerance;
        for (const auto& a : assignments) out.assignments.push_back(app::parse_assignment(a));
        return out;
    }
};

}  // namespace

int main(int argc, char** argv) {
    intentcheck::configure_logging_from_env();

    CLI::App cli{"Evidence of intentional behavior in MDP traces"};
    cli.set_version_flag("--version", app::kToolVersion);
    cli.require_subcommand(1);

    CommonFlags analyze_common;
    app::AnalyzeOptions analyze;
    std::string analyze_trace = "data/reference_trace.json";
    std::string analyze_out = analyze.out.string();
    auto* analyze_cmd = cli.add_subcommand("analyze", "Assess one trace for one agent");
    analyze_common.attach(analyze_cmd);
    analyze_cmd->add_option("--trace", analyze_trace, "Trace JSON file")->capture_default_str();
    analyze_cmd->add_option("--agent", analyze.agent, "aggressive, indifferent or cautious")->capture_default_str();
    analyze_cmd->add_option("--out", analyze_out, "Report JSON; the CSV is written next to it")->capture_default_str();

    CommonFlags cf_common;
    app::CounterfactualOptions counterfactual;
    std::string cf_trace = "data/reference_trace.json";
    std::string cf_out = counterfactual.out.string();
    auto* cf_cmd = cli.add_subcommand("counterfactual", "Run the counterfactual evidence loop for one agent");
    cf_common.attach(cf_cmd);
    cf_cmd->add_option("--trace", cf_trace, "Reference trace JSON file")->capture_default_str();
    cf_cmd->add_option("--agent", counterfactual.agent, "aggressive, indifferent or cautious")->capture_default_str();
    cf_cmd->add_option("--batch", counterfactual.batch, "Counterfactual traces per batch")->capture_default_str();
    cf_cmd->add_option("--limit", counterfactual.limit, "Maximum number of counterfactual traces")->capture_default_str();
    cf_cmd->add_option("--seed", counterfactual.seed, "Sampling seed")->capture_default_str();
    cf_cmd->add_option("--threads", counterfactual.threads, "Worker threads, 0 for all cores")->capture_default_str();
    cf_cmd->add_option("--high-sigma", counterfactual.high_sigma_candidates,
                       "Keep the highest-agency of this many candidates per draw (0 disables)")
        ->capture_default_str();
    cf_cmd->add_option("--out", cf_out, "Report JSON; the scatter CSV is written next to it")->capture_default_str();

    CommonFlags cmp_common;
    app::CompareOptions compare;
    std::string cmp_trace = "data/reference_trace.json";
    std::string cmp_out = compare.out.string();
    auto* cmp_cmd = cli.add_subcommand("compare", "Run the evidence loop for several agents on shared samples");
    cmp_common.attach(cmp_cmd);
    cmp_cmd->add_option("--trace", cmp_trace, "Reference trace JSON file")->capture_default_str();
    cmp_cmd->add_option("--agent", compare.agents, "Agents to compare (repeat or comma-separate)")
        ->delimiter(',')
        ->capture_default_str();
    cmp_cmd->add_option("--batch", compare.batch, "Counterfactual traces per batch")->capture_default_str();
    cmp_cmd->add_option("--limit", compare.limit, "Maximum number of counterfactual traces")->capture_default_str();
    cmp_cmd->add_option("--seed", compare.seed, "Shared sampling seed")->capture_default_str();
    cmp_cmd->add_option("--threads", compare.threads, "Worker threads, 0 for all cores")->capture_default_str();
    cmp_cmd->add_option("--high-sigma", compare.high_sigma_candidates,
                        "Keep the highest-agency of this many candidates per draw (0 disables)")
        ->capture_default_str();
    cmp_cmd->add_option("--out", cmp_out, "Report JSON; the table CSV is written next to it")->capture_default_str();

    CommonFlags exp_common;
    app::ExportOptions exported;
    std::string exp_agent;
    std::string exp_out = exported.prefix.string();
    auto* exp_cmd = cli.add_subcommand("export-model", "Write the scenario model as .tra/.lab files");
    exp_common.attach(exp_cmd);
    exp_cmd->add_option("--agent", exp_agent, "Export the chain induced by this agent instead");
    exp_cmd->add_option("--out", exp_out, "Output prefix")->capture_default_str();

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? app::kExitOk : app::kExitValidation;
    }

    return app::guarded(
        [&]() -> int {
            if (*analyze_cmd) {
                analyze.common = analyze_common.resolve();
                analyze.trace = analyze_trace;
                analyze.out = analyze_out;
                return app::cmd_analyze(analyze, std::cerr);
            }
            if (*cf_cmd) {
                counterfactual.common = cf_common.resolve();
                counterfactual.trace = cf_trace;
                counterfactual.out = cf_out;
                return app::cmd_counterfactual(counterfactual, std::cerr);
            }
            if (*cmp_cmd) {
                compare.common = cmp_common.resolve();
                compare.trace = cmp_trace;
                compare.out = cmp_out;
                return app::cmd_compare(compare, std::cerr);
            }
            exported.common = exp_common.resolve();
            if (!exp_agent.empty()) exported.agent = exp_agent;
            exported.prefix = exp_out;
            return app::cmd_export_model(exported, std::cerr);
        },
        std::cerr);
}
