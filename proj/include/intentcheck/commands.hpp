#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "intentcheck/counterfactual.hpp"
#include "intentcheck/crosswalk.hpp"
#include "intentcheck/intention.hpp"
#include "intentcheck/scenario.hpp"

namespace intentcheck::app {

inline constexpr const char* kToolVersion = "0.1.0";

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitSolver = 3, kExitSampling = 4 };

/// Options shared by the commands; optional fields override the scenario file.
struct CommonOptions {
    std::filesystem::path scenario;
    std::optional<intention::Thresholds> thresholds;
    std::optional<crosswalk::CollisionSemantics> semantics;
    double tolerance = reach::kDefaultTolerance;
    /// Integral variables pinned to a chosen value, in real units (sl_fact=1.5, vis=0).
    std::vector<std::pair<std::string, double>> assignments;
};

struct AnalyzeOptions {
    CommonOptions common;
    std::filesystem::path trace;
    std::string agent = "aggressive";
    std::filesystem::path out = "report.json";
};

struct CounterfactualOptions {
    CommonOptions common;
    std::filesystem::path trace;
    std::string agent = "aggressive";
    std::uint32_t batch = 5;
    std::uint32_t limit = 100;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::uint32_t high_sigma_candidates = 0;
    std::filesystem::path out = "counterfactual.json";
};

struct CompareOptions {
    CommonOptions common;
    std::filesystem::path trace;
    std::vector<std::string> agents = {"aggressive", "indifferent", "cautious"};
    std::uint32_t batch = 5;
    std::uint32_t limit = 100;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::uint32_t high_sigma_candidates = 0;
    std::filesystem::path out = "compare.json";
};

struct ExportOptions {
    CommonOptions common;
    std::optional<std::string> agent;
    std::filesystem::path prefix = "model";
};

/// Parses "L,U,S" into thresholds. Throws ValidationError.
intention::Thresholds parse_thresholds(const std::string& text);

/// Parses "name=value" for an integral variable. Throws ValidationError.
std::pair<std::string, double> parse_assignment(const std::string& text);

/// Sets one integral variable of the scenario, in real units. Throws ValidationError when the
/// name is not integral or the value is off its grid or range.
void apply_assignment(Scenario& scenario, const std::string& name, double value);

/// Scenario file with command-line overrides applied.
Scenario resolve_scenario(const CommonOptions& options);

/// Sibling path with a different extension or suffix: report.json -> report.csv.
std::filesystem::path sibling(const std::filesystem::path& path, const std::string& suffix);

nlohmann::json analysis_report(const Scenario& scenario, const std::string& agent, const mdp::FactoredMdp& model,
                               const intention::ReachTriple& reach, const intention::TraceAssessment& assessment);
std::string per_state_csv(const intention::TraceAssessment& assessment);
nlohmann::json evidence_report(const cf::EvidenceLog& log, const mdp::VariableSchema& schema);
std::string scatter_csv(const cf::EvidenceLog& log);

/// Each command writes its outputs and returns an ExitCode; messages go to `err`.
int cmd_analyze(const AnalyzeOptions& options, std::ostream& err);
int cmd_counterfactual(const CounterfactualOptions& options, std::ostream& err);
int cmd_compare(const CompareOptions& options, std::ostream& err);
int cmd_export_model(const ExportOptions& options, std::ostream& err);

/// Runs `body` and maps library errors to exit codes.
int guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace intentcheck::app
