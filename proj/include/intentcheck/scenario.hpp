#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "intentcheck/counterfactual.hpp"
#include "intentcheck/crosswalk.hpp"
#include "intentcheck/intention.hpp"

namespace intentcheck::app {

/// Maps JSON pointers ("/states/3/car/v") to the 1-based line where the value starts.
class LineIndex {
public:
    LineIndex() = default;
    /// `text` must be well-formed JSON.
    explicit LineIndex(std::string_view text);

    /// Line of the pointer, or of its nearest indexed ancestor; 0 when unknown.
    std::size_t line_of(const std::string& pointer) const;

private:
    std::map<std::string, std::size_t> lines_;
};

/// A parsed JSON document with its source name and line index.
struct Document {
    std::string source;
    nlohmann::json json;
    LineIndex lines;
};

/// Reads and parses a JSON file. Throws ValidationError with "file:line:" on I/O or syntax errors.
Document load_document(const std::filesystem::path& path);
Document parse_document(std::string source, std::string_view text);

enum class PolicyClassKind { no_stopping, unrestricted };

PolicyClassKind parse_policy_class(std::string_view text);
const char* to_string(PolicyClassKind kind);

struct Scenario {
    crosswalk::ScenarioParams params;
    crosswalk::CarState car_init;
    crosswalk::PedestrianState ped_init{44, 1};
    intention::Thresholds thresholds;
    PolicyClassKind policy_class = PolicyClassKind::no_stopping;
    crosswalk::CollisionSemantics semantics = crosswalk::CollisionSemantics::conjunction;
    /// Counterfactual admissible sets; batch, limit and seed come from the command line.
    std::vector<cf::VariableSpec> counterfactual;
};

/// The shipped case-study configuration, including the counterfactual ranges.
Scenario reference_scenario();
std::vector<cf::VariableSpec> reference_counterfactual_ranges();

/// Throws ValidationError naming the file, line and offending field.
Scenario parse_scenario(const Document& doc);
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::json to_json(const Scenario& scenario);

/// Reference trace as factored states of the scenario's schema. Throws ValidationError naming the
/// offending record.
std::vector<mdp::FactoredState> parse_trace(const Document& doc, const Scenario& scenario);
std::vector<mdp::FactoredState> load_trace(const std::filesystem::path& path, const Scenario& scenario);
nlohmann::json trace_to_json(const std::vector<mdp::FactoredState>& states, const std::string& scenario_ref);

/// Builds model, policy class and target for any integral assignment of the scenario.
cf::ProblemBuilder make_problem_builder(const Scenario& scenario);
cf::Problem build_problem(const Scenario& scenario);
cf::PolicyBuilder make_policy_builder(crosswalk::AgentKind kind);

}  // namespace intentcheck::app
