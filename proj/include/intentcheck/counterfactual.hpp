#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "intentcheck/intention.hpp"
#include "intentcheck/mdp.hpp"
#include "intentcheck/reachability.hpp"

namespace intentcheck::cf {

/// Counter-based SplitMix64 stream: draw k of seed s is splitmix64(s + (k + 1) * golden gamma).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t next();
    /// Unbiased integer in [0, bound); bound must be positive.
    std::uint64_t uniform(std::uint64_t bound);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    static constexpr const char* name() { return "splitmix64-counter"; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Admissible values of one integral variable, in raw (scaled) schema units.
struct VariableSpec {
    enum class Kind { frozen, epsilon, range, values };

    std::string name;
    Kind kind = Kind::frozen;
    /// epsilon: admissible y satisfy |y - reference| < epsilon (raw units).
    std::int32_t epsilon = 0;
    /// range: lo, lo + granularity, ... up to hi.
    std::int32_t lo = 0;
    std::int32_t hi = 0;
    /// Grid step for epsilon and range kinds, in raw units.
    std::int32_t granularity = 1;
    std::vector<std::int32_t> values;

    static VariableSpec frozen_at_reference(std::string name);
    static VariableSpec within_epsilon(std::string name, std::int32_t epsilon, std::int32_t granularity = 1);
    static VariableSpec closed_range(std::string name, std::int32_t lo, std::int32_t hi, std::int32_t granularity = 1);
    static VariableSpec value_set(std::string name, std::vector<std::int32_t> values);
};

struct CounterfactualSpec {
    /// One entry per integral variable of the schema; missing variables stay frozen.
    std::vector<VariableSpec> variables;
    std::uint32_t batch_size = 5;
    std::uint32_t trace_limit = 100;
    std::uint64_t seed = 0;
    /// Draw this many candidates per sample and keep the one with the largest scope of agency.
    std::uint32_t high_sigma_candidates = 0;
    /// Worker threads for scenario analysis; 0 means hardware concurrency.
    unsigned threads = 1;

    /// Throws SpecError on batch_size = 0, trace_limit < batch_size or malformed variables.
    void validate() const;
};

/// Sorted admissible values of every integral variable, in schema order. Throws SpecError when a
/// set is empty or names an unknown or non-integral variable.
std::vector<std::vector<std::int32_t>> admissible_sets(const CounterfactualSpec& spec,
                                                       const mdp::VariableSchema& schema,
                                                       const std::vector<std::int32_t>& reference_integral);

/// Independent uniform draw per variable from its admissible set. Frozen variables consume no
/// randomness.
std::vector<std::int32_t> sample_cf_values(const std::vector<std::vector<std::int32_t>>& admissible,
                                           CounterRng& rng);

/// Convenience overload that resolves admissible sets first.
std::vector<std::int32_t> sample_cf_values(const CounterfactualSpec& spec, const mdp::VariableSchema& schema,
                                           const std::vector<std::int32_t>& reference_integral, CounterRng& rng);

struct Rejection {
    enum class Reason { unreachable, invalid_step, not_in_target };
    Reason reason;
    /// Offending position in the trace (step i means the move from state i - 1 to state i).
    std::size_t index;
};

std::string to_string(Rejection::Reason reason);
std::string describe(const Rejection& rejection);

using LiftResult = std::variant<mdp::Trace, Rejection>;

/// Replaces the integral part of every reference state with `assignment` and checks the result
/// against the counterfactual model.
LiftResult lift_trace(const std::vector<mdp::FactoredState>& reference_states,
                      const std::vector<std::int32_t>& assignment, const mdp::FactoredMdp& cf_mdp,
                      const reach::TargetSet& target);

struct Aggregate {
    std::optional<double> rho;
    double sigma = 0.0;
    /// Traces left out of the rho mean because their own rho is undefined.
    std::size_t undefined_rho = 0;
};

/// Unweighted means across traces.
Aggregate aggregate(const std::vector<intention::TraceAssessment>& assessments);

/// Model, policy class and target of one scenario.
struct Problem {
    mdp::FactoredMdp mdp;
    mdp::PolicyClass policy_class;
    reach::TargetSet target;
};

/// Builds the scenario determined by an integral assignment (schema order).
using ProblemBuilder = std::function<Problem(const std::vector<std::int32_t>& integral)>;
/// Builds an agent's policy on a given model.
using PolicyBuilder = std::function<mdp::Policy(const mdp::FactoredMdp&)>;

struct LogEntry {
    std::vector<std::int32_t> integral;
    bool reference = false;
    intention::TraceAssessment assessment;
};

enum class StopReason { verdict_reached, limit_exhausted };
std::string to_string(StopReason reason);

struct EvidenceLog {
    std::vector<LogEntry> entries;
    Aggregate aggregate;
    intention::Verdict verdict = intention::Verdict::low_agency;
    StopReason stop_reason = StopReason::limit_exhausted;
    /// Candidate assignments drawn and rejected while this log was open.
    std::uint64_t draws = 0;
    std::uint64_t rejections = 0;

    std::size_t counterfactual_count() const { return entries.empty() ? 0 : entries.size() - 1; }
    std::vector<intention::TraceAssessment> assessments() const;
};

struct LoopOptions {
    intention::Thresholds thresholds;
    reach::SolverOptions solver;
};

/// Evidence loop for several agents on one shared sequence of counterfactual scenarios. Each
/// agent stops on its own conclusive verdict; the result equals running the single-agent loop
/// per agent with the same seed. Deterministic for a fixed seed and any thread count.
/// Throws ValidationError when the reference states do not form a valid trace with a constant
/// integral part, and SamplingError when a batch stays unfilled after 1000 * batch_size draws.
std::vector<EvidenceLog> evidence_loop_multi(const mdp::VariableSchema& schema, const ProblemBuilder& builder,
                                             const std::vector<mdp::FactoredState>& reference_states,
                                             const std::vector<PolicyBuilder>& agents,
                                             const CounterfactualSpec& spec, const LoopOptions& options = {});

EvidenceLog evidence_loop(const mdp::VariableSchema& schema, const ProblemBuilder& builder,
                          const std::vector<mdp::FactoredState>& reference_states,
                          const PolicyBuilder& agent, const CounterfactualSpec& spec,
                          const LoopOptions& options = {});

}  // namespace intentcheck::cf
