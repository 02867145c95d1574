#pragma once

#include <optional>
#include <string>
#include <vector>

#include "intentcheck/mdp.hpp"
#include "intentcheck/reachability.hpp"

namespace intentcheck::intention {

/// Below this scope of agency the intention-quotient of a state is undefined (0/0).
inline constexpr double kAgencyEpsilon = 1e-9;

struct Thresholds {
    double rho_low = 0.25;
    double rho_high = 0.75;
    double sigma_min = 0.5;

    /// Throws Error unless 0 <= rho_low < rho_high <= 1 and 0 < sigma_min < 1.
    void validate() const;

    bool operator==(const Thresholds&) const = default;
};

struct StateAssessment {
    mdp::StateId state{};
    double p_pi = 0.0;
    double p_min = 0.0;
    double p_max = 0.0;
    double sigma = 0.0;
    std::optional<double> rho;
};

enum class Verdict { intentional, non_intentional, low_agency, inconclusive_quotient };

/// "Intentional", "NonIntentional", "InsufficientEvidence(low-agency)", ...
std::string to_string(Verdict verdict);
bool is_conclusive(Verdict verdict);

struct TraceAggregate {
    std::optional<double> rho;
    double sigma = 0.0;
};

struct TraceAssessment {
    mdp::Trace trace;
    std::optional<double> rho;
    double sigma = 0.0;
    Verdict verdict = Verdict::low_agency;
    std::vector<StateAssessment> per_state;
};

/// Scope of agency and intention-quotient of one state. Inputs within 2*tolerance of the
/// sandwich p_min <= p_pi <= p_max are clamped; larger violations throw SolverError.
StateAssessment assess_state(double p_pi, double p_min, double p_max,
                             double tolerance = reach::kDefaultTolerance);

/// Mean scope of agency and sigma-weighted mean intention-quotient over a trace.
TraceAggregate assess_trace(const std::vector<StateAssessment>& per_state);

Verdict classify(std::optional<double> rho, double sigma, const Thresholds& thresholds);

/// Solver outputs needed to assess any trace of one model under one agent.
struct ReachTriple {
    reach::ReachProbabilities p_min;
    reach::ReachProbabilities p_max;
    reach::ReachProbabilities p_pi;
};

ReachTriple compute_reach_triple(const mdp::FactoredMdp& mdp, const mdp::Policy& policy,
                                 const mdp::PolicyClass& policy_class, const reach::TargetSet& target,
                                 const reach::SolverOptions& options = {});

/// Assessment of a trace from precomputed solver outputs.
TraceAssessment assess_with(const ReachTriple& reach, const mdp::Trace& trace, const Thresholds& thresholds,
                            double tolerance = reach::kDefaultTolerance);

/// Runs the three reachability queries and assesses `trace`. Logs a warning when the trace does
/// not end in the target.
TraceAssessment analyze_trace(const mdp::FactoredMdp& mdp, const mdp::Policy& policy,
                              const mdp::PolicyClass& policy_class, const reach::TargetSet& target,
                              const mdp::Trace& trace, const Thresholds& thresholds,
                              const reach::SolverOptions& options = {});

}  // namespace intentcheck::intention
