#include "intentcheck/intention.hpp"

#include <algorithm>
#include <cmath>

#include "intentcheck/log.hpp"

namespace intentcheck::intention {

void Thresholds::validate() const {
    if (!(rho_low >= 0.0 && rho_low < rho_high && rho_high <= 1.0)) {
        throw Error("thresholds need 0 <= rho_low < rho_high <= 1");
    }
    if (!(sigma_min > 0.0 && sigma_min < 1.0)) throw Error("thresholds need 0 < sigma_min < 1");
}

std::string to_string(Verdict verdict) {
    switch (verdict) {
        case Verdict::intentional: return "Intentional";
        case Verdict::non_intentional: return "NonIntentional";
        case Verdict::low_agency: return "InsufficientEvidence(low-agency)";
        case Verdict::inconclusive_quotient: return "InsufficientEvidence(inconclusive-quotient)";
    }
    return "?";
}

bool is_conclusive(Verdict verdict) {
    return verdict == Verdict::intentional || verdict == Verdict::non_intentional;
}

namespace {

double clamp_within(double value, double lo, double hi, double slack, const char* what) {
    if (value < lo - slack || value > hi + slack) {
        throw SolverError(std::string(what) + " = " + std::to_string(value) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "] beyond solver tolerance");
    }
    return std::clamp(value, lo, hi);
}

}  // namespace

StateAssessment assess_state(double p_pi, double p_min, double p_max, double tolerance) {
    const double slack = 2.0 * tolerance;
    StateAssessment out;
    out.p_min = clamp_within(p_min, 0.0, 1.0, slack, "p_min");
    out.p_max = clamp_within(p_max, 0.0, 1.0, slack, "p_max");
    if (out.p_min > out.p_max) {
        if (out.p_min - out.p_max > slack) throw SolverError("p_min exceeds p_max beyond solver tolerance");
        out.p_min = out.p_max;
    }
    out.p_pi = clamp_within(p_pi, out.p_min, out.p_max, slack, "p_pi");
    out.sigma = out.p_max - out.p_min;
    if (out.sigma > kAgencyEpsilon) {
        out.rho = std::clamp((out.p_pi - out.p_min) / out.sigma, 0.0, 1.0);
    }
    return out;
}

TraceAggregate assess_trace(const std::vector<StateAssessment>& per_state) {
    if (per_state.empty()) throw Error("cannot assess an empty trace");
    TraceAggregate out;
    double sigma_sum = 0.0;
    double weight = 0.0;
    double weighted = 0.0;
    for (const auto& s : per_state) {
        sigma_sum += s.sigma;
        if (s.rho) {
            weight += s.sigma;
            weighted += s.sigma * *s.rho;
        }
    }
    out.sigma = sigma_sum / static_cast<double>(per_state.size());
    if (weight > 0.0) out.rho = weighted / weight;
    return out;
}

Verdict classify(std::optional<double> rho, double sigma, const Thresholds& thresholds) {
    if (sigma < thresholds.sigma_min || !rho) return Verdict::low_agency;
    if (*rho >= thresholds.rho_high) return Verdict::intentional;
    if (*rho <= thresholds.rho_low) return Verdict::non_intentional;
    return Verdict::inconclusive_quotient;
}

ReachTriple compute_reach_triple(const mdp::FactoredMdp& mdp, const mdp::Policy& policy,
                                 const mdp::PolicyClass& policy_class, const reach::TargetSet& target,
                                 const reach::SolverOptions& options) {
    return ReachTriple{
        reach::reach_extremal(mdp, policy_class, target, reach::Mode::min, options),
        reach::reach_extremal(mdp, policy_class, target, reach::Mode::max, options),
        reach::reach_under_policy(mdp, policy, target, options),
    };
}

TraceAssessment assess_with(const ReachTriple& reach, const mdp::Trace& trace, const Thresholds& thresholds,
                            double tolerance) {
    TraceAssessment out{trace, std::nullopt, 0.0, Verdict::low_agency, {}};
    out.per_state.reserve(trace.size());
    for (mdp::StateId id : trace.states()) {
        StateAssessment s = assess_state(reach.p_pi[id], reach.p_min[id], reach.p_max[id], tolerance);
        s.state = id;
        out.per_state.push_back(s);
    }
    const TraceAggregate agg = assess_trace(out.per_state);
    out.rho = agg.rho;
    out.sigma = agg.sigma;
    out.verdict = classify(out.rho, out.sigma, thresholds);
    return out;
}

TraceAssessment analyze_trace(const mdp::FactoredMdp& mdp, const mdp::Policy& policy,
                              const mdp::PolicyClass& policy_class, const reach::TargetSet& target,
                              const mdp::Trace& trace, const Thresholds& thresholds,
                              const reach::SolverOptions& options) {
    thresholds.validate();
    if (!mdp::is_valid_trace(mdp, trace)) throw Error("trace is not valid in the model");
    if (!target.contains(trace.back())) spdlog::warn("analyzed trace does not end in the target set");
    return assess_with(compute_reach_triple(mdp, policy, policy_class, target, options), trace, thresholds,
                       options.tolerance);
}

}  // namespace intentcheck::intention
