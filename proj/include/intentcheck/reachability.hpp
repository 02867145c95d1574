#pragma once

#include <cstddef>
#include <vector>

#include "intentcheck/mdp.hpp"

namespace intentcheck::reach {

inline constexpr double kDefaultTolerance = 1e-6;
inline constexpr std::size_t kDefaultIterationCap = 1'000'000;

enum class Mode { max, min, fixed_policy };

const char* to_string(Mode mode);

/// Dense membership vector over the states of one model.
class StateSet {
public:
    StateSet() = default;
    explicit StateSet(std::size_t num_states) : member_(num_states, 0) {}

    template <typename Pred>
    static StateSet from_predicate(const mdp::FactoredMdp& mdp, Pred&& pred) {
        StateSet set(mdp.num_states());
        for (std::size_t s = 0; s < mdp.num_states(); ++s) {
            if (pred(mdp::to_state_id(s))) set.member_[s] = 1;
        }
        return set;
    }

    bool contains(mdp::StateId id) const { return member_.at(mdp::to_index(id)) != 0; }
    void insert(mdp::StateId id) { member_.at(mdp::to_index(id)) = 1; }
    void erase(mdp::StateId id) { member_.at(mdp::to_index(id)) = 0; }
    std::size_t universe() const { return member_.size(); }
    std::size_t count() const;

    bool operator==(const StateSet&) const = default;

private:
    std::vector<char> member_;
};

using TargetSet = StateSet;

struct QualitativeResult {
    StateSet prob0;
    StateSet prob1;
};

struct SolverOptions {
    double tolerance = kDefaultTolerance;
    std::size_t max_iterations = kDefaultIterationCap;
};

struct ReachProbabilities {
    std::vector<double> values;
    Mode mode = Mode::max;
    bool converged = false;
    std::size_t iterations = 0;
    double residual = 0.0;
    /// Optimal memoryless policy for max/min; the evaluated policy for fixed_policy.
    mdp::Policy witness;

    double operator[](mdp::StateId id) const { return values.at(mdp::to_index(id)); }
};

/// Graph-based classification of states whose optimal (per `mode`) reach probability is exactly
/// 0 or exactly 1 within the policy class. `mode` must be max or min.
QualitativeResult qualitative_states(const mdp::FactoredMdp& mdp, const mdp::PolicyClass& policy_class,
                                     const TargetSet& target, Mode mode);

/// P_max|Π or P_min|Π of reaching `target`, by value iteration pinned to the qualitative 0/1
/// states. Throws SolverError when the iteration cap is hit.
ReachProbabilities reach_extremal(const mdp::FactoredMdp& mdp, const mdp::PolicyClass& policy_class,
                                  const TargetSet& target, Mode mode, const SolverOptions& options = {});

/// Reach probabilities of the Markov chain induced by `policy`.
ReachProbabilities reach_under_policy(const mdp::FactoredMdp& mdp, const mdp::Policy& policy,
                                      const TargetSet& target, const SolverOptions& options = {});

}  // namespace intentcheck::reach
