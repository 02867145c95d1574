#include "intentcheck/reachability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace intentcheck::reach {

using mdp::ActionIndex;
using mdp::Choice;
using mdp::FactoredMdp;
using mdp::PolicyClass;
using mdp::StateId;
using mdp::to_index;
using mdp::to_state_id;

const char* to_string(Mode mode) {
    switch (mode) {
        case Mode::max: return "max";
        case Mode::min: return "min";
        case Mode::fixed_policy: return "fixed-policy";
    }
    return "?";
}

std::size_t StateSet::count() const {
    return static_cast<std::size_t>(std::count(member_.begin(), member_.end(), char{1}));
}

namespace {

constexpr std::uint32_t kNoLayer = std::numeric_limits<std::uint32_t>::max();

/// Flattened view of the model restricted to allowed choices, plus reverse edges.
struct Graph {
    std::size_t n = 0;
    // Allowed choices per state, as pointers into the model.
    std::vector<std::uint32_t> choice_start;
    std::vector<const Choice*> choices;
    // Reverse edges: for each target, (source state, allowed-choice index).
    std::vector<std::uint32_t> pred_start;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> preds;
};

Graph build_graph(const FactoredMdp& model, const PolicyClass& policy_class) {
    Graph g;
    g.n = model.num_states();
    g.choice_start.reserve(g.n + 1);
    g.choice_start.push_back(0);
    std::vector<std::uint32_t> in_degree(g.n + 1, 0);
    for (std::size_t s = 0; s < g.n; ++s) {
        const StateId id = to_state_id(s);
        const auto mask = policy_class.allowed(id);
        if (mask == 0) throw PolicyError("empty allowed-action set at state " + std::to_string(s));
        std::size_t enabled = 0;
        for (const Choice& c : model.choices(id)) {
            if (((mask >> c.action) & 1U) == 0) continue;
            g.choices.push_back(&c);
            ++enabled;
            for (const auto& t : model.successors(c)) ++in_degree[to_index(t.target) + 1];
        }
        if (enabled == 0) throw PolicyError("no allowed action is defined at state " + std::to_string(s));
        g.choice_start.push_back(static_cast<std::uint32_t>(g.choices.size()));
    }
    g.pred_start.assign(g.n + 1, 0);
    std::partial_sum(in_degree.begin(), in_degree.end(), g.pred_start.begin());
    g.preds.resize(g.pred_start.back());
    std::vector<std::uint32_t> fill(g.pred_start.begin(), g.pred_start.end() - 1);
    for (std::size_t s = 0; s < g.n; ++s) {
        for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
            for (const auto& t : model.successors(*g.choices[c])) {
                g.preds[fill[to_index(t.target)]++] = {static_cast<std::uint32_t>(s), c};
            }
        }
    }
    return g;
}

std::vector<char> membership(const StateSet& set) {
    std::vector<char> out(set.universe());
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = set.contains(to_state_id(s)) ? 1 : 0;
    return out;
}

StateSet to_set(const std::vector<char>& member) {
    StateSet set(member.size());
    for (std::size_t s = 0; s < member.size(); ++s) {
        if (member[s]) set.insert(to_state_id(s));
    }
    return set;
}

/// States that can reach `seed` through allowed choices; `blocked` states are never expanded
/// as predecessors (they are added only if in the seed).
std::vector<char> backward_reach(const Graph& g, const std::vector<char>& seed, const std::vector<char>& blocked) {
    std::vector<char> reached = seed;
    std::vector<std::uint32_t> queue;
    for (std::size_t s = 0; s < g.n; ++s) {
        if (seed[s]) queue.push_back(static_cast<std::uint32_t>(s));
    }
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::uint32_t t = queue[head];
        for (std::uint32_t k = g.pred_start[t]; k < g.pred_start[t + 1]; ++k) {
            const std::uint32_t s = g.preds[k].first;
            if (reached[s] || blocked[s]) continue;
            reached[s] = 1;
            queue.push_back(s);
        }
    }
    return reached;
}

/// Least fixpoint A = T ∪ {s : every allowed choice has a successor in A}.
std::vector<char> forced_reach(const Graph& g, const std::vector<char>& target) {
    std::vector<char> in_a = target;
    std::vector<std::uint32_t> remaining(g.n);
    std::vector<char> choice_hit(g.choices.size(), 0);
    std::vector<std::uint32_t> queue;
    for (std::size_t s = 0; s < g.n; ++s) {
        remaining[s] = g.choice_start[s + 1] - g.choice_start[s];
        if (in_a[s]) queue.push_back(static_cast<std::uint32_t>(s));
    }
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::uint32_t t = queue[head];
        for (std::uint32_t k = g.pred_start[t]; k < g.pred_start[t + 1]; ++k) {
            const auto [s, c] = g.preds[k];
            if (in_a[s] || choice_hit[c]) continue;
            choice_hit[c] = 1;
            if (--remaining[s] == 0) {
                in_a[s] = 1;
                queue.push_back(s);
            }
        }
    }
    return in_a;
}

struct Prob1Max {
    std::vector<char> member;
    std::vector<std::uint32_t> layer;
};

/// Greatest fixpoint U of: states that can reach T with every step staying inside U.
Prob1Max prob1_max(const FactoredMdp& model, const Graph& g, const std::vector<char>& target,
                   std::vector<char> candidates) {
    std::vector<char> choice_inside(g.choices.size());
    std::vector<std::uint32_t> layer(g.n);
    while (true) {
        for (std::size_t c = 0; c < g.choices.size(); ++c) {
            bool inside = true;
            for (const auto& t : model.successors(*g.choices[c])) {
                if (!candidates[to_index(t.target)]) {
                    inside = false;
                    break;
                }
            }
            choice_inside[c] = inside ? 1 : 0;
        }
        std::vector<char> reached(g.n, 0);
        std::fill(layer.begin(), layer.end(), kNoLayer);
        std::vector<std::uint32_t> queue;
        for (std::size_t s = 0; s < g.n; ++s) {
            if (target[s]) {
                reached[s] = 1;
                layer[s] = 0;
                queue.push_back(static_cast<std::uint32_t>(s));
            }
        }
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::uint32_t t = queue[head];
            for (std::uint32_t k = g.pred_start[t]; k < g.pred_start[t + 1]; ++k) {
                const auto [s, c] = g.preds[k];
                if (reached[s] || !candidates[s] || !choice_inside[c]) continue;
                reached[s] = 1;
                layer[s] = layer[t] + 1;
                queue.push_back(s);
            }
        }
        if (reached == candidates) return {std::move(reached), std::move(layer)};
        candidates = std::move(reached);
    }
}

struct Classification {
    std::vector<char> prob0;
    std::vector<char> prob1;
    std::vector<std::uint32_t> prob1_layer;  // max mode only
};

Classification classify(const FactoredMdp& model, const Graph& g, const std::vector<char>& target, Mode mode) {
    Classification out;
    const std::vector<char> none(g.n, 0);
    if (mode == Mode::max) {
        std::vector<char> can_reach = backward_reach(g, target, target);
        out.prob0.resize(g.n);
        for (std::size_t s = 0; s < g.n; ++s) out.prob0[s] = can_reach[s] ? 0 : 1;
        Prob1Max p1 = prob1_max(model, g, target, std::move(can_reach));
        out.prob1 = std::move(p1.member);
        out.prob1_layer = std::move(p1.layer);
    } else {
        std::vector<char> forced = forced_reach(g, target);
        out.prob0.resize(g.n);
        for (std::size_t s = 0; s < g.n; ++s) out.prob0[s] = forced[s] ? 0 : 1;
        // P_min < 1 exactly where some policy can reach a prob0 state before the target.
        std::vector<char> may_escape = backward_reach(g, out.prob0, target);
        out.prob1.resize(g.n);
        for (std::size_t s = 0; s < g.n; ++s) out.prob1[s] = may_escape[s] ? 0 : 1;
    }
    return out;
}

void check_target(const FactoredMdp& model, const TargetSet& target) {
    if (target.universe() != model.num_states()) {
        throw Error("target set covers " + std::to_string(target.universe()) + " states, model has " +
                    std::to_string(model.num_states()));
    }
}

/// q-value of a choice with the self-loop solved in closed form.
double choice_value(const FactoredMdp& model, const Choice& c, std::size_t s, const std::vector<double>& v) {
    double self = 0.0;
    double rest = 0.0;
    for (const auto& t : model.successors(c)) {
        const std::size_t u = to_index(t.target);
        if (u == s) {
            self += t.probability;
        } else {
            rest += t.probability * v[u];
        }
    }
    if (self >= 1.0 - 1e-15) return v[s];
    return rest / (1.0 - self);
}

ReachProbabilities solve(const FactoredMdp& model, const PolicyClass& policy_class, const TargetSet& target,
                         Mode mode, const SolverOptions& options) {
    if (!(options.tolerance > 0.0)) throw SolverError("tolerance must be positive");
    check_target(model, target);
    if (policy_class.size() != model.num_states()) throw PolicyError("policy class does not match model size");

    const Graph g = build_graph(model, policy_class);
    const std::vector<char> tgt = membership(target);
    const bool maximize = mode != Mode::min;
    const Classification cls = classify(model, g, tgt, maximize ? Mode::max : Mode::min);

    ReachProbabilities result;
    result.mode = mode;
    result.values.assign(g.n, 0.0);
    std::vector<std::uint32_t> undecided;
    for (std::size_t s = g.n; s-- > 0;) {
        if (cls.prob1[s]) {
            result.values[s] = 1.0;
        } else if (!cls.prob0[s]) {
            undecided.push_back(static_cast<std::uint32_t>(s));
        }
    }

    auto& v = result.values;
    double residual = 0.0;
    if (undecided.empty()) {
        result.converged = true;
    }
    while (!result.converged) {
        if (result.iterations >= options.max_iterations) {
            throw SolverError("value iteration did not converge within " + std::to_string(options.max_iterations) +
                              " iterations (residual " + std::to_string(residual) + ")");
        }
        ++result.iterations;
        residual = 0.0;
        for (std::uint32_t s : undecided) {
            double best = maximize ? -1.0 : 2.0;
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                const double q = choice_value(model, *g.choices[c], s, v);
                best = maximize ? std::max(best, q) : std::min(best, q);
            }
            best = std::clamp(best, 0.0, 1.0);
            residual = std::max(residual, std::abs(best - v[s]));
            v[s] = best;
        }
        result.converged = residual < options.tolerance;
    }
    result.residual = residual;

    // Witness: lowest-index action among near-optimal ones; in max mode the choice must also make
    // progress towards the target so that end components cannot trap the witness.
    std::vector<ActionIndex> witness(g.n, 0);
    std::vector<std::uint32_t> chosen(g.n, 0);
    auto first_allowed = [&](std::size_t s) { return g.choice_start[s]; };
    for (std::size_t s = 0; s < g.n; ++s) chosen[s] = first_allowed(s);

    if (!maximize) {
        for (std::size_t s = 0; s < g.n; ++s) {
            if (cls.prob0[s] && !tgt[s]) {
                // Keep the probability at zero: every successor must stay in prob0.
                for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                    bool stays = true;
                    for (const auto& t : model.successors(*g.choices[c])) {
                        if (!cls.prob0[to_index(t.target)]) {
                            stays = false;
                            break;
                        }
                    }
                    if (stays) {
                        chosen[s] = c;
                        break;
                    }
                }
            }
        }
        for (std::uint32_t s : undecided) {
            double best = 2.0;
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                best = std::min(best, choice_value(model, *g.choices[c], s, v));
            }
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                if (choice_value(model, *g.choices[c], s, v) <= best + options.tolerance) {
                    chosen[s] = c;
                    break;
                }
            }
        }
    } else {
        std::vector<std::uint32_t> layer(g.n, kNoLayer);
        for (std::size_t s = 0; s < g.n; ++s) {
            if (!cls.prob1[s]) continue;
            layer[s] = cls.prob1_layer[s];
            if (tgt[s]) continue;
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                bool inside = true;
                bool progress = false;
                for (const auto& t : model.successors(*g.choices[c])) {
                    const std::size_t u = to_index(t.target);
                    if (!cls.prob1[u]) inside = false;
                    if (cls.prob1_layer[u] < cls.prob1_layer[s]) progress = true;
                }
                if (inside && progress) {
                    chosen[s] = c;
                    break;
                }
            }
        }
        // Near-optimal choices of undecided states, then backward layering from the prob1 states.
        std::vector<char> near_optimal(g.choices.size(), 0);
        for (std::uint32_t s : undecided) {
            double best = -1.0;
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                best = std::max(best, choice_value(model, *g.choices[c], s, v));
            }
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                if (choice_value(model, *g.choices[c], s, v) >= best - options.tolerance) near_optimal[c] = 1;
            }
        }
        std::vector<std::uint32_t> queue;
        for (std::size_t s = 0; s < g.n; ++s) {
            if (cls.prob1[s]) queue.push_back(static_cast<std::uint32_t>(s));
        }
        std::vector<char> is_undecided(g.n, 0);
        for (std::uint32_t s : undecided) is_undecided[s] = 1;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::uint32_t t = queue[head];
            for (std::uint32_t k = g.pred_start[t]; k < g.pred_start[t + 1]; ++k) {
                const auto [s, c] = g.preds[k];
                if (!is_undecided[s] || layer[s] != kNoLayer || !near_optimal[c]) continue;
                layer[s] = layer[t] + 1;
                queue.push_back(s);
            }
        }
        for (std::uint32_t s : undecided) {
            bool assigned = false;
            for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1] && !assigned; ++c) {
                if (!near_optimal[c]) continue;
                for (const auto& t : model.successors(*g.choices[c])) {
                    if (layer[to_index(t.target)] < layer[s]) {
                        chosen[s] = c;
                        assigned = true;
                        break;
                    }
                }
            }
            if (!assigned) {
                for (std::uint32_t c = g.choice_start[s]; c < g.choice_start[s + 1]; ++c) {
                    if (near_optimal[c]) {
                        chosen[s] = c;
                        break;
                    }
                }
            }
        }
    }
    for (std::size_t s = 0; s < g.n; ++s) witness[s] = g.choices[chosen[s]]->action;
    result.witness = mdp::Policy(std::move(witness));
    return result;
}

}  // namespace

QualitativeResult qualitative_states(const FactoredMdp& mdp, const PolicyClass& policy_class,
                                     const TargetSet& target, Mode mode) {
    if (mode == Mode::fixed_policy) throw Error("qualitative_states expects mode max or min");
    check_target(mdp, target);
    if (policy_class.size() != mdp.num_states()) throw PolicyError("policy class does not match model size");
    const Graph g = build_graph(mdp, policy_class);
    Classification cls = classify(mdp, g, membership(target), mode);
    return {to_set(cls.prob0), to_set(cls.prob1)};
}

ReachProbabilities reach_extremal(const FactoredMdp& mdp, const PolicyClass& policy_class, const TargetSet& target,
                                  Mode mode, const SolverOptions& options) {
    if (mode == Mode::fixed_policy) throw Error("reach_extremal expects mode max or min");
    return solve(mdp, policy_class, target, mode, options);
}

ReachProbabilities reach_under_policy(const FactoredMdp& mdp, const mdp::Policy& policy, const TargetSet& target,
                                      const SolverOptions& options) {
    mdp::validate(mdp, policy);
    ReachProbabilities result = solve(mdp, PolicyClass::singleton(policy), target, Mode::fixed_policy, options);
    result.witness = policy;
    return result;
}

}  // namespace intentcheck::reach
