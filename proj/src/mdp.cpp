#include "intentcheck/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace intentcheck::mdp {

namespace {

std::string describe(const VariableSchema& schema, const FactoredState& state) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < state.values.size(); ++i) {
        if (i > 0) out << ", ";
        if (i < schema.size()) out << schema[i].name << '=';
        out << state.values[i];
    }
    out << ')';
    return out.str();
}

}  // namespace

VariableSchema::VariableSchema(std::vector<Variable> variables) : variables_(std::move(variables)) {
    std::set<std::string_view> names;
    for (const auto& var : variables_) {
        if (var.name.empty()) throw SchemaError("variable with empty name");
        if (!names.insert(var.name).second) throw SchemaError("duplicate variable name '" + var.name + "'");
        if (var.domain.lo > var.domain.hi) throw SchemaError("variable '" + var.name + "' has an empty domain");
        if (var.domain.scale <= 0) throw SchemaError("variable '" + var.name + "' has non-positive scale");
    }
}

std::optional<std::size_t> VariableSchema::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < variables_.size(); ++i) {
        if (variables_[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<std::size_t> VariableSchema::positions(VariableKind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < variables_.size(); ++i) {
        if (variables_[i].kind == kind) out.push_back(i);
    }
    return out;
}

std::size_t FactoredStateHash::operator()(const FactoredState& s) const noexcept {
    // FNV-1a over the raw values.
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int32_t v : s.values) {
        h ^= static_cast<std::uint32_t>(v);
        h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
}

void check_state(const VariableSchema& schema, const FactoredState& state) {
    if (state.values.size() != schema.size()) {
        throw SchemaError("state " + describe(schema, state) + " assigns " + std::to_string(state.values.size()) +
                          " values, schema has " + std::to_string(schema.size()) + " variables");
    }
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& var = schema[i];
        if (!var.domain.contains(state.values[i])) {
            throw SchemaError("value " + std::to_string(state.values[i]) + " of variable '" + var.name +
                              "' outside domain [" + std::to_string(var.domain.lo) + ", " +
                              std::to_string(var.domain.hi) + "]");
        }
    }
}

SplitState split_state(const FactoredState& state, const VariableSchema& schema) {
    SplitState parts;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        auto& dst = schema[i].kind == VariableKind::integral ? parts.integral : parts.peripheral;
        dst.push_back(state.values.at(i));
    }
    return parts;
}

FactoredState recompose(const SplitState& parts, const VariableSchema& schema) {
    FactoredState state;
    state.values.reserve(schema.size());
    std::size_t p = 0;
    std::size_t q = 0;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].kind == VariableKind::integral) {
            state.values.push_back(parts.integral.at(q++));
        } else {
            state.values.push_back(parts.peripheral.at(p++));
        }
    }
    if (p != parts.peripheral.size() || q != parts.integral.size()) {
        throw SchemaError("split state does not match schema arity");
    }
    return state;
}

FactoredMdp::FactoredMdp(ModelParts parts) : parts_(std::move(parts)) {
    const std::size_t n = parts_.states.size();
    if (n == 0) throw ModelError("model has no states");
    if (parts_.actions.empty() || parts_.actions.size() > 64) throw ModelError("model needs between 1 and 64 actions");
    if (parts_.choice_start.size() != n + 1 || parts_.choice_start.front() != 0 ||
        parts_.choice_start.back() != parts_.choices.size()) {
        throw ModelError("malformed choice index");
    }
    if (to_index(parts_.initial) >= n) throw ModelError("initial state out of range");
    if (parts_.sink && to_index(*parts_.sink) >= n) throw ModelError("sink state out of range");

    index_.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        if (!index_.emplace(parts_.states[s], to_state_id(s)).second) {
            throw ModelError("duplicate state " + describe(parts_.schema, parts_.states[s]));
        }
        ActionIndex previous = 0;
        for (std::uint32_t c = parts_.choice_start[s]; c < parts_.choice_start[s + 1]; ++c) {
            const Choice& choice = parts_.choices[c];
            if (choice.action >= parts_.actions.size()) throw ModelError("action index out of range");
            if (c > parts_.choice_start[s] && choice.action <= previous) {
                throw ModelError("choices must be sorted by action and unique");
            }
            previous = choice.action;
            if (choice.begin >= choice.end || choice.end > parts_.transitions.size()) {
                throw ModelError("empty or out-of-range distribution");
            }
            double sum = 0.0;
            for (std::uint32_t t = choice.begin; t < choice.end; ++t) {
                const Transition& tr = parts_.transitions[t];
                if (to_index(tr.target) >= n) throw ModelError("transition target out of range");
                if (!(tr.probability > 0.0) || tr.probability > 1.0 + kNormalizationTolerance) {
                    throw ModelError("probability outside (0, 1] at state " +
                                     describe(parts_.schema, parts_.states[s]) + ", action '" +
                                     parts_.actions[choice.action] + "'");
                }
                sum += tr.probability;
            }
            if (std::abs(sum - 1.0) > kNormalizationTolerance) {
                throw ModelError("distribution sums to " + std::to_string(sum) + " at state " +
                                 describe(parts_.schema, parts_.states[s]) + ", action '" +
                                 parts_.actions[choice.action] + "'");
            }
        }
    }

    if (parts_.sink) {
        const StateId sink = *parts_.sink;
        auto sink_choices = choices(sink);
        if (sink_choices.size() != parts_.actions.size()) throw ModelError("sink must enable every action");
        for (const Choice& choice : sink_choices) {
            auto succ = successors(choice);
            if (succ.size() != 1 || succ[0].target != sink || std::abs(succ[0].probability - 1.0) > kNormalizationTolerance) {
                throw ModelError("sink must loop to itself with probability 1");
            }
        }
    }
}

const FactoredState& FactoredMdp::state(StateId id) const {
    check_id(id);
    return parts_.states[to_index(id)];
}

std::optional<StateId> FactoredMdp::find(const FactoredState& state) const {
    auto it = index_.find(state);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::span<const Choice> FactoredMdp::choices(StateId id) const {
    check_id(id);
    const std::size_t s = to_index(id);
    return {parts_.choices.data() + parts_.choice_start[s], parts_.choices.data() + parts_.choice_start[s + 1]};
}

std::optional<std::span<const Transition>> FactoredMdp::distribution(StateId id, ActionIndex action) const {
    for (const Choice& choice : choices(id)) {
        if (choice.action == action) return successors(choice);
    }
    return std::nullopt;
}

void FactoredMdp::check_id(StateId id) const {
    if (to_index(id) >= parts_.states.size()) {
        throw LookupError("unknown state id " + std::to_string(to_index(id)));
    }
}

FactoredMdp enumerate_model(const VariableSchema& schema, std::vector<std::string> actions,
                            const TransitionRule& rule, const FactoredState& initial,
                            const std::optional<FactoredState>& sink) {
    check_state(schema, initial);
    if (sink) check_state(schema, *sink);
    if (actions.empty() || actions.size() > 64) throw ModelError("model needs between 1 and 64 actions");

    ModelParts parts;
    parts.schema = schema;
    parts.actions = std::move(actions);
    parts.choice_start.push_back(0);

    std::unordered_map<FactoredState, StateId, FactoredStateHash> ids;
    auto intern = [&](const FactoredState& s) {
        auto [it, inserted] = ids.try_emplace(s, to_state_id(parts.states.size()));
        if (inserted) {
            check_state(schema, s);
            parts.states.push_back(s);
        }
        return it->second;
    };
    parts.initial = intern(initial);

    // States are appended as discovered, so iterating by index is a BFS.
    std::vector<std::pair<StateId, double>> merged;
    for (std::size_t s = 0; s < parts.states.size(); ++s) {
        const FactoredState current = parts.states[s];
        for (ActionIndex a = 0; a < parts.actions.size(); ++a) {
            std::optional<FactoredDistribution> dist = rule(current, a);
            if (!dist) continue;
            merged.clear();
            double sum = 0.0;
            for (const auto& [succ, p] : *dist) {
                if (p < 0.0 || p > 1.0 + kNormalizationTolerance) {
                    throw ModelError("probability " + std::to_string(p) + " outside [0, 1] at state " +
                                     describe(schema, current) + ", action '" + parts.actions[a] + "'");
                }
                sum += p;
                if (p == 0.0) continue;
                StateId id = intern(succ);
                auto it = std::find_if(merged.begin(), merged.end(), [&](const auto& e) { return e.first == id; });
                if (it == merged.end()) {
                    merged.emplace_back(id, p);
                } else {
                    it->second += p;
                }
            }
            if (std::abs(sum - 1.0) > kNormalizationTolerance) {
                throw ModelError("unnormalized distribution (sum " + std::to_string(sum) + ") at state " +
                                 describe(schema, current) + ", action '" + parts.actions[a] + "'");
            }
            std::sort(merged.begin(), merged.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
            Choice choice{a, static_cast<std::uint32_t>(parts.transitions.size()), 0};
            for (const auto& [id, p] : merged) parts.transitions.push_back({id, p});
            choice.end = static_cast<std::uint32_t>(parts.transitions.size());
            parts.choices.push_back(choice);
        }
        parts.choice_start.push_back(static_cast<std::uint32_t>(parts.choices.size()));
    }

    if (sink) {
        if (auto it = ids.find(*sink); it != ids.end()) parts.sink = it->second;
    }
    return FactoredMdp(std::move(parts));
}

PolicyClass PolicyClass::unrestricted(const FactoredMdp& mdp) {
    std::vector<Mask> masks(mdp.num_states(), 0);
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        for (const Choice& c : mdp.choices(to_state_id(s))) masks[s] |= Mask{1} << c.action;
    }
    return PolicyClass(std::move(masks));
}

PolicyClass PolicyClass::singleton(const Policy& policy) {
    std::vector<Mask> masks;
    masks.reserve(policy.size());
    for (ActionIndex a : policy.choices()) masks.push_back(Mask{1} << a);
    return PolicyClass(std::move(masks));
}

bool PolicyClass::contains(const Policy& policy) const {
    if (policy.size() != allowed_.size()) return false;
    for (std::size_t s = 0; s < allowed_.size(); ++s) {
        if (!allows(to_state_id(s), policy(to_state_id(s)))) return false;
    }
    return true;
}

void validate(const FactoredMdp& mdp, const Policy& policy) {
    if (policy.size() != mdp.num_states()) {
        throw PolicyError("policy covers " + std::to_string(policy.size()) + " states, model has " +
                          std::to_string(mdp.num_states()));
    }
    for (std::size_t s = 0; s < policy.size(); ++s) {
        const StateId id = to_state_id(s);
        if (!mdp.has_action(id, policy(id))) {
            throw PolicyError("policy selects undefined action " + std::to_string(policy(id)) + " at state " +
                              std::to_string(s));
        }
    }
}

void validate(const FactoredMdp& mdp, const PolicyClass& policy_class) {
    if (policy_class.size() != mdp.num_states()) {
        throw PolicyError("policy class covers " + std::to_string(policy_class.size()) + " states, model has " +
                          std::to_string(mdp.num_states()));
    }
    const PolicyClass all = PolicyClass::unrestricted(mdp);
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        const auto mask = policy_class.masks()[s];
        if (mask == 0) throw PolicyError("empty allowed-action set at state " + std::to_string(s));
        if ((mask & ~all.masks()[s]) != 0) {
            throw PolicyError("policy class allows an undefined action at state " + std::to_string(s));
        }
    }
}

Trace::Trace(std::vector<StateId> states) : states_(std::move(states)) {
    if (states_.empty()) throw Error("trace must contain at least one state");
}

bool is_valid_trace(const FactoredMdp& mdp, const Trace& trace) {
    for (StateId id : trace.states()) mdp.check_id(id);
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
        const StateId from = trace.states()[i];
        const StateId to = trace.states()[i + 1];
        bool connected = false;
        for (const Choice& choice : mdp.choices(from)) {
            for (const Transition& t : mdp.successors(choice)) {
                if (t.target == to && t.probability > 0.0) {
                    connected = true;
                    break;
                }
            }
            if (connected) break;
        }
        if (!connected) return false;
    }
    return true;
}

FactoredMdp induced_chain(const FactoredMdp& mdp, const Policy& policy) {
    validate(mdp, policy);
    ModelParts parts;
    parts.schema = mdp.schema();
    parts.actions = {"policy"};
    parts.initial = mdp.initial();
    parts.sink = mdp.sink();
    parts.states.reserve(mdp.num_states());
    parts.choice_start.reserve(mdp.num_states() + 1);
    parts.choice_start.push_back(0);
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        const StateId id = to_state_id(s);
        parts.states.push_back(mdp.state(id));
        auto dist = *mdp.distribution(id, policy(id));
        Choice choice{0, static_cast<std::uint32_t>(parts.transitions.size()), 0};
        parts.transitions.insert(parts.transitions.end(), dist.begin(), dist.end());
        choice.end = static_cast<std::uint32_t>(parts.transitions.size());
        parts.choices.push_back(choice);
        parts.choice_start.push_back(static_cast<std::uint32_t>(parts.choices.size()));
    }
    return FactoredMdp(std::move(parts));
}

}  // namespace intentcheck::mdp
