#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "intentcheck/error.hpp"

namespace intentcheck::mdp {

/// Probabilities of a distribution must sum to one within this tolerance.
inline constexpr double kNormalizationTolerance = 1e-9;

enum class VariableKind { peripheral, integral };

/// Finite integer domain [lo, hi]. A value v denotes the real number v / scale,
/// so scale = 10 gives a 0.1 decimal grid.
struct Domain {
    std::int32_t lo = 0;
    std::int32_t hi = 0;
    std::int32_t scale = 1;

    bool contains(std::int32_t value) const { return value >= lo && value <= hi; }
    std::size_t size() const { return static_cast<std::size_t>(hi - lo + 1); }
    double to_real(std::int32_t value) const { return static_cast<double>(value) / scale; }

    bool operator==(const Domain&) const = default;
};

struct Variable {
    std::string name;
    Domain domain;
    VariableKind kind = VariableKind::peripheral;
};

class VariableSchema {
public:
    VariableSchema() = default;
    explicit VariableSchema(std::vector<Variable> variables);

    std::size_t size() const { return variables_.size(); }
    const Variable& operator[](std::size_t i) const { return variables_[i]; }
    const std::vector<Variable>& variables() const { return variables_; }

    std::optional<std::size_t> index_of(std::string_view name) const;
    /// Positions of the variables of the given kind, in schema order.
    std::vector<std::size_t> positions(VariableKind kind) const;

private:
    std::vector<Variable> variables_;
};

/// One value per schema variable, in schema order.
struct FactoredState {
    std::vector<std::int32_t> values;

    bool operator==(const FactoredState&) const = default;
};

struct FactoredStateHash {
    std::size_t operator()(const FactoredState& s) const noexcept;
};

/// Throws SchemaError unless the state assigns every variable a value inside its domain.
void check_state(const VariableSchema& schema, const FactoredState& state);

/// State values split by variable kind; each part keeps schema order.
struct SplitState {
    std::vector<std::int32_t> peripheral;
    std::vector<std::int32_t> integral;

    bool operator==(const SplitState&) const = default;
};

SplitState split_state(const FactoredState& state, const VariableSchema& schema);
FactoredState recompose(const SplitState& parts, const VariableSchema& schema);

enum class StateId : std::uint32_t {};

constexpr std::size_t to_index(StateId id) { return static_cast<std::size_t>(id); }
constexpr StateId to_state_id(std::size_t index) { return static_cast<StateId>(index); }

using ActionIndex = std::uint32_t;

struct Transition {
    StateId target;
    double probability;
};

/// An enabled action at a state; [begin, end) indexes the model's transition array.
struct Choice {
    ActionIndex action;
    std::uint32_t begin;
    std::uint32_t end;
};

/// Raw sparse storage handed to FactoredMdp; choice_start has num_states + 1 entries.
struct ModelParts {
    VariableSchema schema;
    std::vector<FactoredState> states;
    std::vector<std::string> actions;
    std::vector<std::uint32_t> choice_start;
    std::vector<Choice> choices;
    std::vector<Transition> transitions;
    StateId initial{};
    std::optional<StateId> sink;
};

/// Sparse MDP over enumerated factored states. Immutable once constructed.
class FactoredMdp {
public:
    /// Validates normalization, target ids, action indices and sink self-loops.
    explicit FactoredMdp(ModelParts parts);

    const VariableSchema& schema() const { return parts_.schema; }
    const std::vector<std::string>& actions() const { return parts_.actions; }
    std::size_t num_states() const { return parts_.states.size(); }
    std::size_t num_choices() const { return parts_.choices.size(); }
    std::size_t num_transitions() const { return parts_.transitions.size(); }
    StateId initial() const { return parts_.initial; }
    std::optional<StateId> sink() const { return parts_.sink; }

    const FactoredState& state(StateId id) const;
    std::optional<StateId> find(const FactoredState& state) const;

    std::span<const Choice> choices(StateId id) const;
    std::span<const Transition> successors(const Choice& choice) const {
        return {parts_.transitions.data() + choice.begin, parts_.transitions.data() + choice.end};
    }
    /// Distribution of `action` at `id`, or nullopt when the action is undefined there.
    std::optional<std::span<const Transition>> distribution(StateId id, ActionIndex action) const;
    bool has_action(StateId id, ActionIndex action) const { return distribution(id, action).has_value(); }

    /// Throws LookupError for ids outside the model.
    void check_id(StateId id) const;

private:
    ModelParts parts_;
    std::unordered_map<FactoredState, StateId, FactoredStateHash> index_;
};

using FactoredDistribution = std::vector<std::pair<FactoredState, double>>;

/// Successor distribution of (state, action), or nullopt when the action is undefined at state.
using TransitionRule = std::function<std::optional<FactoredDistribution>(const FactoredState&, ActionIndex)>;

/// Breadth-first forward exploration from `initial`. StateIds follow discovery order and
/// duplicate successors are merged. When `sink` is given and reached, its id is recorded.
FactoredMdp enumerate_model(const VariableSchema& schema, std::vector<std::string> actions,
                            const TransitionRule& rule, const FactoredState& initial,
                            const std::optional<FactoredState>& sink = std::nullopt);

/// Deterministic memoryless policy: one action per state.
class Policy {
public:
    Policy() = default;
    explicit Policy(std::vector<ActionIndex> choice) : choice_(std::move(choice)) {}

    ActionIndex operator()(StateId id) const { return choice_.at(to_index(id)); }
    std::size_t size() const { return choice_.size(); }
    const std::vector<ActionIndex>& choices() const { return choice_; }

    bool operator==(const Policy&) const = default;

private:
    std::vector<ActionIndex> choice_;
};

/// Per-state mask of allowed actions (bit a set = action a allowed). Supports up to 64 actions.
class PolicyClass {
public:
    using Mask = std::uint64_t;

    PolicyClass() = default;
    explicit PolicyClass(std::vector<Mask> allowed) : allowed_(std::move(allowed)) {}

    /// Every defined action at every state.
    static PolicyClass unrestricted(const FactoredMdp& mdp);
    /// Exactly the action chosen by `policy` at every state.
    static PolicyClass singleton(const Policy& policy);

    Mask allowed(StateId id) const { return allowed_.at(to_index(id)); }
    bool allows(StateId id, ActionIndex action) const { return (allowed(id) >> action) & 1U; }
    std::size_t size() const { return allowed_.size(); }
    const std::vector<Mask>& masks() const { return allowed_; }

    bool contains(const Policy& policy) const;

private:
    std::vector<Mask> allowed_;
};

/// Throws PolicyError unless the policy is total and picks defined actions.
void validate(const FactoredMdp& mdp, const Policy& policy);
/// Throws PolicyError unless every mask is non-empty and only allows defined actions.
void validate(const FactoredMdp& mdp, const PolicyClass& policy_class);

class Trace {
public:
    explicit Trace(std::vector<StateId> states);

    const std::vector<StateId>& states() const { return states_; }
    std::size_t size() const { return states_.size(); }
    StateId front() const { return states_.front(); }
    StateId back() const { return states_.back(); }

    bool operator==(const Trace&) const = default;

private:
    std::vector<StateId> states_;
};

/// True iff every consecutive pair is connected by some action with positive probability.
bool is_valid_trace(const FactoredMdp& mdp, const Trace& trace);

/// Single-action model whose only distribution at s is the one chosen by `policy`.
FactoredMdp induced_chain(const FactoredMdp& mdp, const Policy& policy);

}  // namespace intentcheck::mdp
