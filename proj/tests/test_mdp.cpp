#include <doctest.h>

#include <random>

#include "intentcheck/mdp.hpp"
#include "support/oracles.hpp"

using namespace intentcheck;
using namespace intentcheck::mdp;

namespace {

VariableSchema two_var_schema() {
    return VariableSchema({
        Variable{"pos", Domain{0, 4, 1}, VariableKind::peripheral},
        Variable{"bias", Domain{1, 3, 10}, VariableKind::integral},
        Variable{"flag", Domain{0, 1, 1}, VariableKind::peripheral},
    });
}

/// Random walk on pos that stops at 4; bias scales the step-right probability.
TransitionRule walk_rule() {
    return [](const FactoredState& s, ActionIndex a) -> std::optional<FactoredDistribution> {
        if (a > 1) return std::nullopt;
        const int pos = s.values[0];
        const double right = s.values[1] / 10.0;
        if (pos == 4) return FactoredDistribution{{s, 1.0}};
        FactoredState r = s;
        r.values[0] = pos + 1;
        FactoredState stay = s;
        stay.values[2] = a;
        if (a == 0) return FactoredDistribution{{r, right}, {stay, 1.0 - right}};
        return FactoredDistribution{{r, 1.0}};
    };
}

}  // namespace

TEST_CASE("schema rejects empty names, duplicates and empty domains") {
    CHECK_THROWS_AS(VariableSchema({Variable{"", Domain{0, 1, 1}}}), SchemaError);
    CHECK_THROWS_AS(VariableSchema({Variable{"a", Domain{0, 1, 1}}, Variable{"a", Domain{0, 1, 1}}}), SchemaError);
    CHECK_THROWS_AS(VariableSchema({Variable{"a", Domain{2, 1, 1}}}), SchemaError);
    CHECK_THROWS_AS(VariableSchema({Variable{"a", Domain{0, 1, 0}}}), SchemaError);
}

TEST_CASE("schema lookups and kinds") {
    const VariableSchema schema = two_var_schema();
    CHECK(schema.index_of("bias") == 1u);
    CHECK_FALSE(schema.index_of("nope"));
    CHECK(schema.positions(VariableKind::integral) == std::vector<std::size_t>{1});
    CHECK(schema.positions(VariableKind::peripheral) == std::vector<std::size_t>{0, 2});
    CHECK(schema[1].domain.to_real(3) == doctest::Approx(0.3));
}

TEST_CASE("check_state enforces arity and domains") {
    const VariableSchema schema = two_var_schema();
    CHECK_NOTHROW(check_state(schema, FactoredState{{0, 1, 0}}));
    CHECK_THROWS_AS(check_state(schema, FactoredState{{0, 1}}), SchemaError);
    CHECK_THROWS_AS(check_state(schema, FactoredState{{5, 1, 0}}), SchemaError);
    CHECK_THROWS_AS(check_state(schema, FactoredState{{0, 0, 0}}), SchemaError);
}

TEST_CASE("split then recompose is the identity on every state of a small schema") {
    const VariableSchema schema = two_var_schema();
    std::size_t checked = 0;
    for (int p = 0; p <= 4; ++p) {
        for (int b = 1; b <= 3; ++b) {
            for (int f = 0; f <= 1; ++f) {
                const FactoredState s{{p, b, f}};
                const SplitState parts = split_state(s, schema);
                CHECK(parts.peripheral == std::vector<std::int32_t>{p, f});
                CHECK(parts.integral == std::vector<std::int32_t>{b});
                CHECK(recompose(parts, schema) == s);
                ++checked;
            }
        }
    }
    CHECK(checked == 30);
}

TEST_CASE("enumerate_model explores forward and assigns ids in discovery order") {
    const VariableSchema schema = two_var_schema();
    const FactoredMdp m = enumerate_model(schema, {"try", "push"}, walk_rule(), FactoredState{{0, 2, 0}});
    // Reachable: pos 0..4 with flag 0, and pos 0..3 with flag 1 (stay under "push" is never taken,
    // "try" sets flag 0), so flag stays 0 everywhere.
    CHECK(m.num_states() == 5);
    CHECK(m.initial() == to_state_id(0));
    CHECK(m.state(to_state_id(1)) == FactoredState{{1, 2, 0}});
    CHECK(m.find(FactoredState{{4, 2, 0}}).has_value());
    CHECK_FALSE(m.find(FactoredState{{4, 3, 0}}).has_value());
    const auto dist = m.distribution(to_state_id(0), 0);
    REQUIRE(dist);
    REQUIRE(dist->size() == 2);
    CHECK((*dist)[0].target == to_state_id(0));
    CHECK((*dist)[0].probability == doctest::Approx(0.8));
    CHECK((*dist)[1].probability == doctest::Approx(0.2));
    CHECK_THROWS_AS(m.state(to_state_id(99)), LookupError);
}

TEST_CASE("enumerate_model is deterministic") {
    const VariableSchema schema = two_var_schema();
    const FactoredMdp a = enumerate_model(schema, {"try", "push"}, walk_rule(), FactoredState{{0, 3, 0}});
    const FactoredMdp b = enumerate_model(schema, {"try", "push"}, walk_rule(), FactoredState{{0, 3, 0}});
    REQUIRE(a.num_states() == b.num_states());
    REQUIRE(a.num_transitions() == b.num_transitions());
    for (std::size_t i = 0; i < a.num_states(); ++i) CHECK(a.state(to_state_id(i)) == b.state(to_state_id(i)));
}

TEST_CASE("enumerate_model merges duplicate successors and drops zero probabilities") {
    const VariableSchema schema({Variable{"x", Domain{0, 2, 1}}});
    TransitionRule rule = [](const FactoredState& s, ActionIndex a) -> std::optional<FactoredDistribution> {
        if (a != 0) return std::nullopt;
        if (s.values[0] == 0) {
            return FactoredDistribution{{FactoredState{{1}}, 0.25}, {FactoredState{{1}}, 0.25},
                                        {FactoredState{{2}}, 0.5}, {FactoredState{{0}}, 0.0}};
        }
        return FactoredDistribution{{s, 1.0}};
    };
    const FactoredMdp m = enumerate_model(schema, {"go"}, rule, FactoredState{{0}});
    const auto dist = *m.distribution(m.initial(), 0);
    REQUIRE(dist.size() == 2);
    CHECK(dist[0].probability == doctest::Approx(0.5));
    CHECK(dist[1].probability == doctest::Approx(0.5));
}

TEST_CASE("enumerate_model rejects unnormalized distributions and out-of-domain successors") {
    const VariableSchema schema({Variable{"x", Domain{0, 2, 1}}});
    TransitionRule lossy = [](const FactoredState&, ActionIndex) -> std::optional<FactoredDistribution> {
        return FactoredDistribution{{FactoredState{{1}}, 0.6}};
    };
    CHECK_THROWS_AS(enumerate_model(schema, {"go"}, lossy, FactoredState{{0}}), ModelError);
    TransitionRule escape = [](const FactoredState&, ActionIndex a) -> std::optional<FactoredDistribution> {
        if (a != 0) return std::nullopt;
        return FactoredDistribution{{FactoredState{{7}}, 1.0}};
    };
    CHECK_THROWS_AS(enumerate_model(schema, {"go"}, escape, FactoredState{{0}}), SchemaError);
}

TEST_CASE("model construction validates probabilities and the sink") {
    using oracle::make_toy;
    CHECK_THROWS_AS(make_toy({{{0, {{0, 0.7}}}}}, 1), ModelError);
    CHECK_THROWS_AS(make_toy({{{0, {{0, 0.5}, {1, 0.6}}}}, {{0, {{1, 1.0}}}}}, 1), ModelError);
    CHECK_NOTHROW(make_toy({{{0, {{1, 1.0}}}}, {{0, {{1, 1.0}}}}}, 1, 0, 1));
    // Sink that leaves itself.
    CHECK_THROWS_AS(make_toy({{{0, {{1, 1.0}}}}, {{0, {{0, 1.0}}}}}, 1, 0, 1), ModelError);
    // Sink that does not enable every action.
    CHECK_THROWS_AS(make_toy({{{0, {{1, 1.0}}}, {1, {{1, 1.0}}}}, {{0, {{1, 1.0}}}}}, 2, 0, 1), ModelError);
}

TEST_CASE("traces: validity and prefix monotonicity") {
    using oracle::make_toy;
    const FactoredMdp m = make_toy({{{0, {{1, 0.5}, {2, 0.5}}}}, {{0, {{2, 1.0}}}}, {{0, {{2, 1.0}}}}}, 1);
    CHECK_THROWS_AS(Trace(std::vector<StateId>{}), Error);
    const Trace good({to_state_id(0), to_state_id(1), to_state_id(2), to_state_id(2)});
    CHECK(is_valid_trace(m, good));
    CHECK_FALSE(is_valid_trace(m, Trace({to_state_id(1), to_state_id(0)})));
    CHECK(is_valid_trace(m, Trace({to_state_id(2)})));
    for (std::size_t len = 1; len <= good.size(); ++len) {
        std::vector<StateId> prefix(good.states().begin(), good.states().begin() + static_cast<std::ptrdiff_t>(len));
        CHECK(is_valid_trace(m, Trace(prefix)));
    }
}

TEST_CASE("prefix monotonicity of validity on random walks in random models") {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 20; ++round) {
        const FactoredMdp m = oracle::random_mdp(rng, 6, 2);
        std::vector<StateId> path{m.initial()};
        for (int step = 0; step < 8; ++step) {
            const auto choices = m.choices(path.back());
            const auto succ = m.successors(choices[rng() % choices.size()]);
            path.push_back(succ[rng() % succ.size()].target);
        }
        REQUIRE(is_valid_trace(m, Trace(path)));
        for (std::size_t len = 1; len <= path.size(); ++len) {
            CHECK(is_valid_trace(m, Trace(std::vector<StateId>(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(len)))));
        }
    }
}

TEST_CASE("policies and policy classes are validated against the model") {
    using oracle::make_toy;
    const FactoredMdp m = make_toy({{{0, {{1, 1.0}}}, {1, {{0, 1.0}}}}, {{1, {{1, 1.0}}}}}, 2);
    CHECK_NOTHROW(validate(m, Policy({0, 1})));
    CHECK_THROWS_AS(validate(m, Policy({0, 0})), PolicyError);
    CHECK_THROWS_AS(validate(m, Policy({0})), PolicyError);

    const PolicyClass all = PolicyClass::unrestricted(m);
    CHECK(all.allowed(to_state_id(0)) == 0b11u);
    CHECK(all.allowed(to_state_id(1)) == 0b10u);
    CHECK(all.contains(Policy({1, 1})));
    CHECK_NOTHROW(validate(m, all));
    CHECK_THROWS_AS(validate(m, PolicyClass({0b01, 0b00})), PolicyError);
    CHECK_THROWS_AS(validate(m, PolicyClass({0b01, 0b01})), PolicyError);

    const PolicyClass one = PolicyClass::singleton(Policy({1, 1}));
    CHECK(one.contains(Policy({1, 1})));
    CHECK_FALSE(one.contains(Policy({0, 1})));
}

TEST_CASE("induced chain keeps states and follows the policy") {
    using oracle::make_toy;
    const FactoredMdp m =
        make_toy({{{0, {{1, 1.0}}}, {1, {{2, 1.0}}}}, {{0, {{1, 1.0}}}, {1, {{1, 1.0}}}}, {{0, {{2, 1.0}}}, {1, {{2, 1.0}}}}},
                 2, 0, 2);
    const FactoredMdp chain = induced_chain(m, Policy({1, 0, 0}));
    CHECK(chain.num_states() == 3);
    CHECK(chain.actions().size() == 1);
    CHECK(chain.initial() == m.initial());
    CHECK(chain.sink() == m.sink());
    CHECK((*chain.distribution(to_state_id(0), 0))[0].target == to_state_id(2));
}
