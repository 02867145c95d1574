#include <doctest.h>

#include <set>

#include "intentcheck/counterfactual.hpp"
#include "intentcheck/crosswalk.hpp"
#include "intentcheck/scenario.hpp"

using namespace intentcheck;
using namespace intentcheck::cf;
using mdp::FactoredState;

namespace {

// Toy scenario: a token walks pos 0..3 towards the target pos 3. The integral variable k picks
// the dynamics, and the integral flag changes nothing.
//   k = 0: a0 advances or stays with 1/2 each, a1 stays.
//   k = 1: both actions advance, so staying is impossible.
//   k = 2: both actions jump by two, so pos 1 is unreachable.
//   k = 3: as k = 0, but the target is pos 0.
//   k = 4: both actions advance or stay with 1/2 each (no agency).
mdp::VariableSchema toy_schema() {
    return mdp::VariableSchema({
        mdp::Variable{"pos", mdp::Domain{0, 3, 1}, mdp::VariableKind::peripheral},
        mdp::Variable{"k", mdp::Domain{0, 4, 1}, mdp::VariableKind::integral},
        mdp::Variable{"flag", mdp::Domain{0, 1, 1}, mdp::VariableKind::integral},
    });
}

mdp::TransitionRule toy_rule() {
    return [](const FactoredState& s, mdp::ActionIndex a) -> std::optional<mdp::FactoredDistribution> {
        if (a > 1) return std::nullopt;
        const int pos = s.values[0];
        const int k = s.values[1];
        auto at = [&](int p) {
            FactoredState t = s;
            t.values[0] = std::min(3, p);
            return t;
        };
        if (pos == 3) return mdp::FactoredDistribution{{s, 1.0}};
        switch (k) {
            case 1: return mdp::FactoredDistribution{{at(pos + 1), 1.0}};
            case 2: return mdp::FactoredDistribution{{at(pos + 2), 1.0}};
            case 4: return mdp::FactoredDistribution{{at(pos + 1), 0.5}, {s, 0.5}};
            default:
                if (a == 1) return mdp::FactoredDistribution{{s, 1.0}};
                return mdp::FactoredDistribution{{at(pos + 1), 0.5}, {s, 0.5}};
        }
    };
}

Problem toy_problem(const std::vector<std::int32_t>& integral) {
    const auto schema = toy_schema();
    const FactoredState init{{0, integral[0], integral[1]}};
    auto m = mdp::enumerate_model(schema, {"go", "wait"}, toy_rule(), init);
    const int goal = integral[0] == 3 ? 0 : 3;
    auto target = reach::StateSet::from_predicate(m, [&](mdp::StateId id) { return m.state(id).values[0] == goal; });
    auto cls = mdp::PolicyClass::unrestricted(m);
    return Problem{std::move(m), std::move(cls), std::move(target)};
}

std::vector<FactoredState> toy_reference(int k, int flag = 0) {
    std::vector<FactoredState> out;
    for (int pos : {0, 0, 1, 2, 3}) out.push_back(FactoredState{{pos, k, flag}});
    return out;
}

PolicyBuilder always(mdp::ActionIndex a) {
    return [a](const mdp::FactoredMdp& m) {
        std::vector<mdp::ActionIndex> choice(m.num_states(), a);
        for (std::size_t i = 0; i < m.num_states(); ++i) {
            if (!m.has_action(mdp::to_state_id(i), a)) choice[i] = 0;
        }
        return mdp::Policy(std::move(choice));
    };
}

CounterfactualSpec toy_spec(std::vector<std::int32_t> ks, std::vector<std::int32_t> flags = {0, 1}) {
    CounterfactualSpec spec;
    spec.variables = {VariableSpec::value_set("k", std::move(ks)), VariableSpec::value_set("flag", std::move(flags))};
    spec.batch_size = 5;
    spec.trace_limit = 20;
    spec.seed = 42;
    return spec;
}

void check_same(const EvidenceLog& a, const EvidenceLog& b) {
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].integral == b.entries[i].integral);
        CHECK(a.entries[i].reference == b.entries[i].reference);
        CHECK(a.entries[i].assessment.rho == b.entries[i].assessment.rho);
        CHECK(a.entries[i].assessment.sigma == b.entries[i].assessment.sigma);
        CHECK(a.entries[i].assessment.trace == b.entries[i].assessment.trace);
    }
    CHECK(a.aggregate.rho == b.aggregate.rho);
    CHECK(a.aggregate.sigma == b.aggregate.sigma);
    CHECK(a.verdict == b.verdict);
    CHECK(a.stop_reason == b.stop_reason);
    CHECK(a.draws == b.draws);
    CHECK(a.rejections == b.rejections);
}

const intention::Thresholds kStrict{0.25, 0.75, 0.9};

}  // namespace

TEST_CASE("counter RNG is a pure function of seed and counter") {
    CounterRng a(7), b(7);
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 10; ++i) first.push_back(a.next());
    for (int i = 0; i < 10; ++i) CHECK(b.next() == first[static_cast<std::size_t>(i)]);
    CounterRng c(7, 5);
    CHECK(c.next() == first[5]);
    CHECK(CounterRng(8).next() != first[0]);
}

TEST_CASE("counter RNG matches the SplitMix64 reference output") {
    // Reference values of SplitMix64 seeded with 0 (state advanced by the golden gamma per draw).
    CounterRng rng(0);
    CHECK(rng.next() == 0xe220a8397b1dcdafULL);
    CHECK(rng.next() == 0x6e789e6aa1b965f4ULL);
    CHECK(rng.next() == 0x06c45d188009454fULL);
}

TEST_CASE("bounded draws are in range and roughly uniform") {
    CounterRng rng(123);
    std::vector<int> counts(6, 0);
    for (int i = 0; i < 60000; ++i) {
        const auto x = rng.uniform(6);
        REQUIRE(x < 6);
        ++counts[x];
    }
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
    CHECK_THROWS(rng.uniform(0));
}

TEST_CASE("spec validation") {
    CounterfactualSpec spec;
    CHECK_NOTHROW(spec.validate());
    spec.batch_size = 0;
    CHECK_THROWS_AS(spec.validate(), SpecError);
    spec.batch_size = 10;
    spec.trace_limit = 5;
    CHECK_THROWS_AS(spec.validate(), SpecError);
    spec.trace_limit = 100;
    spec.variables = {VariableSpec::within_epsilon("k", -1)};
    CHECK_THROWS_AS(spec.validate(), SpecError);
}

TEST_CASE("admissible sets") {
    const auto schema = toy_schema();
    CounterfactualSpec spec;
    spec.variables = {VariableSpec::within_epsilon("k", 2)};
    auto sets = admissible_sets(spec, schema, {2, 1});
    CHECK(sets[0] == std::vector<std::int32_t>{1, 2, 3});  // strict |y - 2| < 2
    CHECK(sets[1] == std::vector<std::int32_t>{1});       // missing variables are frozen

    spec.variables = {VariableSpec::closed_range("k", 0, 4, 2)};
    CHECK(admissible_sets(spec, schema, {2, 1})[0] == std::vector<std::int32_t>{0, 2, 4});

    spec.variables = {VariableSpec::value_set("k", {4, 0, 4})};
    CHECK(admissible_sets(spec, schema, {2, 1})[0] == std::vector<std::int32_t>{0, 4});

    spec.variables = {VariableSpec::within_epsilon("k", 0)};
    CHECK(admissible_sets(spec, schema, {2, 1})[0] == std::vector<std::int32_t>{2});

    spec.variables = {VariableSpec::value_set("pos", {1})};
    CHECK_THROWS_AS(admissible_sets(spec, schema, {2, 1}), SpecError);
    spec.variables = {VariableSpec::value_set("nope", {1})};
    CHECK_THROWS_AS(admissible_sets(spec, schema, {2, 1}), SpecError);
    spec.variables = {VariableSpec::value_set("k", {9})};
    CHECK_THROWS_AS(admissible_sets(spec, schema, {2, 1}), SpecError);
}

TEST_CASE("all-frozen spec returns the reference assignment without consuming randomness") {
    const auto schema = toy_schema();
    CounterfactualSpec spec;
    CounterRng rng(42);
    CHECK(sample_cf_values(spec, schema, {3, 1}, rng) == std::vector<std::int32_t>{3, 1});
    CHECK(rng.counter() == 0);
}

TEST_CASE("case-study sampling stays inside the configured ranges and is reproducible") {
    const auto schema = crosswalk::crosswalk_schema();
    CounterfactualSpec spec;
    spec.variables = app::reference_counterfactual_ranges();
    const auto reference = crosswalk::integral_values(crosswalk::ScenarioParams{});
    std::set<std::int32_t> seen_sl_fact, seen_h, seen_vis;
    CounterRng rng(42);
    std::vector<std::int32_t> first;
    for (int i = 0; i < 2000; ++i) {
        const auto v = sample_cf_values(spec, schema, reference, rng);
        if (i == 0) first = v;
        const auto p = crosswalk::params_from_integral(v);
        CHECK(p.sl_init >= 10);
        CHECK(p.sl_init <= 30);
        CHECK(p.sl_end >= 35);
        CHECK(p.sl_end <= 55);
        CHECK(p.sl_fact() >= 1.0);
        CHECK(p.sl_fact() <= 4.0);
        CHECK(p.h_fact() >= 0.1 - 1e-12);
        CHECK(p.h_fact() <= 0.9 + 1e-12);
        CHECK((p.vis == 0 || p.vis == 1));
        seen_sl_fact.insert(p.sl_fact_tenths);
        seen_h.insert(p.h_fact_tenths);
        seen_vis.insert(p.vis);
    }
    CHECK(seen_sl_fact.size() == 31);
    CHECK(seen_h.size() == 9);
    CHECK(seen_vis.size() == 2);
    CounterRng again(42);
    CHECK(sample_cf_values(spec, schema, reference, again) == first);
    const auto second_a = sample_cf_values(spec, schema, reference, again);
    CounterRng third(42);
    sample_cf_values(spec, schema, reference, third);
    CHECK(sample_cf_values(spec, schema, reference, third) == second_a);
}

TEST_CASE("lift_trace: identity, rejections and a flag flip") {
    const auto ref = toy_reference(0);
    const auto same = toy_problem({0, 0});
    const auto lifted = lift_trace(ref, {0, 0}, same.mdp, same.target);
    REQUIRE(std::holds_alternative<mdp::Trace>(lifted));
    const auto& trace = std::get<mdp::Trace>(lifted);
    REQUIRE(trace.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(same.mdp.state(trace.states()[i]) == ref[i]);

    const auto flipped = toy_problem({0, 1});
    const auto flip = lift_trace(ref, {0, 1}, flipped.mdp, flipped.target);
    REQUIRE(std::holds_alternative<mdp::Trace>(flip));
    CHECK(mdp::is_valid_trace(flipped.mdp, std::get<mdp::Trace>(flip)));

    const auto no_stay = toy_problem({1, 0});
    const auto r1 = lift_trace(ref, {1, 0}, no_stay.mdp, no_stay.target);
    REQUIRE(std::holds_alternative<Rejection>(r1));
    CHECK(std::get<Rejection>(r1).reason == Rejection::Reason::invalid_step);
    CHECK(std::get<Rejection>(r1).index == 1);

    // Without the initial wait, the first offending state is pos 1 at index 1.
    const std::vector<FactoredState> direct(ref.begin() + 1, ref.end());
    const auto jumpy = toy_problem({2, 0});
    const auto r2 = lift_trace(direct, {2, 0}, jumpy.mdp, jumpy.target);
    REQUIRE(std::holds_alternative<Rejection>(r2));
    CHECK(std::get<Rejection>(r2).reason == Rejection::Reason::unreachable);
    CHECK(std::get<Rejection>(r2).index == 1);

    const auto moved_goal = toy_problem({3, 0});
    const auto r3 = lift_trace(ref, {3, 0}, moved_goal.mdp, moved_goal.target);
    REQUIRE(std::holds_alternative<Rejection>(r3));
    CHECK(std::get<Rejection>(r3).reason == Rejection::Reason::not_in_target);
    CHECK(std::get<Rejection>(r3).index == 4);

    CHECK(to_string(Rejection::Reason::unreachable) == "unreachable");
    CHECK(to_string(Rejection::Reason::invalid_step) == "invalid-step");
    CHECK(to_string(Rejection::Reason::not_in_target) == "not-ending-in-target");
}

TEST_CASE("lifting the case-study reference trace with vis flipped keeps every transition probability") {
    const auto scenario = app::reference_scenario();
    const auto builder = app::make_problem_builder(scenario);
    const auto base = builder(crosswalk::integral_values(scenario.params));
    // Simulate a short reference trace under the aggressive agent, always taking the likeliest successor.
    const auto policy = crosswalk::make_agent(crosswalk::AgentKind::aggressive, base.mdp);
    std::vector<FactoredState> states{base.mdp.state(base.mdp.initial())};
    auto id = base.mdp.initial();
    while (!base.target.contains(id) && states.size() < 40) {
        const auto dist = *base.mdp.distribution(id, policy(id));
        auto best = dist.front();
        for (const auto& t : dist) {
            if (t.probability > best.probability) best = t;
        }
        if (base.mdp.sink() && best.target == *base.mdp.sink()) break;
        id = best.target;
        states.push_back(base.mdp.state(id));
    }
    auto flipped_params = scenario.params;
    flipped_params.vis = 1 - flipped_params.vis;
    const auto flipped_integral = crosswalk::integral_values(flipped_params);
    const auto other = builder(flipped_integral);
    const auto lifted = lift_trace(states, flipped_integral, other.mdp, other.target);
    if (base.target.contains(id)) {
        REQUIRE(std::holds_alternative<mdp::Trace>(lifted));
    } else {
        REQUIRE((std::holds_alternative<mdp::Trace>(lifted) ||
                 std::get<Rejection>(lifted).reason == Rejection::Reason::not_in_target));
    }
    // Transition probabilities along the trace agree under every action.
    for (std::size_t i = 0; i + 1 < states.size(); ++i) {
        auto lift = [&](const FactoredState& s) {
            FactoredState t = s;
            t.values[crosswalk::var::vis] = flipped_params.vis;
            return t;
        };
        const auto a_from = *base.mdp.find(states[i]);
        const auto a_to = *base.mdp.find(states[i + 1]);
        const auto b_from = *other.mdp.find(lift(states[i]));
        const auto b_to = *other.mdp.find(lift(states[i + 1]));
        for (mdp::ActionIndex a = 0; a < 3; ++a) {
            auto prob = [&](const mdp::FactoredMdp& m, mdp::StateId from, mdp::StateId to) {
                const auto d = m.distribution(from, a);
                double p = 0.0;
                if (d) {
                    for (const auto& t : *d) {
                        if (t.target == to) p += t.probability;
                    }
                }
                return p;
            };
            CHECK(prob(base.mdp, a_from, a_to) == prob(other.mdp, b_from, b_to));
        }
    }
}

TEST_CASE("aggregate takes unweighted means and skips undefined rho") {
    intention::TraceAssessment a{mdp::Trace({mdp::to_state_id(0)}), 0.8, 0.4, intention::Verdict::low_agency, {}};
    intention::TraceAssessment b{mdp::Trace({mdp::to_state_id(0)}), 0.6, 0.2, intention::Verdict::low_agency, {}};
    intention::TraceAssessment c{mdp::Trace({mdp::to_state_id(0)}), std::nullopt, 0.0, intention::Verdict::low_agency, {}};
    const auto one = aggregate({a});
    CHECK(*one.rho == 0.8);
    CHECK(one.sigma == 0.4);
    const auto two = aggregate({a, b});
    CHECK(*two.rho == doctest::Approx(0.7));
    CHECK(two.sigma == doctest::Approx(0.3));
    const auto three = aggregate({a, b, c});
    CHECK(*three.rho == doctest::Approx(0.7));
    CHECK(three.sigma == doctest::Approx(0.2));
    CHECK(three.undefined_rho == 1);
    CHECK_THROWS_AS(aggregate({}), Error);
}

TEST_CASE("evidence loop: conclusive reference exits immediately") {
    const auto log = evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), toy_spec({0, 1, 2, 3, 4}));
    CHECK(log.entries.size() == 1);
    CHECK(log.entries[0].reference);
    CHECK(log.verdict == intention::Verdict::intentional);
    CHECK(log.stop_reason == StopReason::verdict_reached);
    CHECK(log.counterfactual_count() == 0);
}

TEST_CASE("evidence loop: counterfactuals lift a low-agency reference to a verdict") {
    // Reference k = 4 has no agency; counterfactuals at k = 0 have sigma 0.8 and rho 1.
    const auto log = evidence_loop(toy_schema(), toy_problem, toy_reference(4), always(0), toy_spec({0}));
    REQUIRE(log.entries.size() == 6);
    CHECK(log.entries[0].assessment.sigma == 0.0);
    for (std::size_t i = 1; i < log.entries.size(); ++i) {
        CHECK(log.entries[i].integral[0] == 0);
        CHECK(log.entries[i].assessment.sigma == doctest::Approx(0.8));
    }
    CHECK(log.aggregate.sigma == doctest::Approx(4.0 / 6.0));
    CHECK(*log.aggregate.rho == doctest::Approx(1.0));
    CHECK(log.aggregate.undefined_rho == 1);
    CHECK(log.verdict == intention::Verdict::intentional);
    CHECK(log.stop_reason == StopReason::verdict_reached);
}

TEST_CASE("evidence loop: rejected samples are redrawn and the limit is respected") {
    intention::Thresholds strict = kStrict;
    const auto log = evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), toy_spec({0, 1, 2, 3}),
                                   LoopOptions{strict, {}});
    CHECK(log.counterfactual_count() == 20);
    CHECK(log.stop_reason == StopReason::limit_exhausted);
    CHECK(log.verdict == intention::Verdict::low_agency);
    CHECK(log.rejections > 0);
    CHECK(log.draws == log.rejections + 20);
    // Recomputing the aggregate from the entries reproduces the stored one.
    const auto again = aggregate(log.assessments());
    CHECK(again.rho == log.aggregate.rho);
    CHECK(again.sigma == log.aggregate.sigma);
    // Every accepted counterfactual is valid in its own model and ends in its own target.
    for (const auto& e : log.entries) {
        const auto p = toy_problem(e.integral);
        CHECK(mdp::is_valid_trace(p.mdp, e.assessment.trace));
        CHECK(p.target.contains(e.assessment.trace.back()));
        CHECK(e.integral[0] == 0);
    }
}

TEST_CASE("evidence loop: a singleton counterfactual set stops after one batch") {
    CounterfactualSpec spec = toy_spec({0}, {0});
    const auto log =
        evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), spec, LoopOptions{kStrict, {}});
    CHECK(log.counterfactual_count() == spec.batch_size);
    CHECK(log.stop_reason == StopReason::limit_exhausted);
}

TEST_CASE("evidence loop: unfillable batches raise a sampling error") {
    CHECK_THROWS_AS(evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), toy_spec({1, 2}),
                                  LoopOptions{kStrict, {}}),
                    SamplingError);
}

TEST_CASE("evidence loop: reference problems are validation errors") {
    auto bad = toy_reference(0);
    bad[2].values[1] = 4;
    CHECK_THROWS_AS(evidence_loop(toy_schema(), toy_problem, bad, always(0), toy_spec({0})), ValidationError);
    CHECK_THROWS_AS(evidence_loop(toy_schema(), toy_problem, toy_reference(3), always(0), toy_spec({0})),
                    ValidationError);
}

TEST_CASE("evidence loop is deterministic across runs and thread counts") {
    CounterfactualSpec spec = toy_spec({0, 1, 2, 3, 4});
    const LoopOptions options{kStrict, {}};
    const auto a = evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), spec, options);
    const auto b = evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), spec, options);
    check_same(a, b);
    spec.threads = 4;
    const auto c = evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), spec, options);
    check_same(a, c);
    spec.threads = 1;
    spec.seed = 43;
    const auto d = evidence_loop(toy_schema(), toy_problem, toy_reference(0), always(0), spec, options);
    bool differs = false;
    for (std::size_t i = 1; i < std::min(a.entries.size(), d.entries.size()); ++i) {
        differs = differs || a.entries[i].integral != d.entries[i].integral;
    }
    CHECK(differs);
}

TEST_CASE("multi-agent loop equals independent single-agent loops") {
    // Agent 0 is decided by the reference; agent 1 (always wait) needs counterfactuals.
    CounterfactualSpec spec = toy_spec({0, 1, 4});
    const LoopOptions options{intention::Thresholds{0.25, 0.75, 0.5}, {}};
    const auto multi = evidence_loop_multi(toy_schema(), toy_problem, toy_reference(4), {always(0), always(1)}, spec,
                                           options);
    REQUIRE(multi.size() == 2);
    check_same(multi[0], evidence_loop(toy_schema(), toy_problem, toy_reference(4), always(0), spec, options));
    check_same(multi[1], evidence_loop(toy_schema(), toy_problem, toy_reference(4), always(1), spec, options));
}

TEST_CASE("high-sigma mode keeps the candidate with the largest scope of agency") {
    CounterfactualSpec spec = toy_spec({0, 4}, {0});
    spec.high_sigma_candidates = 64;
    const auto log = evidence_loop(toy_schema(), toy_problem, toy_reference(4), always(0), spec);
    REQUIRE(log.counterfactual_count() > 0);
    // With 64 candidates per draw, a k = 0 candidate (sigma 0.8) is always among them.
    for (std::size_t i = 1; i < log.entries.size(); ++i) CHECK(log.entries[i].integral[0] == 0);
    CHECK(log.draws == 64 * log.counterfactual_count());
}
