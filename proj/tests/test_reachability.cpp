#include <doctest.h>

#include <random>

#include "intentcheck/reachability.hpp"
#include "support/oracles.hpp"

using namespace intentcheck;
using namespace intentcheck::mdp;
using namespace intentcheck::reach;
using oracle::make_toy;

namespace {

TargetSet target_of(const FactoredMdp& m, std::initializer_list<std::uint32_t> ids) {
    TargetSet t(m.num_states());
    for (auto id : ids) t.insert(to_state_id(id));
    return t;
}

StateId sid(std::uint32_t i) { return to_state_id(i); }

/// A: a0 -> B, a1 -> dead; B -> T; dead and T absorbing.
FactoredMdp three_state_chain() {
    return make_toy({{{0, {{1, 1.0}}}, {1, {{3, 1.0}}}},
                     {{0, {{2, 1.0}}}, {1, {{2, 1.0}}}},
                     {{0, {{2, 1.0}}}, {1, {{2, 1.0}}}},
                     {{0, {{3, 1.0}}}, {1, {{3, 1.0}}}}},
                    2);
}

}  // namespace

TEST_CASE("qualitative: target = all states gives prob1 = all states") {
    const FactoredMdp m = three_state_chain();
    TargetSet all = target_of(m, {0, 1, 2, 3});
    const PolicyClass cls = PolicyClass::unrestricted(m);
    for (Mode mode : {Mode::max, Mode::min}) {
        const auto q = qualitative_states(m, cls, all, mode);
        CHECK(q.prob1.count() == 4);
        CHECK(q.prob0.count() == 0);
    }
}

TEST_CASE("qualitative: 3-state chain with side action") {
    const FactoredMdp m = three_state_chain();
    const TargetSet t = target_of(m, {2});
    const PolicyClass cls = PolicyClass::unrestricted(m);
    const auto qmax = qualitative_states(m, cls, t, Mode::max);
    const auto qmin = qualitative_states(m, cls, t, Mode::min);
    CHECK(qmax.prob1.contains(sid(0)));
    CHECK(qmin.prob0.contains(sid(0)));
    // Dead end cannot reach the target under either mode.
    CHECK(qmax.prob0.contains(sid(3)));
    CHECK(qmin.prob0.contains(sid(3)));
    CHECK(qmin.prob1.contains(sid(1)));
}

TEST_CASE("qualitative rejects an empty allowed set") {
    const FactoredMdp m = three_state_chain();
    const PolicyClass broken({0b01, 0b00, 0b11, 0b11});
    CHECK_THROWS_AS(qualitative_states(m, broken, target_of(m, {2}), Mode::max), PolicyError);
    CHECK_THROWS_AS(reach_extremal(m, broken, target_of(m, {2}), Mode::min), PolicyError);
}

TEST_CASE("hand-solved extremal values") {
    SUBCASE("gamble or give up") {
        // 0: a0 -> 0.5 target(1) / 0.5 sink(2); a1 -> sink.
        const FactoredMdp m = make_toy({{{0, {{1, 0.5}, {2, 0.5}}}, {1, {{2, 1.0}}}},
                                        {{0, {{1, 1.0}}}, {1, {{1, 1.0}}}},
                                        {{0, {{2, 1.0}}}, {1, {{2, 1.0}}}}},
                                       2, 0, 2);
        const TargetSet t = target_of(m, {1});
        const auto cls = PolicyClass::unrestricted(m);
        const auto pmax = reach_extremal(m, cls, t, Mode::max);
        const auto pmin = reach_extremal(m, cls, t, Mode::min);
        CHECK(pmax[sid(0)] == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(pmin[sid(0)] == 0.0);
        CHECK(pmax[sid(1)] == 1.0);
        CHECK(pmax.witness(sid(0)) == 0);
        CHECK(pmin.witness(sid(0)) == 1);
    }
    SUBCASE("half self-loop reaches target with probability 1") {
        const FactoredMdp m = make_toy({{{0, {{0, 0.5}, {1, 0.5}}}}, {{0, {{1, 1.0}}}}}, 1);
        const auto p = reach_extremal(m, PolicyClass::unrestricted(m), target_of(m, {1}), Mode::min);
        CHECK(p[sid(0)] == 1.0);
    }
    SUBCASE("two-route choice with a retry loop") {
        // 0: a0 -> 0.3 T, 0.7 F ; a1 -> 0.4 T, 0.2 back to 0, 0.4 F.
        // a1 value x = 0.4 + 0.2x => 0.5. Max 0.5 via a1, min 0.3 via a0.
        const FactoredMdp m = make_toy({{{0, {{1, 0.3}, {2, 0.7}}}, {1, {{0, 0.2}, {1, 0.4}, {2, 0.4}}}},
                                        {{0, {{1, 1.0}}}},
                                        {{0, {{2, 1.0}}}}},
                                       2);
        const auto cls = PolicyClass::unrestricted(m);
        const auto t = target_of(m, {1});
        CHECK(reach_extremal(m, cls, t, Mode::max)[sid(0)] == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(reach_extremal(m, cls, t, Mode::min)[sid(0)] == doctest::Approx(0.3).epsilon(1e-6));
    }
    SUBCASE("gambler's ruin on five cells") {
        // Walk on 0..4, p=0.6 right, absorbing ends; target 4. From 1: (1-r)/(1-r^4) with r = 2/3.
        std::vector<oracle::ToyState> states(5);
        states[0] = {{0, {{0, 1.0}}}};
        states[4] = {{0, {{4, 1.0}}}};
        for (std::uint32_t i = 1; i <= 3; ++i) states[i] = {{0, {{i + 1, 0.6}, {i - 1, 0.4}}}};
        const FactoredMdp m = make_toy(states, 1, 2);
        const auto p = reach_under_policy(m, Policy({0, 0, 0, 0, 0}), target_of(m, {4}));
        const double r = 0.4 / 0.6;
        for (int i = 1; i <= 3; ++i) {
            const double expected = (1 - std::pow(r, i)) / (1 - std::pow(r, 4));
            CHECK(std::abs(p[sid(static_cast<std::uint32_t>(i))] - expected) < 1e-6);
        }
    }
    SUBCASE("policy class mask restricts the optimum") {
        // 0: a0 -> target, a1 -> fail. Masking out a0 forces value 0.
        const FactoredMdp m =
            make_toy({{{0, {{1, 1.0}}}, {1, {{2, 1.0}}}}, {{0, {{1, 1.0}}}, {1, {{1, 1.0}}}}, {{0, {{2, 1.0}}}, {1, {{2, 1.0}}}}},
                     2);
        const PolicyClass only_fail({0b10, 0b11, 0b11});
        CHECK(reach_extremal(m, only_fail, target_of(m, {1}), Mode::max)[sid(0)] == 0.0);
        CHECK(reach_extremal(m, PolicyClass::unrestricted(m), target_of(m, {1}), Mode::max)[sid(0)] == 1.0);
    }
}

TEST_CASE("reach_under_policy: deterministic chain and fixed mode") {
    const FactoredMdp m = make_toy({{{0, {{1, 1.0}}}}, {{0, {{2, 1.0}}}}, {{0, {{2, 1.0}}}}}, 1);
    const auto p = reach_under_policy(m, Policy({0, 0, 0}), target_of(m, {2}));
    CHECK(p[sid(0)] == 1.0);
    CHECK(p.mode == Mode::fixed_policy);
    CHECK(p.converged);
}

TEST_CASE("solver error when the iteration cap is hit") {
    // Slowly converging two-state cycle: 0 <-> 1 with a 0.001 leak to T(2) or F(3) from each.
    const FactoredMdp m = make_toy({{{0, {{1, 0.999}, {2, 0.001}}}},
                                    {{0, {{0, 0.999}, {3, 0.001}}}},
                                    {{0, {{2, 1.0}}}},
                                    {{0, {{3, 1.0}}}}},
                                   1);
    SolverOptions tight;
    tight.max_iterations = 3;
    CHECK_THROWS_AS(reach_under_policy(m, Policy({0, 0, 0, 0}), target_of(m, {2}), tight), SolverError);
    // x0 = 0.001 + 0.999 x1, x1 = 0.999 x0.
    const double x0 = 0.001 / (1 - 0.999 * 0.999);
    CHECK(std::abs(reach_under_policy(m, Policy({0, 0, 0, 0}), target_of(m, {2}))[sid(0)] - x0) < 1e-3);
}

TEST_CASE("extremal values agree with brute-force policy enumeration on random MDPs") {
    std::mt19937_64 rng(2024);
    for (int round = 0; round < 30; ++round) {
        const FactoredMdp m = oracle::random_mdp(rng, 6, 3);
        TargetSet t(m.num_states());
        t.insert(to_state_id(rng() % m.num_states()));
        if (rng() % 2) t.insert(to_state_id(rng() % m.num_states()));
        const auto cls = PolicyClass::unrestricted(m);
        const auto truth = oracle::brute_force_extremes(m, cls, t);
        const auto pmax = reach_extremal(m, cls, t, Mode::max);
        const auto pmin = reach_extremal(m, cls, t, Mode::min);
        for (std::size_t s = 0; s < m.num_states(); ++s) {
            CHECK(std::abs(pmax.values[s] - truth.max[s]) < 1e-5);
            CHECK(std::abs(pmin.values[s] - truth.min[s]) < 1e-5);
        }
    }
}

TEST_CASE("values on qualitative states are pinned exactly") {
    std::mt19937_64 rng(99);
    for (int round = 0; round < 20; ++round) {
        const FactoredMdp m = oracle::random_mdp(rng, 8, 2);
        const TargetSet t = target_of(m, {static_cast<std::uint32_t>(rng() % 8)});
        const auto cls = PolicyClass::unrestricted(m);
        for (Mode mode : {Mode::max, Mode::min}) {
            const auto q = qualitative_states(m, cls, t, mode);
            const auto p = reach_extremal(m, cls, t, mode);
            for (std::size_t s = 0; s < m.num_states(); ++s) {
                if (q.prob0.contains(sid(static_cast<std::uint32_t>(s)))) CHECK(p.values[s] == 0.0);
                if (q.prob1.contains(sid(static_cast<std::uint32_t>(s)))) CHECK(p.values[s] == 1.0);
                CHECK(p.values[s] >= 0.0);
                CHECK(p.values[s] <= 1.0);
            }
        }
    }
}

TEST_CASE("witness policies reproduce the extremal values") {
    std::mt19937_64 rng(5);
    for (int round = 0; round < 20; ++round) {
        const FactoredMdp m = oracle::random_mdp(rng, 8, 3);
        const TargetSet t = target_of(m, {static_cast<std::uint32_t>(rng() % 8)});
        const auto cls = PolicyClass::unrestricted(m);
        for (Mode mode : {Mode::max, Mode::min}) {
            const auto p = reach_extremal(m, cls, t, mode);
            CHECK(cls.contains(p.witness));
            const auto q = reach_under_policy(m, p.witness, t);
            for (std::size_t s = 0; s < m.num_states(); ++s) CHECK(std::abs(p.values[s] - q.values[s]) <= 2e-6);
        }
    }
}

TEST_CASE("target and mask monotonicity on random MDPs") {
    std::mt19937_64 rng(31);
    for (int round = 0; round < 20; ++round) {
        const FactoredMdp m = oracle::random_mdp(rng, 8, 3);
        const auto n = m.num_states();
        TargetSet small(n);
        small.insert(to_state_id(rng() % n));
        TargetSet large = small;
        large.insert(to_state_id(rng() % n));
        const auto full = PolicyClass::unrestricted(m);
        std::vector<PolicyClass::Mask> masks(n);
        for (std::size_t s = 0; s < n; ++s) {
            const PolicyClass::Mask allowed = full.allowed(to_state_id(s));
            PolicyClass::Mask keep = allowed & rng();
            if (keep == 0) keep = allowed & (~allowed + 1);  // lowest enabled action
            masks[s] = keep;
        }
        const PolicyClass narrow(masks);
        for (Mode mode : {Mode::max, Mode::min}) {
            const auto a = reach_extremal(m, full, small, mode);
            const auto b = reach_extremal(m, full, large, mode);
            const auto c = reach_extremal(m, narrow, small, mode);
            for (std::size_t s = 0; s < n; ++s) {
                CHECK(b.values[s] >= a.values[s] - 2e-6);
                if (mode == Mode::max) CHECK(c.values[s] <= a.values[s] + 2e-6);
                else CHECK(c.values[s] >= a.values[s] - 2e-6);
            }
        }
    }
}

TEST_CASE("fixed-policy values on a 10-state random chain match Monte Carlo within 3 standard errors") {
    std::mt19937_64 rng(77);
    std::vector<oracle::ToyState> states(10);
    for (std::uint32_t s = 0; s < 8; ++s) {
        std::uniform_int_distribution<std::uint32_t> pick(0, 9);
        std::uniform_real_distribution<double> w(0.1, 1.0);
        const std::uint32_t a = pick(rng), b = pick(rng), c = (s + 1) % 10;
        const double wa = w(rng), wb = w(rng), wc = w(rng), tot = wa + wb + wc;
        std::vector<std::pair<std::uint32_t, double>> succ;
        for (auto [t, p] : {std::pair{a, wa / tot}, std::pair{b, wb / tot}, std::pair{c, wc / tot}}) {
            auto it = std::find_if(succ.begin(), succ.end(), [&](const auto& e) { return e.first == t; });
            if (it != succ.end()) it->second += p;
            else succ.emplace_back(t, p);
        }
        states[s] = {{0, succ}};
    }
    states[8] = {{0, {{8, 1.0}}}};  // target
    states[9] = {{0, {{9, 1.0}}}};  // failure
    const FactoredMdp m = make_toy(states, 1);
    const TargetSet t = target_of(m, {8});
    const Policy pol(std::vector<ActionIndex>(10, 0));
    const auto exact = reach_under_policy(m, pol, t);
    const auto solved = oracle::solve_chain(oracle::chain_matrix(m, pol.choices()), oracle::membership(t));
    for (std::uint32_t s = 0; s < 8; ++s) {
        CHECK(std::abs(exact[sid(s)] - solved[s]) < 1e-6);
        const auto est = oracle::monte_carlo(m, pol.choices(), t, sid(s), 100000, 1000 + s);
        CHECK(std::abs(est.mean - exact[sid(s)]) <= 3.0 * est.stderr_);
    }
}
