#include "intentcheck/crosswalk.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

namespace intentcheck::crosswalk {

using mdp::ActionIndex;
using mdp::FactoredState;
using mdp::StateId;
using mdp::VariableKind;

void ScenarioParams::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw SchemaError(msg);
    };
    require(sl_init >= 0 && sl_init <= kRoadLength, "sl_init must lie in [0, 60]");
    require(sl_end >= 0 && sl_end <= kRoadLength, "sl_end must lie in [0, 60]");
    require(sl_init <= sl_end, "sl_init must not exceed sl_end");
    require(sl_fact_tenths >= 10 && sl_fact_tenths <= 40, "sl_fact must lie in [1, 4]");
    require(h_fact_tenths >= 0 && h_fact_tenths <= 10, "h_fact must lie in [0, 1]");
    require(vis == 0 || vis == 1, "vis must be 0 or 1");
}

std::vector<std::string> action_names() { return {"accelerate", "coast", "brake"}; }

GammaCoeffs gamma_coeffs(double sl_fact) {
    if (!(sl_fact >= 1.0)) throw SchemaError("slippery factor must be at least 1");
    const double gamma2 = 0.5 / (std::pow(2.0, sl_fact) - 1.0);
    const double gamma1 = 0.5 / (2.0 * sl_fact - 1.0);
    return {1.0 - gamma1 - gamma2, gamma1, gamma2};
}

namespace {

template <typename S>
void add_outcome(Outcomes<S>& out, const S& s, double p) {
    if (p <= 0.0) return;
    for (auto& [existing, q] : out) {
        if (existing == s) {
            q += p;
            return;
        }
    }
    out.emplace_back(s, p);
}

bool on_sidewalk(int y) { return (y >= 0 && y <= 2) || (y >= 14 && y <= kRoadWidth); }

long orientation(long ax, long ay, long bx, long by, long cx, long cy) {
    const long cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    return (cross > 0) - (cross < 0);
}

bool on_segment(long ax, long ay, long bx, long by, long px, long py) {
    return std::min(ax, bx) <= px && px <= std::max(ax, bx) && std::min(ay, by) <= py && py <= std::max(ay, by);
}

bool segments_intersect(std::array<long, 4> s, std::array<long, 4> t) {
    const long o1 = orientation(s[0], s[1], s[2], s[3], t[0], t[1]);
    const long o2 = orientation(s[0], s[1], s[2], s[3], t[2], t[3]);
    const long o3 = orientation(t[0], t[1], t[2], t[3], s[0], s[1]);
    const long o4 = orientation(t[0], t[1], t[2], t[3], s[2], s[3]);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(s[0], s[1], s[2], s[3], t[0], t[1])) return true;
    if (o2 == 0 && on_segment(s[0], s[1], s[2], s[3], t[2], t[3])) return true;
    if (o3 == 0 && on_segment(t[0], t[1], t[2], t[3], s[0], s[1])) return true;
    if (o4 == 0 && on_segment(t[0], t[1], t[2], t[3], s[2], s[3])) return true;
    return false;
}

bool inside_parked(long x, long y) {
    return x >= kParkedXMin && x <= kParkedXMax && y >= kParkedYMin && y <= kParkedYMax;
}

}  // namespace

Outcomes<CarState> car_transition(const CarState& car, CarAction action, const ScenarioParams& params) {
    // Probabilities of dv = -2 .. +2.
    std::array<double, 5> dv{};
    const bool slippery = car.x >= params.sl_init && car.x <= params.sl_end;
    switch (action) {
        case CarAction::accelerate:
            if (slippery) {
                const auto g = gamma_coeffs(params.sl_fact());
                dv = {0.0, 0.0, g.gamma0, g.gamma1, g.gamma2};
            } else {
                dv = {0.0, 0.0, 0.0, 0.5, 0.5};
            }
            break;
        case CarAction::coast:
            dv = {0.0, 0.1, 0.9, 0.0, 0.0};
            break;
        case CarAction::brake:
            if (slippery) {
                const auto g = gamma_coeffs(params.sl_fact());
                dv = {g.gamma2, g.gamma1, g.gamma0, 0.0, 0.0};
            } else {
                dv = {0.5, 0.5, 0.0, 0.0, 0.0};
            }
            break;
    }
    Outcomes<CarState> out;
    for (int k = 0; k < 5; ++k) {
        const int v = std::clamp(car.v + k - 2, 0, kVelocityMax);
        const int x = std::min(kRoadLength, car.x + v);
        add_outcome(out, CarState{x, car.y, v}, dv[k]);
    }
    return out;
}

Regime pedestrian_regime(const PedestrianState& ped) {
    if (!on_sidewalk(ped.y)) return Regime::on_road;
    if (ped.x >= kCrosswalkBegin && ped.x <= kCrosswalkEnd) return Regime::front_of_crosswalk;
    return Regime::sidewalk;
}

OnRoadRegime on_road_regime(const PedestrianState& ped, const CarState& car) {
    const int ahead = ped.x - car.x;
    const bool close_in_x = ahead >= 0 && ahead <= 2 * kVelocityMax;
    if (!close_in_x) return OnRoadRegime::no_danger;
    if (std::abs(ped.y - car.y) <= kHitDistance) return OnRoadRegime::danger_to_stay;
    if (std::abs(ped.y + 1 - car.y) <= kHitDistance) return OnRoadRegime::danger_to_cross;
    return OnRoadRegime::no_danger;
}

Outcomes<PedestrianState> pedestrian_transition(const PedestrianState& ped, const CarState& car,
                                                const ScenarioParams& params) {
    // Probabilities of (+1, 0), (0, +1), (0, 0).
    std::array<double, 3> move{};
    switch (pedestrian_regime(ped)) {
        case Regime::sidewalk:
            move = {0.8, 0.1, 0.1};
            break;
        case Regime::front_of_crosswalk:
            move = {0.45, 0.45, 0.1};
            break;
        case Regime::on_road: {
            const double h = params.h_fact();
            switch (on_road_regime(ped, car)) {
                case OnRoadRegime::danger_to_cross:
                    move = {0.0, 1.0 - 0.3 * h, 0.3 * h};
                    break;
                case OnRoadRegime::danger_to_stay:
                    move = {0.0, 0.7 * h, 1.0 - 0.7 * h};
                    break;
                case OnRoadRegime::no_danger:
                    move = {0.0, 0.7, 0.3};
                    break;
            }
            break;
        }
    }
    Outcomes<PedestrianState> out;
    add_outcome(out, PedestrianState{std::min(kRoadLength, ped.x + 1), ped.y}, move[0]);
    add_outcome(out, PedestrianState{ped.x, std::min(kRoadWidth, ped.y + 1)}, move[1]);
    add_outcome(out, ped, move[2]);
    return out;
}

bool visibility_blocked(const CarState& car, const PedestrianState& ped, const ScenarioParams& params) {
    if (params.vis == 0) return false;
    if (inside_parked(car.x, car.y) || inside_parked(ped.x, ped.y)) return true;
    const std::array<long, 4> sight{car.x, car.y, ped.x, ped.y};
    const std::array<std::array<long, 4>, 4> edges{{
        {kParkedXMin, kParkedYMin, kParkedXMax, kParkedYMin},
        {kParkedXMax, kParkedYMin, kParkedXMax, kParkedYMax},
        {kParkedXMax, kParkedYMax, kParkedXMin, kParkedYMax},
        {kParkedXMin, kParkedYMax, kParkedXMin, kParkedYMin},
    }};
    return std::any_of(edges.begin(), edges.end(), [&](const auto& e) { return segments_intersect(sight, e); });
}

CollisionSemantics parse_collision_semantics(std::string_view text) {
    if (text == "conj") return CollisionSemantics::conjunction;
    if (text == "disj") return CollisionSemantics::disjunction;
    throw Error("collision semantics must be 'conj' or 'disj', got '" + std::string(text) + "'");
}

const char* to_string(CollisionSemantics semantics) {
    return semantics == CollisionSemantics::conjunction ? "conj" : "disj";
}

bool collision(const CarState& car, const PedestrianState& ped, CollisionSemantics semantics) {
    const bool near_x = std::abs(ped.x - car.x) <= kHitDistance;
    const bool near_y = std::abs(ped.y - car.y) <= kHitDistance;
    return semantics == CollisionSemantics::conjunction ? (near_x && near_y) : (near_x || near_y);
}

mdp::VariableSchema crosswalk_schema() {
    using mdp::Domain;
    return mdp::VariableSchema({
        {"x_c", Domain{0, kRoadLength, 1}, VariableKind::peripheral},
        {"y_c", Domain{kCarYMin, kCarYMax, 1}, VariableKind::peripheral},
        {"v_c", Domain{0, kVelocityMax, 1}, VariableKind::peripheral},
        {"x_p", Domain{0, kRoadLength, 1}, VariableKind::peripheral},
        {"y_p", Domain{0, kRoadWidth, 1}, VariableKind::peripheral},
        {"done", Domain{0, 1, 1}, VariableKind::peripheral},
        {"sl_init", Domain{0, kRoadLength, 1}, VariableKind::integral},
        {"sl_end", Domain{0, kRoadLength, 1}, VariableKind::integral},
        {"sl_fact", Domain{10, 40, 10}, VariableKind::integral},
        {"h_fact", Domain{0, 10, 10}, VariableKind::integral},
        {"vis", Domain{0, 1, 1}, VariableKind::integral},
    });
}

FactoredState encode(const CrosswalkState& s) {
    return FactoredState{{s.car.x, s.car.y, s.car.v, s.ped.x, s.ped.y, s.done ? 1 : 0, s.params.sl_init,
                          s.params.sl_end, s.params.sl_fact_tenths, s.params.h_fact_tenths, s.params.vis}};
}

CrosswalkState decode(const FactoredState& s) {
    const auto& v = s.values;
    if (v.size() != 11) throw SchemaError("crosswalk state needs 11 values");
    return CrosswalkState{CarState{v[var::car_x], v[var::car_y], v[var::car_v]},
                          PedestrianState{v[var::ped_x], v[var::ped_y]},
                          v[var::done] != 0,
                          ScenarioParams{v[var::sl_init], v[var::sl_end], v[var::sl_fact], v[var::h_fact], v[var::vis]}};
}

std::vector<std::int32_t> integral_values(const ScenarioParams& p) {
    return {p.sl_init, p.sl_end, p.sl_fact_tenths, p.h_fact_tenths, p.vis};
}

ScenarioParams params_from_integral(const std::vector<std::int32_t>& values) {
    if (values.size() != 5) throw SchemaError("crosswalk integral part needs 5 values");
    return ScenarioParams{values[0], values[1], values[2], values[3], values[4]};
}

CrosswalkModel build_crosswalk_mdp(const ScenarioParams& params, const CarState& car_init,
                                   const PedestrianState& ped_init, CollisionSemantics semantics) {
    params.validate();
    if (collision(car_init, ped_init, semantics)) throw ModelError("initial state is already a collision");

    const CrosswalkState sink_state{CarState{0, car_init.y, 0}, PedestrianState{0, 0}, true, params};
    const FactoredState sink = encode(sink_state);
    const std::size_t num_actions = action_names().size();

    mdp::TransitionRule rule = [&](const FactoredState& fs, ActionIndex a) -> std::optional<mdp::FactoredDistribution> {
        if (a >= num_actions) return std::nullopt;
        const CrosswalkState s = decode(fs);
        if (s.done || collision(s.car, s.ped, semantics) || s.car.x >= kRoadLength) {
            return mdp::FactoredDistribution{{sink, 1.0}};
        }
        const auto cars = car_transition(s.car, static_cast<CarAction>(a), params);
        const auto peds = pedestrian_transition(s.ped, s.car, params);
        mdp::FactoredDistribution dist;
        dist.reserve(cars.size() * peds.size());
        for (const auto& [car, pc] : cars) {
            for (const auto& [ped, pp] : peds) {
                dist.emplace_back(encode(CrosswalkState{car, ped, false, params}), pc * pp);
            }
        }
        return dist;
    };

    const CrosswalkState init{car_init, ped_init, false, params};
    mdp::FactoredMdp model = mdp::enumerate_model(crosswalk_schema(), action_names(), rule, encode(init), sink);
    reach::TargetSet target = reach::TargetSet::from_predicate(model, [&](StateId id) {
        const CrosswalkState s = decode(model.state(id));
        return !s.done && collision(s.car, s.ped, semantics);
    });
    return CrosswalkModel{std::move(model), std::move(target), params, semantics};
}

namespace {

double distance(const CarState& car, const PedestrianState& ped) {
    return std::hypot(static_cast<double>(car.x - ped.x), static_cast<double>(car.y - ped.y));
}

}  // namespace

mdp::PolicyClass no_stopping_policy_class(const mdp::FactoredMdp& mdp) {
    using Mask = mdp::PolicyClass::Mask;
    const Mask accelerate = Mask{1} << action_index(CarAction::accelerate);
    const Mask coast = Mask{1} << action_index(CarAction::coast);
    const mdp::PolicyClass all = mdp::PolicyClass::unrestricted(mdp);
    std::vector<Mask> masks = all.masks();
    for (std::size_t i = 0; i < mdp.num_states(); ++i) {
        const CrosswalkState s = decode(mdp.state(mdp::to_state_id(i)));
        if (s.done || distance(s.car, s.ped) <= kNoStoppingRange) continue;
        masks[i] &= s.car.v == 0 ? accelerate : (accelerate | coast);
    }
    return mdp::PolicyClass(std::move(masks));
}

AgentKind parse_agent(std::string_view name) {
    if (name == "aggressive") return AgentKind::aggressive;
    if (name == "indifferent") return AgentKind::indifferent;
    if (name == "cautious") return AgentKind::cautious;
    throw Error("unknown agent '" + std::string(name) + "' (expected aggressive, indifferent or cautious)");
}

const char* to_string(AgentKind kind) {
    switch (kind) {
        case AgentKind::aggressive: return "aggressive";
        case AgentKind::indifferent: return "indifferent";
        case AgentKind::cautious: return "cautious";
    }
    return "?";
}

Observation observe(const CrosswalkState& s) {
    Observation obs;
    obs.car = s.car;
    obs.pedestrian_visible = !visibility_blocked(s.car, s.ped, s.params);
    if (obs.pedestrian_visible) obs.ped = s.ped;
    return obs;
}

CarAction agent_action(AgentKind kind, const Observation& obs) {
    const CarState& car = obs.car;
    const bool near_visible = obs.pedestrian_visible && distance(car, obs.ped) <= kNoStoppingRange;
    // Coasting at standstill means staying stopped, which is only allowed near a pedestrian.
    const CarAction set_off = (car.v == 0 && !near_visible) ? CarAction::accelerate : CarAction::coast;
    switch (kind) {
        case AgentKind::aggressive: {
            const int ahead = obs.ped.x - car.x;
            if (obs.pedestrian_visible && ahead >= 0 && ahead <= kAggressiveRange) return CarAction::accelerate;
            return car.v < kCruiseVelocity ? CarAction::accelerate : CarAction::coast;
        }
        case AgentKind::indifferent:
            return car.v == 0 ? CarAction::accelerate : CarAction::coast;
        case AgentKind::cautious: {
            if (near_visible) return CarAction::brake;
            // Approaching the crosswalk fast: braking is only allowed near a visible pedestrian,
            // otherwise the agent coasts.
            return set_off;
        }
    }
    return set_off;
}

mdp::Policy make_agent(AgentKind kind, const mdp::FactoredMdp& mdp) {
    std::vector<ActionIndex> choice(mdp.num_states());
    for (std::size_t i = 0; i < mdp.num_states(); ++i) {
        const CrosswalkState s = decode(mdp.state(mdp::to_state_id(i)));
        choice[i] = action_index(s.done ? CarAction::accelerate : agent_action(kind, observe(s)));
    }
    return mdp::Policy(std::move(choice));
}

}  // namespace intentcheck::crosswalk
