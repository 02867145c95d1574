#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "intentcheck/mdp.hpp"
#include "intentcheck/reachability.hpp"

namespace intentcheck::crosswalk {

// Road geometry, in meters.
inline constexpr int kRoadLength = 60;
inline constexpr int kRoadWidth = 15;
inline constexpr int kCrosswalkBegin = 45;
inline constexpr int kCrosswalkEnd = 55;
inline constexpr int kCarYMin = 3;
inline constexpr int kCarYMax = 13;
inline constexpr int kVelocityMax = 5;
// Parked vehicle occupying [34, 44] x [2, 4].
inline constexpr int kParkedXMin = 34;
inline constexpr int kParkedXMax = 44;
inline constexpr int kParkedYMin = 2;
inline constexpr int kParkedYMax = 4;
/// Half-width of the collision box in each coordinate.
inline constexpr int kHitDistance = 5;
/// Policies may not stop the car while the pedestrian is farther than this.
inline constexpr double kNoStoppingRange = 15.0;

/// Environment parameters that stay fixed along a scenario. Decimals are kept in tenths.
struct ScenarioParams {
    int sl_init = 20;
    int sl_end = 45;
    int sl_fact_tenths = 25;
    int h_fact_tenths = 5;
    int vis = 1;

    double sl_fact() const { return sl_fact_tenths / 10.0; }
    double h_fact() const { return h_fact_tenths / 10.0; }
    /// Throws SchemaError when a field is out of range or sl_init > sl_end.
    void validate() const;

    bool operator==(const ScenarioParams&) const = default;
};

struct CarState {
    int x = 0;
    int y = 8;
    int v = 0;
    bool operator==(const CarState&) const = default;
};

struct PedestrianState {
    int x = 0;
    int y = 0;
    bool operator==(const PedestrianState&) const = default;
};

enum class CarAction : mdp::ActionIndex { accelerate = 0, coast = 1, brake = 2 };

inline constexpr mdp::ActionIndex action_index(CarAction a) { return static_cast<mdp::ActionIndex>(a); }
std::vector<std::string> action_names();

struct GammaCoeffs {
    double gamma0;
    double gamma1;
    double gamma2;
};

/// Slippery-road damping: gamma2 = 0.5/(2^f - 1), gamma1 = 0.5/(2f - 1), gamma0 = rest.
GammaCoeffs gamma_coeffs(double sl_fact);

template <typename S>
using Outcomes = std::vector<std::pair<S, double>>;

/// Velocity/position update of the car for one step; equal post-states are merged.
Outcomes<CarState> car_transition(const CarState& car, CarAction action, const ScenarioParams& params);

enum class Regime { on_road, front_of_crosswalk, sidewalk };
enum class OnRoadRegime { no_danger, danger_to_cross, danger_to_stay };

Regime pedestrian_regime(const PedestrianState& ped);
OnRoadRegime on_road_regime(const PedestrianState& ped, const CarState& car);

Outcomes<PedestrianState> pedestrian_transition(const PedestrianState& ped, const CarState& car,
                                                const ScenarioParams& params);

/// Whether the segment between car and pedestrian crosses the parked vehicle (only when vis = 1).
bool visibility_blocked(const CarState& car, const PedestrianState& ped, const ScenarioParams& params);

enum class CollisionSemantics {
    conjunction,  ///< |dx| <= 5 and |dy| <= 5
    disjunction,  ///< |dx| <= 5 or |dy| <= 5
};

CollisionSemantics parse_collision_semantics(std::string_view text);
const char* to_string(CollisionSemantics semantics);

bool collision(const CarState& car, const PedestrianState& ped,
               CollisionSemantics semantics = CollisionSemantics::conjunction);

/// Variable layout of the crosswalk schema.
namespace var {
inline constexpr std::size_t car_x = 0;
inline constexpr std::size_t car_y = 1;
inline constexpr std::size_t car_v = 2;
inline constexpr std::size_t ped_x = 3;
inline constexpr std::size_t ped_y = 4;
inline constexpr std::size_t done = 5;
inline constexpr std::size_t sl_init = 6;
inline constexpr std::size_t sl_end = 7;
inline constexpr std::size_t sl_fact = 8;
inline constexpr std::size_t h_fact = 9;
inline constexpr std::size_t vis = 10;
}  // namespace var

mdp::VariableSchema crosswalk_schema();

/// Decoded crosswalk state; `done` marks the absorbing end-of-execution state.
struct CrosswalkState {
    CarState car;
    PedestrianState ped;
    bool done = false;
    ScenarioParams params;
};

mdp::FactoredState encode(const CrosswalkState& s);
CrosswalkState decode(const mdp::FactoredState& s);
/// Integral part of the schema in schema order: sl_init, sl_end, sl_fact, h_fact, vis.
std::vector<std::int32_t> integral_values(const ScenarioParams& params);
ScenarioParams params_from_integral(const std::vector<std::int32_t>& values);

struct CrosswalkModel {
    mdp::FactoredMdp mdp;
    reach::TargetSet target;
    ScenarioParams params;
    CollisionSemantics semantics;
};

/// Enumerates the joint car/pedestrian MDP reachable from the given initial positions.
/// Throws ModelError when the initial state is already a collision.
CrosswalkModel build_crosswalk_mdp(const ScenarioParams& params, const CarState& car_init,
                                   const PedestrianState& ped_init,
                                   CollisionSemantics semantics = CollisionSemantics::conjunction);

/// Brake is forbidden while the pedestrian is farther than 15 m; at standstill only accelerate.
mdp::PolicyClass no_stopping_policy_class(const mdp::FactoredMdp& mdp);

enum class AgentKind { aggressive, indifferent, cautious };

AgentKind parse_agent(std::string_view name);
const char* to_string(AgentKind kind);

/// What the agent can observe: its own car, and the pedestrian only when not occluded.
struct Observation {
    CarState car;
    bool pedestrian_visible = false;
    PedestrianState ped;  // meaningful only when visible
};

Observation observe(const CrosswalkState& s);
/// Aggressive agent: speeds towards a visible pedestrian at most this far ahead in x.
inline constexpr int kAggressiveRange = 20;
/// Aggressive agent: cruising speed while no pedestrian is in range.
inline constexpr int kCruiseVelocity = 3;

/// Action of a shipped agent; depends on the state only through observe().
/// aggressive: accelerates towards a visible pedestrian ahead within 20 m, else cruises at 3 m/s.
/// indifferent: ignores the pedestrian, sets off from standstill and then coasts.
/// cautious: brakes for a visible pedestrian within 15 m, else coasts (sets off from standstill).
CarAction agent_action(AgentKind kind, const Observation& obs);

mdp::Policy make_agent(AgentKind kind, const mdp::FactoredMdp& mdp);

}  // namespace intentcheck::crosswalk
