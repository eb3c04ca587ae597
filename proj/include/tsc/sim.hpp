#pragma once

// Kinematic multi-vehicle microsimulator over lane-graph scenarios.
//
// Vehicles are discs of radius r_v driven by a kinematic bicycle with unit
// commands (lon, steer) in [-1,1]. Colliding vehicles and vehicles that finish
// their route are respawned at a free spawn point at the start of the next
// step, so the vehicle count is constant over an episode.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/topo.hpp"

namespace tsc::sim {

using topo::Point2;
using topo::Pose2;

/// Arc-length parameterized polyline with per-segment lane width.
class Polyline {
public:
    Polyline() = default;
    Polyline(std::vector<Point2> points, std::vector<double> segment_widths);

    struct Projection {
        double s;        ///< arc length of the foot point
        double lateral;  ///< signed offset, positive to the left of travel
        double heading;  ///< tangent heading at the foot point
        double width;    ///< lane width at the foot point
    };

    double length() const { return cum_.empty() ? 0.0 : cum_.back(); }
    const std::vector<Point2>& points() const { return pts_; }

    Point2 point_at(double s) const;
    double heading_at(double s) const;
    double width_at(double s) const;
    /// Signed heading change per meter between s and s + lookahead.
    double curvature_ahead(double s, double lookahead) const;
    /// Nearest foot point with s restricted to [s_lo, s_hi].
    Projection project(Point2 p, double s_lo, double s_hi) const;
    Projection project(Point2 p) const { return project(p, 0.0, length()); }

private:
    std::size_t segment_at(double s) const;

    std::vector<Point2> pts_;
    std::vector<double> cum_;
    std::vector<double> widths_;
};

struct Lane {
    std::string name;
    std::vector<Point2> centerline;
    double width = 4.0;
};

struct Spawn {
    std::vector<int> route;  ///< lane ids traversed in order; the first holds the spawn
    double offset = 0.0;     ///< arc length along the route
    double speed = 0.0;      ///< initial speed, m/s
};

struct Scenario {
    std::string name;
    std::vector<Lane> lanes;
    std::vector<Spawn> spawns;
    double v_max = 10.0;
    double a_max = 4.0;        ///< c_lon,max, m/s^2
    double steer_max = 0.5;    ///< c_steer,max, rad
    double wheelbase = 2.5;
    double vehicle_radius = 0.75;
    double spawn_clearance = 8.0;
    int n_vehicles = 4;
    int episode_len = 1200;
    double dt = 0.05;

    /// Throws InvalidParameter / InvalidInput when the scenario is unusable.
    void validate() const;
    /// Reference path of a spawn: its lanes chained, shared joints merged.
    Polyline route_path(std::size_t spawn) const;
};

Scenario parse_scenario(std::string_view toml_text);
Scenario load_scenario(const std::string& path);
/// "merge", "weave" or "loop".
Scenario builtin_scenario(std::string_view name);
std::string_view builtin_scenario_text(std::string_view name);
std::vector<std::string> builtin_scenario_names();

struct Command {
    double lon = 0.0;
    double steer = 0.0;
};

Command clamp_command(Command c);

struct VehicleState {
    Pose2 pose;
    double speed = 0.0;
    double progress = 0.0;        ///< meters along the route
    double progress_delta = 0.0;  ///< progress gained during the last step
    int spawn = 0;                ///< index of the spawn whose route is followed
    Command command;              ///< last applied (clamped) command
    bool alive = true;
    bool pending_respawn = false;
    int respawns = 0;
};

struct JointState {
    std::vector<VehicleState> vehicles;
    long t = 0;
    std::size_t spawn_cursor = 0;
};

struct CollisionFlags {
    bool agent_agent = false;
    bool agent_map = false;
};

/// Precomputed route polylines; scenario geometry is read-only during stepping.
class World {
public:
    explicit World(Scenario scenario);

    const Scenario& scenario() const { return scenario_; }
    const Polyline& route(std::size_t spawn) const { return routes_.at(spawn); }
    Point2 spawn_point(std::size_t spawn) const;
    VehicleState spawn_vehicle(std::size_t spawn) const;

private:
    Scenario scenario_;
    std::vector<Polyline> routes_;
};

struct StepResult {
    JointState state;
    std::vector<CollisionFlags> events;
};

/// Respawns pending vehicles, integrates the bicycle model, then detects
/// collisions. Commands are clamped, never rejected.
StepResult step(const JointState& state, std::span<const Command> commands, const World& world);

std::vector<CollisionFlags> detect_collisions(const JointState& state, const World& world);

/// Initial placement: n_vehicles distinct spawns drawn with the given rng.
JointState initial_state(const World& world, std::mt19937_64& rng);

// --- observation --------------------------------------------------------

inline constexpr int kEgoFeatures = 5;
inline constexpr int kNeighborFeatures = 6;  ///< dx, dy, sin dtheta, cos dtheta, dv, valid
inline constexpr double kObsDistanceScale = 20.0;

struct Observation {
    std::vector<double> ego;        ///< kEgoFeatures
    std::vector<double> neighbors;  ///< M x kNeighborFeatures, nearest first
    std::vector<double> valid;      ///< M flags
    /// Agent behind each slot (-1 when empty). Bookkeeping for centralized
    /// training only; never an input to the network.
    std::vector<int> neighbor_ids;

    int capacity() const { return static_cast<int>(valid.size()); }
    std::span<const double> slot(int k) const {
        return std::span<const double>(neighbors).subspan(
            static_cast<std::size_t>(k) * kNeighborFeatures, kNeighborFeatures);
    }
};

Observation observe(const JointState& state, int agent_id, const World& world, int capacity);

// --- reward ------------------------------------------------------------------

struct RewardWeights {
    double progress = 1.0;
    double collision = 10.0;
    double map = 10.0;
    double smooth = 0.1;
};

double reward(const VehicleState& prev, const VehicleState& next, const CollisionFlags& events,
              const RewardWeights& weights, const Scenario& scenario);

// --- logs and metrics --------------------------------------------------------

struct AgentRecord {
    double x, y, heading, speed, lon, steer;
    bool coll_aa, coll_am;
};

struct EpisodeLog {
    int n_agents = 0;
    std::vector<AgentRecord> records;  ///< step-major, n_agents per step

    long steps() const {
        return n_agents ? static_cast<long>(records.size()) / n_agents : 0;
    }
    const AgentRecord& at(long t, int agent) const {
        return records[static_cast<std::size_t>(t) * n_agents + agent];
    }
    void append(const JointState& state, std::span<const CollisionFlags> events);
};

struct CollisionRates {
    double cr, cr_aa, cr_am;
};
struct Smoothness {
    double sm, sm_lo, sm_la;
};

struct Metrics {
    double cr = 0, cr_aa = 0, cr_am = 0;
    double as = 0;
    double sm = 0, sm_lo = 0, sm_la = 0;
};

inline constexpr double kSmoothnessBeta = 0.5;

CollisionRates collision_rate(const EpisodeLog& log);
double average_speed(const EpisodeLog& log, double v_max);
Smoothness smoothness(const EpisodeLog& log, double beta = kSmoothnessBeta);
Metrics compute_metrics(const EpisodeLog& log, double v_max);
Metrics mean_metrics(std::span<const Metrics> runs);

void write_episode_csv(std::ostream& out, const EpisodeLog& log);
/// Throws ParseError with the offending line.
EpisodeLog read_episode_csv(std::istream& in);
void write_metrics_json(std::ostream& out, const Metrics& m);

// --- episode driver -------------------------------------------------------------

/// Owns a world and a joint state; resets itself every episode_len steps.
class Simulator {
public:
    Simulator(Scenario scenario, std::uint64_t seed);

    const World& world() const { return world_; }
    const Scenario& scenario() const { return world_.scenario(); }
    const JointState& state() const { return state_; }
    int n_agents() const { return scenario().n_vehicles; }
    long episode_step() const { return episode_step_; }

    void reset();
    /// Advances one step; returns the collision events. The episode ends when
    /// episode_step() reaches episode_len (the caller resets).
    const std::vector<CollisionFlags>& advance(std::span<const Command> commands);
    bool episode_done() const { return episode_step_ >= scenario().episode_len; }

    /// Checkpoint support: the rng and a mid-episode state round-trip exactly.
    std::mt19937_64& rng() { return rng_; }
    void restore(JointState state, long episode_step);

private:
    World world_;
    std::mt19937_64 rng_;
    JointState state_;
    std::vector<CollisionFlags> events_;
    long episode_step_ = 0;
};

}  // namespace tsc::sim
