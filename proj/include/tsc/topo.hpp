#pragma once

// Agent-centric frames and the braid-style weaving distance between two
// future trajectories, plus the soft pairwise priority derived from it.
//
// Arrow convention: p_{i<-j} is the probability that neighbor j dominates
// ego i (i should yield to j). A_{i<-j} > 0 means i ranks above j.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

namespace tsc::topo {

inline constexpr double kPi = 3.14159265358979323846;

// Weaving distance reported when fewer than two common samples exist.
inline constexpr double kWeaveSentinel = 1e9;

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Maps any finite angle into (-pi, pi].
double normalize_angle(double a);

struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  ///< radians, (-pi, pi]

    static Pose2 make(double x, double y, double heading) {
        return {x, y, normalize_angle(heading)};
    }
};

struct Trajectory {
    std::vector<Point2> positions;  ///< H+1 samples, H >= 1
    long start_time = 0;
};

struct WeaveParams {
    double epsilon = 0.1;  ///< stabilizer in the near-crossing denominator
    double tau = 1.0;      ///< softmax temperature
    int horizon = 25;      ///< steps H

    void validate() const;
};

struct PairPriority {
    double p_ij;  ///< p_{i<-j}
    double p_ji;  ///< p_{j<-i} = 1 - p_{i<-j}
};

/// R(-heading) * (p - ego). Throws InvalidInput on non-finite data.
Trajectory to_local_frame(const Trajectory& traj, const Pose2& ego);

/// Inverse of to_local_frame.
Trajectory from_local_frame(const Trajectory& local, const Pose2& ego);

std::vector<double> lateral_gap(std::span<const double> ego_lateral,
                                std::span<const double> nbr_lateral);

/// Per-step near-crossing scores, length gap.size() - 1.
std::vector<double> near_crossing_scores(std::span<const double> gap, double epsilon);

double weaving_distance(std::span<const double> scores);

/// Two-class softmax over exp(-d/tau), evaluated in shifted form.
PairPriority pairwise_priority(double d_ij, double d_ji, double tau);

/// A_{i<-j} = p_{j<-i} - p_{i<-j}. Throws InvalidInput unless p_ij + p_ji = 1 (1e-12).
double preference_signal(double p_ij, double p_ji);

/// d_{i<-j}: lateral profiles of i and j in i's frame at its current pose.
/// Both trajectories are cut to their common length and to horizon+1; fewer
/// than two common samples gives kWeaveSentinel.
double directed_weaving_distance(const Trajectory& ego_future, const Trajectory& nbr_future,
                                 const Pose2& ego_pose, const WeaveParams& params);

// --- trajectory CSV -------------------------------------------------------

struct TrajectoryRow {
    int agent_id;
    long t;
    double x;
    double y;
    double heading;
};

/// Rows of an (agent_id, t, x, y, heading) CSV; an optional header line is
/// skipped. Throws ParseError naming the offending line.
std::vector<TrajectoryRow> read_trajectory_csv(std::istream& in);

/// Per-agent time-ordered rows; throws ParseError on duplicate (agent, t).
std::map<int, std::vector<TrajectoryRow>> group_by_agent(std::vector<TrajectoryRow> rows);

}  // namespace tsc::topo
