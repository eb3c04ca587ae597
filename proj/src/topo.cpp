#include "tsc/topo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>
#include <string>

#include "tsc/error.hpp"
#include "tsc/kernels.hpp"

namespace tsc::topo {

double normalize_angle(double a) {
    if (!std::isfinite(a)) throw InvalidInput("normalize_angle: non-finite angle");
    double r = std::remainder(a, 2.0 * kPi);
    if (r <= -kPi) r += 2.0 * kPi;
    return r;
}

void WeaveParams::validate() const {
    if (!(epsilon > 0.0)) throw InvalidParameter("weave epsilon must be > 0");
    if (!(tau > 0.0)) throw InvalidParameter("weave tau must be > 0");
    if (horizon < 1) throw InvalidParameter("weave horizon must be >= 1");
}

namespace {

void require_finite(const Trajectory& t, const char* who) {
    for (const auto& p : t.positions)
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw InvalidInput(std::string(who) + ": non-finite trajectory point");
}

void require_finite(const Pose2& p, const char* who) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.heading))
        throw InvalidInput(std::string(who) + ": non-finite pose");
}

}  // namespace

Trajectory to_local_frame(const Trajectory& traj, const Pose2& ego) {
    require_finite(traj, "to_local_frame");
    require_finite(ego, "to_local_frame");
    const double c = std::cos(ego.heading);
    const double s = std::sin(ego.heading);
    Trajectory out;
    out.start_time = traj.start_time;
    out.positions.reserve(traj.positions.size());
    for (const auto& p : traj.positions) {
        const double dx = p.x - ego.x;
        const double dy = p.y - ego.y;
        out.positions.push_back({c * dx + s * dy, -s * dx + c * dy});
    }
    return out;
}

Trajectory from_local_frame(const Trajectory& local, const Pose2& ego) {
    require_finite(local, "from_local_frame");
    require_finite(ego, "from_local_frame");
    const double c = std::cos(ego.heading);
    const double s = std::sin(ego.heading);
    Trajectory out;
    out.start_time = local.start_time;
    out.positions.reserve(local.positions.size());
    for (const auto& p : local.positions)
        out.positions.push_back({ego.x + c * p.x - s * p.y, ego.y + s * p.x + c * p.y});
    return out;
}

std::vector<double> lateral_gap(std::span<const double> ego_lateral,
                                std::span<const double> nbr_lateral) {
    if (ego_lateral.size() != nbr_lateral.size())
        throw InvalidInput("lateral_gap: profiles differ in length");
    std::vector<double> gap(ego_lateral.size());
    for (std::size_t h = 0; h < gap.size(); ++h) gap[h] = ego_lateral[h] - nbr_lateral[h];
    return gap;
}

std::vector<double> near_crossing_scores(std::span<const double> gap, double epsilon) {
    if (!(epsilon > 0.0)) throw InvalidParameter("near_crossing_scores: epsilon must be > 0");
    if (gap.size() < 2) throw InvalidInput("near_crossing_scores: need at least two gap samples");
    std::vector<double> out(gap.size() - 1);
    kernels::near_crossing(gap, epsilon, out);
    return out;
}

double weaving_distance(std::span<const double> scores) {
    if (scores.empty()) throw InvalidInput("weaving_distance: empty score sequence");
    return *std::min_element(scores.begin(), scores.end());
}

PairPriority pairwise_priority(double d_ij, double d_ji, double tau) {
    if (!(tau > 0.0)) throw InvalidParameter("pairwise_priority: tau must be > 0");
    // exp(-d_ij/tau) / (exp(-d_ij/tau) + exp(-d_ji/tau)) = logistic((d_ji - d_ij)/tau)
    const double z = (d_ji - d_ij) / tau;
    double p;
    if (z >= 0.0) {
        p = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        p = e / (1.0 + e);
    }
    return {p, 1.0 - p};
}

double preference_signal(double p_ij, double p_ji) {
    if (!(std::fabs(p_ij + p_ji - 1.0) <= 1e-12))
        throw InvalidInput("preference_signal: p_ij + p_ji must equal 1");
    return p_ji - p_ij;
}

double directed_weaving_distance(const Trajectory& ego_future, const Trajectory& nbr_future,
                                 const Pose2& ego_pose, const WeaveParams& params) {
    params.validate();
    const std::size_t n =
        std::min({ego_future.positions.size(), nbr_future.positions.size(),
                  static_cast<std::size_t>(params.horizon) + 1});
    if (n < 2) return kWeaveSentinel;

    Trajectory ego_cut{{ego_future.positions.begin(), ego_future.positions.begin() + n},
                       ego_future.start_time};
    Trajectory nbr_cut{{nbr_future.positions.begin(), nbr_future.positions.begin() + n},
                       nbr_future.start_time};
    const Trajectory ego_local = to_local_frame(ego_cut, ego_pose);
    const Trajectory nbr_local = to_local_frame(nbr_cut, ego_pose);

    std::vector<double> gap(n);
    for (std::size_t h = 0; h < n; ++h)
        gap[h] = ego_local.positions[h].y - nbr_local.positions[h].y;
    return weaving_distance(near_crossing_scores(gap, params.epsilon));
}

// --- CSV -----------------------------------------------------------------

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_field(const std::string& text, std::size_t line, const char* name) {
    T v{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || text.empty())
        throw ParseError("line " + std::to_string(line) + ": cannot parse " + name + " from '" +
                         text + "'");
    return v;
}

}  // namespace

std::vector<TrajectoryRow> read_trajectory_csv(std::istream& in) {
    std::vector<TrajectoryRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("agent_id", 0) == 0) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(trim(cell));
        if (cols.size() != 5)
            throw ParseError("line " + std::to_string(lineno) + ": expected 5 columns, got " +
                             std::to_string(cols.size()));
        TrajectoryRow r{parse_field<int>(cols[0], lineno, "agent_id"),
                        parse_field<long>(cols[1], lineno, "t"),
                        parse_field<double>(cols[2], lineno, "x"),
                        parse_field<double>(cols[3], lineno, "y"),
                        parse_field<double>(cols[4], lineno, "heading")};
        if (!std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.heading))
            throw ParseError("line " + std::to_string(lineno) + ": non-finite value");
        rows.push_back(r);
    }
    return rows;
}

std::map<int, std::vector<TrajectoryRow>> group_by_agent(std::vector<TrajectoryRow> rows) {
    std::map<int, std::vector<TrajectoryRow>> by_agent;
    for (const auto& r : rows) by_agent[r.agent_id].push_back(r);
    for (auto& [id, v] : by_agent) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
        for (std::size_t k = 1; k < v.size(); ++k)
            if (v[k].t == v[k - 1].t)
                throw ParseError("agent " + std::to_string(id) + ": duplicate row at t=" +
                                 std::to_string(v[k].t));
    }
    return by_agent;
}

}  // namespace tsc::topo
