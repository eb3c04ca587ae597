#include "tsc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tsc/error.hpp"

namespace tsc::sim {

using topo::normalize_angle;

// --- Polyline --------------------------------------------------------------

Polyline::Polyline(std::vector<Point2> points, std::vector<double> segment_widths)
    : pts_(std::move(points)), widths_(std::move(segment_widths)) {
    if (pts_.size() < 2) throw InvalidInput("polyline needs at least two points");
    if (widths_.size() != pts_.size() - 1)
        throw InvalidInput("polyline needs one width per segment");
    cum_.resize(pts_.size(), 0.0);
    for (std::size_t k = 1; k < pts_.size(); ++k) {
        const double len = std::hypot(pts_[k].x - pts_[k - 1].x, pts_[k].y - pts_[k - 1].y);
        if (!(len > 0.0)) throw InvalidInput("polyline has a zero-length segment");
        cum_[k] = cum_[k - 1] + len;
    }
}

std::size_t Polyline::segment_at(double s) const {
    auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    std::size_t k = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
    return std::min(k, pts_.size() - 2);
}

Point2 Polyline::point_at(double s) const {
    s = std::clamp(s, 0.0, length());
    const std::size_t k = segment_at(s);
    const double seg = cum_[k + 1] - cum_[k];
    const double u = (s - cum_[k]) / seg;
    return {pts_[k].x + u * (pts_[k + 1].x - pts_[k].x), pts_[k].y + u * (pts_[k + 1].y - pts_[k].y)};
}

double Polyline::heading_at(double s) const {
    const std::size_t k = segment_at(std::clamp(s, 0.0, length()));
    return std::atan2(pts_[k + 1].y - pts_[k].y, pts_[k + 1].x - pts_[k].x);
}

double Polyline::width_at(double s) const {
    return widths_[segment_at(std::clamp(s, 0.0, length()))];
}

double Polyline::curvature_ahead(double s, double lookahead) const {
    return normalize_angle(heading_at(s + lookahead) - heading_at(s)) / lookahead;
}

Polyline::Projection Polyline::project(Point2 p, double s_lo, double s_hi) const {
    s_lo = std::clamp(s_lo, 0.0, length());
    s_hi = std::clamp(s_hi, s_lo, length());
    Projection best{0.0, 0.0, 0.0, 0.0};
    double best_d2 = std::numeric_limits<double>::infinity();
    const std::size_t k0 = segment_at(s_lo);
    const std::size_t k1 = segment_at(s_hi);
    for (std::size_t k = k0; k <= k1; ++k) {
        const double ax = pts_[k].x, ay = pts_[k].y;
        const double dx = pts_[k + 1].x - ax, dy = pts_[k + 1].y - ay;
        const double seg = cum_[k + 1] - cum_[k];
        double u = ((p.x - ax) * dx + (p.y - ay) * dy) / (seg * seg);
        const double u_lo = std::max(0.0, (s_lo - cum_[k]) / seg);
        const double u_hi = std::min(1.0, (s_hi - cum_[k]) / seg);
        u = std::clamp(u, u_lo, u_hi);
        const double fx = ax + u * dx, fy = ay + u * dy;
        const double ex = p.x - fx, ey = p.y - fy;
        const double d2 = ex * ex + ey * ey;
        if (d2 < best_d2) {
            best_d2 = d2;
            const double cross = (dx * ey - dy * ex) / seg;
            best = {cum_[k] + u * seg, cross >= 0.0 ? std::sqrt(d2) : -std::sqrt(d2),
                    std::atan2(dy, dx), widths_[k]};
        }
    }
    return best;
}

// --- Scenario --------------------------------------------------------------

void Scenario::validate() const {
    if (!(dt > 0.0)) throw InvalidParameter("scenario dt must be > 0");
    if (!(v_max > 0.0)) throw InvalidParameter("scenario v_max must be > 0");
    if (!(a_max > 0.0)) throw InvalidParameter("scenario a_max must be > 0");
    if (!(steer_max > 0.0 && steer_max < topo::kPi / 2))
        throw InvalidParameter("scenario steer_max must lie in (0, pi/2)");
    if (!(wheelbase > 0.0)) throw InvalidParameter("scenario wheelbase must be > 0");
    if (!(vehicle_radius > 0.0)) throw InvalidParameter("scenario vehicle_radius must be > 0");
    if (episode_len < 1) throw InvalidParameter("scenario episode_len must be >= 1");
    if (n_vehicles < 1) throw InvalidParameter("scenario n_vehicles must be >= 1");
    if (static_cast<std::size_t>(n_vehicles) > spawns.size())
        throw InvalidParameter("scenario has fewer spawns than vehicles");
    for (const auto& lane : lanes) {
        if (lane.centerline.size() < 2) throw InvalidInput("lane '" + lane.name + "' too short");
        if (!(lane.width > 2.0 * vehicle_radius))
            throw InvalidParameter("lane '" + lane.name + "' narrower than a vehicle");
    }
    for (std::size_t k = 0; k < spawns.size(); ++k) {
        const auto& sp = spawns[k];
        if (sp.route.empty()) throw InvalidInput("spawn without route");
        for (int id : sp.route)
            if (id < 0 || static_cast<std::size_t>(id) >= lanes.size())
                throw InvalidInput("spawn route references unknown lane");
        const Polyline path = route_path(k);
        if (!(sp.offset >= 0.0 && sp.offset < path.length()))
            throw InvalidInput("spawn offset outside its route");
        if (!(sp.speed >= 0.0 && sp.speed <= v_max))
            throw InvalidParameter("spawn speed outside [0, v_max]");
    }
}

Polyline Scenario::route_path(std::size_t spawn) const {
    std::vector<Point2> pts;
    std::vector<double> widths;
    for (int id : spawns.at(spawn).route) {
        const Lane& lane = lanes.at(static_cast<std::size_t>(id));
        for (const auto& p : lane.centerline) {
            if (!pts.empty() && std::hypot(p.x - pts.back().x, p.y - pts.back().y) < 1e-9) continue;
            if (!pts.empty()) widths.push_back(lane.width);
            pts.push_back(p);
        }
    }
    return Polyline(std::move(pts), std::move(widths));
}

// --- World / stepping ------------------------------------------------------------

World::World(Scenario scenario) : scenario_(std::move(scenario)) {
    scenario_.validate();
    routes_.reserve(scenario_.spawns.size());
    for (std::size_t k = 0; k < scenario_.spawns.size(); ++k)
        routes_.push_back(scenario_.route_path(k));
}

Point2 World::spawn_point(std::size_t spawn) const {
    return routes_.at(spawn).point_at(scenario_.spawns.at(spawn).offset);
}

VehicleState World::spawn_vehicle(std::size_t spawn) const {
    const auto& sp = scenario_.spawns.at(spawn);
    const Polyline& r = routes_.at(spawn);
    VehicleState v;
    const Point2 p = r.point_at(sp.offset);
    v.pose = Pose2::make(p.x, p.y, r.heading_at(sp.offset));
    v.speed = sp.speed;
    v.progress = sp.offset;
    v.spawn = static_cast<int>(spawn);
    return v;
}

Command clamp_command(Command c) {
    auto cl = [](double x) { return std::isfinite(x) ? std::clamp(x, -1.0, 1.0) : 0.0; };
    return {cl(c.lon), cl(c.steer)};
}

namespace {

double clearance_at(const JointState& st, Point2 p, std::size_t skip) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < st.vehicles.size(); ++k) {
        if (k == skip) continue;
        const auto& v = st.vehicles[k];
        best = std::min(best, std::hypot(v.pose.x - p.x, v.pose.y - p.y));
    }
    return best;
}

void respawn(JointState& st, std::size_t idx, const World& world) {
    const std::size_t n = world.scenario().spawns.size();
    std::size_t chosen = n;
    double best_clear = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t cand = (st.spawn_cursor + k) % n;
        const double c = clearance_at(st, world.spawn_point(cand), idx);
        if (c >= world.scenario().spawn_clearance) {
            chosen = cand;
            break;
        }
        if (c > best_clear) {
            best_clear = c;
            best_idx = cand;
        }
    }
    if (chosen == n) chosen = best_idx;
    const VehicleState old = st.vehicles[idx];
    VehicleState v = world.spawn_vehicle(chosen);
    v.command = old.command;
    v.respawns = old.respawns + 1;
    st.vehicles[idx] = v;
    st.spawn_cursor = (chosen + 1) % n;
}

double route_window_lo(double progress) { return progress - 4.0; }
double route_window_hi(double progress) { return progress + 4.0; }

}  // namespace

StepResult step(const JointState& state, std::span<const Command> commands, const World& world) {
    const Scenario& sc = world.scenario();
    if (commands.size() != state.vehicles.size())
        throw InvalidInput("step: one command per vehicle required");

    StepResult out{state, {}};
    JointState& next = out.state;
    next.t = state.t + 1;

    for (std::size_t i = 0; i < next.vehicles.size(); ++i)
        if (next.vehicles[i].pending_respawn) respawn(next, i, world);

    for (std::size_t i = 0; i < next.vehicles.size(); ++i) {
        VehicleState& v = next.vehicles[i];
        const Command c = clamp_command(commands[i]);
        const double v0 = v.speed;
        const double v1 = std::clamp(v0 + c.lon * sc.a_max * sc.dt, 0.0, sc.v_max);
        const double heading =
            normalize_angle(v.pose.heading + (v0 / sc.wheelbase) * std::tan(c.steer * sc.steer_max) * sc.dt);
        v.pose.x += v1 * std::cos(heading) * sc.dt;
        v.pose.y += v1 * std::sin(heading) * sc.dt;
        v.pose.heading = heading;
        v.speed = v1;
        v.command = c;

        const Polyline& route = world.route(static_cast<std::size_t>(v.spawn));
        const auto proj = route.project({v.pose.x, v.pose.y}, v.progress - 2.0,
                                        v.progress + v1 * sc.dt + 4.0);
        v.progress_delta = proj.s - v.progress;
        v.progress = proj.s;
        if (v.progress >= route.length() - 0.5) v.pending_respawn = true;
    }

    out.events = detect_collisions(next, world);
    for (std::size_t i = 0; i < next.vehicles.size(); ++i)
        if (out.events[i].agent_agent || out.events[i].agent_map)
            next.vehicles[i].pending_respawn = true;
    return out;
}

std::vector<CollisionFlags> detect_collisions(const JointState& state, const World& world) {
    const Scenario& sc = world.scenario();
    const std::size_t n = state.vehicles.size();
    std::vector<CollisionFlags> flags(n);
    const double reach = 2.0 * sc.vehicle_radius;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto& a = state.vehicles[i].pose;
            const auto& b = state.vehicles[j].pose;
            if (std::hypot(a.x - b.x, a.y - b.y) < reach) {
                flags[i].agent_agent = true;
                flags[j].agent_agent = true;
            }
        }
        const auto& v = state.vehicles[i];
        const Polyline& route = world.route(static_cast<std::size_t>(v.spawn));
        const auto proj = route.project({v.pose.x, v.pose.y}, route_window_lo(v.progress),
                                        route_window_hi(v.progress));
        flags[i].agent_map = std::fabs(proj.lateral) > proj.width / 2.0 - sc.vehicle_radius;
    }
    return flags;
}

JointState initial_state(const World& world, std::mt19937_64& rng) {
    const auto& sc = world.scenario();
    std::vector<std::size_t> order(sc.spawns.size());
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with an explicit draw so the layout does not depend on the
    // standard library's shuffle.
    for (std::size_t k = order.size(); k > 1; --k) {
        const std::size_t r = static_cast<std::size_t>(rng() % k);
        std::swap(order[k - 1], order[r]);
    }
    JointState st;
    for (int i = 0; i < sc.n_vehicles; ++i)
        st.vehicles.push_back(world.spawn_vehicle(order[static_cast<std::size_t>(i)]));
    st.spawn_cursor = order[static_cast<std::size_t>(sc.n_vehicles) % order.size()];
    return st;
}

// --- observation -------------------------------------------------------------

Observation observe(const JointState& state, int agent_id, const World& world, int capacity) {
    if (agent_id < 0 || static_cast<std::size_t>(agent_id) >= state.vehicles.size())
        throw InvalidInput("observe: unknown agent");
    const VehicleState& ego = state.vehicles[static_cast<std::size_t>(agent_id)];
    if (!ego.alive) throw InvalidInput("observe: agent is not alive");
    if (capacity < 0) throw InvalidParameter("observe: negative capacity");
    const Scenario& sc = world.scenario();
    const Polyline& route = world.route(static_cast<std::size_t>(ego.spawn));

    Observation o;
    const auto proj = route.project({ego.pose.x, ego.pose.y}, route_window_lo(ego.progress),
                                    route_window_hi(ego.progress));
    o.ego = {ego.speed / sc.v_max, normalize_angle(ego.pose.heading - proj.heading),
             proj.lateral / (proj.width / 2.0), 10.0 * route.curvature_ahead(proj.s, 10.0),
             proj.s / route.length()};

    std::vector<std::pair<double, int>> order;
    for (std::size_t j = 0; j < state.vehicles.size(); ++j) {
        if (static_cast<int>(j) == agent_id || !state.vehicles[j].alive) continue;
        const auto& p = state.vehicles[j].pose;
        order.emplace_back(std::hypot(p.x - ego.pose.x, p.y - ego.pose.y), static_cast<int>(j));
    }
    std::sort(order.begin(), order.end());

    const auto m = static_cast<std::size_t>(capacity);
    o.neighbors.assign(m * kNeighborFeatures, 0.0);
    o.valid.assign(m, 0.0);
    o.neighbor_ids.assign(m, -1);
    const double c = std::cos(ego.pose.heading);
    const double s = std::sin(ego.pose.heading);
    for (std::size_t k = 0; k < std::min(m, order.size()); ++k) {
        const VehicleState& nb = state.vehicles[static_cast<std::size_t>(order[k].second)];
        const double dx = nb.pose.x - ego.pose.x;
        const double dy = nb.pose.y - ego.pose.y;
        const double dth = normalize_angle(nb.pose.heading - ego.pose.heading);
        double* f = o.neighbors.data() + k * kNeighborFeatures;
        f[0] = (c * dx + s * dy) / kObsDistanceScale;
        f[1] = (-s * dx + c * dy) / kObsDistanceScale;
        f[2] = std::sin(dth);
        f[3] = std::cos(dth);
        f[4] = (nb.speed - ego.speed) / sc.v_max;
        f[5] = 1.0;
        o.valid[k] = 1.0;
        o.neighbor_ids[k] = order[k].second;
    }
    return o;
}

// --- reward ------------------------------------------------------------------

double reward(const VehicleState& prev, const VehicleState& next, const CollisionFlags& events,
              const RewardWeights& w, const Scenario& sc) {
    const double progress = next.progress_delta / (sc.v_max * sc.dt);
    const double change =
        (std::fabs(next.command.lon - prev.command.lon) + std::fabs(next.command.steer - prev.command.steer)) / 2.0;
    return w.progress * progress - w.collision * (events.agent_agent ? 1.0 : 0.0) -
           w.map * (events.agent_map ? 1.0 : 0.0) - w.smooth * change;
}

// --- Simulator ----------------------------------------------------------------------

Simulator::Simulator(Scenario scenario, std::uint64_t seed) : world_(std::move(scenario)), rng_(seed) {
    reset();
}

void Simulator::reset() {
    state_ = initial_state(world_, rng_);
    events_.assign(state_.vehicles.size(), {});
    episode_step_ = 0;
}

void Simulator::restore(JointState state, long episode_step) {
    if (state.vehicles.size() != static_cast<std::size_t>(n_agents()))
        throw InvalidInput("restore: vehicle count does not match the scenario");
    state_ = std::move(state);
    events_.assign(state_.vehicles.size(), {});
    episode_step_ = episode_step;
}

const std::vector<CollisionFlags>& Simulator::advance(std::span<const Command> commands) {
    StepResult r = step(state_, commands, world_);
    state_ = std::move(r.state);
    events_ = std::move(r.events);
    ++episode_step_;
    return events_;
}

}  // namespace tsc::sim
