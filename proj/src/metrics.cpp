#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tsc/error.hpp"
#include "tsc/sim.hpp"

namespace tsc::sim {

void EpisodeLog::append(const JointState& state, std::span<const CollisionFlags> events) {
    if (n_agents == 0) n_agents = static_cast<int>(state.vehicles.size());
    if (static_cast<std::size_t>(n_agents) != state.vehicles.size() || events.size() != state.vehicles.size())
        throw InvalidInput("episode log: agent count changed mid-episode");
    for (std::size_t i = 0; i < state.vehicles.size(); ++i) {
        const auto& v = state.vehicles[i];
        records.push_back({v.pose.x, v.pose.y, v.pose.heading, v.speed, v.command.lon,
                           v.command.steer, events[i].agent_agent, events[i].agent_map});
    }
}

CollisionRates collision_rate(const EpisodeLog& log) {
    const long T = log.steps();
    if (T == 0) throw InvalidInput("collision_rate: empty log");
    long aa = 0, am = 0;
    for (long t = 0; t < T; ++t) {
        bool any_aa = false, any_am = false;
        for (int i = 0; i < log.n_agents; ++i) {
            any_aa |= log.at(t, i).coll_aa;
            any_am |= log.at(t, i).coll_am;
        }
        aa += any_aa;
        am += any_am;
    }
    const double cr_aa = 100.0 * static_cast<double>(aa) / static_cast<double>(T);
    const double cr_am = 100.0 * static_cast<double>(am) / static_cast<double>(T);
    return {cr_aa + cr_am, cr_aa, cr_am};
}

double average_speed(const EpisodeLog& log, double v_max) {
    if (log.records.empty()) throw InvalidInput("average_speed: empty log");
    double sum = 0.0;
    for (const auto& r : log.records) sum += std::fabs(r.speed) / v_max;
    return 100.0 * sum / static_cast<double>(log.records.size());
}

Smoothness smoothness(const EpisodeLog& log, double beta) {
    const long T = log.steps();
    if (T < 2) throw InvalidInput("smoothness: need at least two steps");
    // Commands live in [-1, 1]; range 2 normalizes each change into [0, 1].
    double lo = 0.0, la = 0.0;
    for (int i = 0; i < log.n_agents; ++i) {
        for (long t = 1; t < T; ++t) {
            lo += std::fabs(log.at(t, i).lon - log.at(t - 1, i).lon) / 2.0;
            la += std::fabs(log.at(t, i).steer - log.at(t - 1, i).steer) / 2.0;
        }
    }
    const double denom = static_cast<double>(log.n_agents) * static_cast<double>(T - 1);
    const double sm_lo = 100.0 * lo / denom;
    const double sm_la = 100.0 * la / denom;
    return {beta * sm_lo + (1.0 - beta) * sm_la, sm_lo, sm_la};
}

Metrics compute_metrics(const EpisodeLog& log, double v_max) {
    const auto cr = collision_rate(log);
    Metrics m;
    m.cr = cr.cr;
    m.cr_aa = cr.cr_aa;
    m.cr_am = cr.cr_am;
    m.as = average_speed(log, v_max);
    if (log.steps() >= 2) {
        const auto sm = smoothness(log);
        m.sm = sm.sm;
        m.sm_lo = sm.sm_lo;
        m.sm_la = sm.sm_la;
    }
    return m;
}

Metrics mean_metrics(std::span<const Metrics> runs) {
    Metrics m;
    if (runs.empty()) return m;
    for (const auto& r : runs) {
        m.cr_aa += r.cr_aa;
        m.cr_am += r.cr_am;
        m.as += r.as;
        m.sm_lo += r.sm_lo;
        m.sm_la += r.sm_la;
    }
    const double n = static_cast<double>(runs.size());
    m.cr_aa /= n;
    m.cr_am /= n;
    m.as /= n;
    m.sm_lo /= n;
    m.sm_la /= n;
    m.cr = m.cr_aa + m.cr_am;
    m.sm = kSmoothnessBeta * m.sm_lo + (1.0 - kSmoothnessBeta) * m.sm_la;
    return m;
}

void write_episode_csv(std::ostream& out, const EpisodeLog& log) {
    out << "t,agent,x,y,heading,speed,lon,steer,coll_aa,coll_am\n";
    char buf[32];
    auto put = [&](double v) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, p - buf);
    };
    for (long t = 0; t < log.steps(); ++t) {
        for (int i = 0; i < log.n_agents; ++i) {
            const auto& r = log.at(t, i);
            out << t << ',' << i << ',';
            put(r.x), out << ',';
            put(r.y), out << ',';
            put(r.heading), out << ',';
            put(r.speed), out << ',';
            put(r.lon), out << ',';
            put(r.steer), out << ',';
            out << (r.coll_aa ? 1 : 0) << ',' << (r.coll_am ? 1 : 0) << '\n';
        }
    }
}

EpisodeLog read_episode_csv(std::istream& in) {
    EpisodeLog log;
    std::string line;
    std::size_t lineno = 0;
    long expect_t = 0;
    int expect_agent = 0;
    int agents_seen = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (lineno == 1 && line.rfind("t,", 0) == 0)) continue;
        std::vector<std::string> c;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) c.push_back(cell);
        auto fail = [&](const std::string& why) {
            throw ParseError("episode csv line " + std::to_string(lineno) + ": " + why);
        };
        if (c.size() != 10) fail("expected 10 columns");
        auto num = [&](const std::string& s) {
            double v{};
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size()) fail("bad number '" + s + "'");
            return v;
        };
        const long t = static_cast<long>(num(c[0]));
        const int agent = static_cast<int>(num(c[1]));
        if (t != expect_t) {
            if (t != expect_t + 1 || expect_agent == 0) fail("rows out of order");
            if (agents_seen < 0) agents_seen = expect_agent;
            if (expect_agent != agents_seen) fail("agent count changed");
            expect_t = t;
            expect_agent = 0;
        }
        if (agent != expect_agent) fail("rows out of order");
        ++expect_agent;
        log.records.push_back({num(c[2]), num(c[3]), num(c[4]), num(c[5]), num(c[6]), num(c[7]),
                               num(c[8]) != 0.0, num(c[9]) != 0.0});
    }
    if (agents_seen < 0) agents_seen = expect_agent;
    if (expect_agent != agents_seen) throw ParseError("episode csv: truncated final step");
    log.n_agents = agents_seen;
    return log;
}

void write_metrics_json(std::ostream& out, const Metrics& m) {
    nlohmann::json j{{"CR", m.cr},   {"CR_AA", m.cr_aa}, {"CR_AM", m.cr_am}, {"AS", m.as},
                     {"SM", m.sm},   {"SM_LO", m.sm_lo}, {"SM_LA", m.sm_la}};
    out << j.dump(2) << '\n';
}

}  // namespace tsc::sim
