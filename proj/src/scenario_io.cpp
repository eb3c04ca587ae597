#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "tsc/error.hpp"
#include "tsc/sim.hpp"

namespace tsc::sim {

namespace detail {
extern const std::string_view kMergeToml;
extern const std::string_view kWeaveToml;
extern const std::string_view kLoopToml;
}  // namespace detail

namespace {

void reject_unknown(const toml::table& t, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [k, v] : t)
        if (!allowed.count(std::string(k.str())))
            throw ParseError(where + ": unknown key '" + std::string(k.str()) + "'");
}

double number(const toml::node& n, const std::string& key) {
    if (auto v = n.value<double>()) return *v;
    throw ParseError("scenario: '" + key + "' must be a number");
}

template <typename T>
void read_opt(const toml::table& t, const char* key, T& out) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, int>) {
        auto v = n->value<std::int64_t>();
        if (!v) throw ParseError(std::string("scenario: '") + key + "' must be an integer");
        out = static_cast<int>(*v);
    } else if constexpr (std::is_same_v<T, std::string>) {
        auto v = n->value<std::string>();
        if (!v) throw ParseError(std::string("scenario: '") + key + "' must be a string");
        out = *v;
    } else {
        out = number(*n, key);
    }
}

std::vector<Point2> read_points(const toml::node* n, const std::string& where) {
    const toml::array* arr = n ? n->as_array() : nullptr;
    if (!arr) throw ParseError(where + ": 'points' must be an array of [x, y] pairs");
    std::vector<Point2> pts;
    for (const auto& item : *arr) {
        const toml::array* xy = item.as_array();
        if (!xy || xy->size() != 2) throw ParseError(where + ": each point needs exactly [x, y]");
        pts.push_back({number(*xy->get(0), "x"), number(*xy->get(1), "y")});
    }
    return pts;
}

}  // namespace

Scenario parse_scenario(std::string_view text) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "scenario: line " << e.source().begin.line << ": " << e.description();
        throw ParseError(msg.str());
    }
    reject_unknown(root,
                   {"name", "dt", "episode_len", "v_max", "a_max", "steer_max", "wheelbase",
                    "vehicle_radius", "spawn_clearance", "n_vehicles", "lanes", "spawns"},
                   "scenario");
    Scenario sc;
    read_opt(root, "name", sc.name);
    read_opt(root, "dt", sc.dt);
    read_opt(root, "episode_len", sc.episode_len);
    read_opt(root, "v_max", sc.v_max);
    read_opt(root, "a_max", sc.a_max);
    read_opt(root, "steer_max", sc.steer_max);
    read_opt(root, "wheelbase", sc.wheelbase);
    read_opt(root, "vehicle_radius", sc.vehicle_radius);
    read_opt(root, "spawn_clearance", sc.spawn_clearance);
    read_opt(root, "n_vehicles", sc.n_vehicles);

    const toml::array* lanes = root["lanes"].as_array();
    if (!lanes || lanes->empty()) throw ParseError("scenario: at least one [[lanes]] entry required");
    for (const auto& node : *lanes) {
        const toml::table* t = node.as_table();
        if (!t) throw ParseError("scenario: [[lanes]] entries must be tables");
        reject_unknown(*t, {"name", "width", "points"}, "lane");
        Lane lane;
        read_opt(*t, "name", lane.name);
        read_opt(*t, "width", lane.width);
        lane.centerline = read_points(t->get("points"), "lane '" + lane.name + "'");
        sc.lanes.push_back(std::move(lane));
    }

    const toml::array* spawns = root["spawns"].as_array();
    if (!spawns || spawns->empty()) throw ParseError("scenario: at least one [[spawns]] entry required");
    for (const auto& node : *spawns) {
        const toml::table* t = node.as_table();
        if (!t) throw ParseError("scenario: [[spawns]] entries must be tables");
        reject_unknown(*t, {"route", "offset", "speed"}, "spawn");
        Spawn sp;
        const toml::array* route = t->get_as<toml::array>("route");
        if (!route || route->empty()) throw ParseError("spawn: 'route' must list lane indices");
        for (const auto& r : *route) {
            auto id = r.value<std::int64_t>();
            if (!id) throw ParseError("spawn: route entries must be integers");
            sp.route.push_back(static_cast<int>(*id));
        }
        read_opt(*t, "offset", sp.offset);
        read_opt(*t, "speed", sp.speed);
        sc.spawns.push_back(std::move(sp));
    }
    sc.validate();
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

std::string_view builtin_scenario_text(std::string_view name) {
    if (name == "merge") return detail::kMergeToml;
    if (name == "weave") return detail::kWeaveToml;
    if (name == "loop") return detail::kLoopToml;
    throw InvalidParameter("unknown builtin scenario '" + std::string(name) + "'");
}

Scenario builtin_scenario(std::string_view name) { return parse_scenario(builtin_scenario_text(name)); }

std::vector<std::string> builtin_scenario_names() { return {"merge", "weave", "loop"}; }

}  // namespace tsc::sim
