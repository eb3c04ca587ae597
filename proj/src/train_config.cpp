#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "tsc/error.hpp"
#include "tsc/trainer.hpp"

namespace tsc::train {

std::string_view ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::RandomPriority: return "random_priority";
        case Ablation::NoStackelberg: return "no_stackelberg";
        case Ablation::NoTopK: return "no_topk";
    }
    return "full";
}

Ablation parse_ablation(std::string_view name) {
    for (Ablation a : kAllAblations)
        if (ablation_name(a) == name) return a;
    throw InvalidParameter("unknown ablation '" + std::string(name) +
                           "' (expected full, random_priority, no_stackelberg or no_topk)");
}

std::uint64_t derive_seed(std::uint64_t seed, Stream s) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(seed ^ mix(static_cast<std::uint64_t>(s) * 0x632be59bd9b4e019ULL));
}

void TrainConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw InvalidParameter(std::string("train config: ") + what);
    };
    need(iterations >= 0, "iterations must be >= 0");
    need(steps_per_iter >= 1, "steps_per_iter must be >= 1");
    need(batch_steps >= 1, "batch_steps must be >= 1");
    need(updates_per_iter >= 0, "updates_per_iter must be >= 0");
    need(learning_rate >= 0.0, "learning_rate must be >= 0");
    need(target_rho >= 0.0 && target_rho <= 1.0, "target_rho must lie in [0, 1]");
    need(grad_clip > 0.0, "grad_clip must be > 0");
    need(replay_capacity >= 0, "replay_capacity must be >= 0");
    need(optimizer == "sgd" || optimizer == "adam", "optimizer must be sgd or adam");
    need(eval_every >= 0 && eval_episodes >= 1 && checkpoint_every >= 0, "bad evaluation schedule");
    need(n_vehicles >= 0 && episode_len >= 0, "scenario overrides must be >= 0");
    need(net.action_dim == 2, "the simulator needs action_dim = 2");
    need(net.ego_features == sim::kEgoFeatures && net.neighbor_features == sim::kNeighborFeatures,
         "feature counts must match the simulator observation");
    net.validate();
    loss.validate();
    weave.validate();
    field.validate();
}

sim::Scenario TrainConfig::make_scenario() const {
    sim::Scenario sc = scenario_file.empty() ? sim::builtin_scenario(scenario) : sim::load_scenario(scenario_file);
    if (n_vehicles > 0) sc.n_vehicles = n_vehicles;
    if (episode_len > 0) sc.episode_len = episode_len;
    sc.validate();
    return sc;
}

net::NetConfig TrainConfig::effective_net() const {
    net::NetConfig c = net;
    c.stackelberg = ablation != Ablation::NoStackelberg;
    c.random_priority = ablation == Ablation::RandomPriority;
    if (ablation == Ablation::NoTopK) c.K = c.M;
    return c;
}

namespace {

void reject_unknown(const toml::table& t, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [k, v] : t) {
        if (!allowed.count(std::string(k.str()))) {
            std::ostringstream msg;
            msg << "train config: line " << v.source().begin.line << ": unknown key '"
                << (where.empty() ? "" : where + ".") << k.str() << "'";
            throw ParseError(msg.str());
        }
    }
}

std::string line_of(const toml::node& n) { return "line " + std::to_string(n.source().begin.line); }

void get(const toml::table& t, const char* key, int& out) {
    if (const toml::node* n = t.get(key)) {
        auto v = n->value_exact<std::int64_t>();
        if (!v) throw ParseError("train config: " + line_of(*n) + ": '" + key + "' must be an integer");
        out = static_cast<int>(*v);
    }
}
void get(const toml::table& t, const char* key, double& out) {
    if (const toml::node* n = t.get(key)) {
        auto v = n->value<double>();
        if (!v) throw ParseError("train config: " + line_of(*n) + ": '" + key + "' must be a number");
        out = *v;
    }
}
void get(const toml::table& t, const char* key, bool& out) {
    if (const toml::node* n = t.get(key)) {
        auto v = n->value_exact<bool>();
        if (!v) throw ParseError("train config: " + line_of(*n) + ": '" + key + "' must be a boolean");
        out = *v;
    }
}
void get(const toml::table& t, const char* key, std::string& out) {
    if (const toml::node* n = t.get(key)) {
        auto v = n->value_exact<std::string>();
        if (!v) throw ParseError("train config: " + line_of(*n) + ": '" + key + "' must be a string");
        out = *v;
    }
}

const toml::table* section(const toml::table& root, const char* name) {
    const toml::node* n = root.get(name);
    if (!n) return nullptr;
    if (!n->is_table()) throw ParseError(std::string("train config: '") + name + "' must be a table");
    return n->as_table();
}

}  // namespace

TrainConfig parse_train_config(std::string_view text) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "train config: line " << e.source().begin.line << ": " << e.description();
        throw ParseError(msg.str());
    }
    reject_unknown(root, {"schema_version", "seed", "ablation", "scenario", "train", "net", "loss", "labels", "reward"},
                   "");
    int version = -1;
    get(root, "schema_version", version);
    if (version != kConfigSchemaVersion)
        throw ParseError("train config: schema_version must be " + std::to_string(kConfigSchemaVersion));

    TrainConfig c;
    if (const toml::node* n = root.get("seed")) {
        auto v = n->value_exact<std::int64_t>();
        if (!v || *v < 0) throw ParseError("train config: " + line_of(*n) + ": 'seed' must be a nonnegative integer");
        c.seed = static_cast<std::uint64_t>(*v);
    }
    std::string ab = "full";
    get(root, "ablation", ab);
    try {
        c.ablation = parse_ablation(ab);
    } catch (const InvalidParameter& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }

    if (const toml::table* t = section(root, "scenario")) {
        reject_unknown(*t, {"name", "file", "n_vehicles", "episode_len"}, "scenario");
        get(*t, "name", c.scenario);
        get(*t, "file", c.scenario_file);
        get(*t, "n_vehicles", c.n_vehicles);
        get(*t, "episode_len", c.episode_len);
    }
    if (const toml::table* t = section(root, "train")) {
        reject_unknown(*t,
                       {"iterations", "steps_per_iter", "batch_steps", "updates_per_iter", "learning_rate",
                        "target_rho", "grad_clip", "replay_capacity", "optimizer", "normalize_advantage", "eval_every",
                        "eval_episodes", "checkpoint_every"},
                       "train");
        get(*t, "iterations", c.iterations);
        get(*t, "steps_per_iter", c.steps_per_iter);
        get(*t, "batch_steps", c.batch_steps);
        get(*t, "updates_per_iter", c.updates_per_iter);
        get(*t, "learning_rate", c.learning_rate);
        get(*t, "target_rho", c.target_rho);
        get(*t, "grad_clip", c.grad_clip);
        get(*t, "replay_capacity", c.replay_capacity);
        get(*t, "optimizer", c.optimizer);
        get(*t, "normalize_advantage", c.normalize_advantage);
        get(*t, "eval_every", c.eval_every);
        get(*t, "eval_episodes", c.eval_episodes);
        get(*t, "checkpoint_every", c.checkpoint_every);
    }
    if (const toml::table* t = section(root, "net")) {
        reject_unknown(*t, {"d_e", "d_n", "d_t", "d_c", "d_u", "M", "K", "delta_p", "init_std", "hidden"}, "net");
        get(*t, "d_e", c.net.d_e);
        get(*t, "d_n", c.net.d_n);
        get(*t, "d_t", c.net.d_t);
        get(*t, "d_c", c.net.d_c);
        get(*t, "d_u", c.net.d_u);
        get(*t, "M", c.net.M);
        get(*t, "K", c.net.K);
        get(*t, "delta_p", c.net.delta_p);
        get(*t, "init_std", c.net.init_std);
        if (const toml::table* h = section(*t, "hidden")) {
            reject_unknown(*h, {"ego_enc", "nbr_enc", "topo_dec", "node_head", "ego_dec", "policy", "predict", "value"},
                           "net.hidden");
            get(*h, "ego_enc", c.net.hidden.ego_enc);
            get(*h, "nbr_enc", c.net.hidden.nbr_enc);
            get(*h, "topo_dec", c.net.hidden.topo_dec);
            get(*h, "node_head", c.net.hidden.node_head);
            get(*h, "ego_dec", c.net.hidden.ego_dec);
            get(*h, "policy", c.net.hidden.policy);
            get(*h, "predict", c.net.hidden.predict);
            get(*h, "value", c.net.hidden.value);
        }
    }
    if (const toml::table* t = section(root, "loss")) {
        reject_unknown(*t, {"lambda_V", "lambda_topo", "lambda_lead", "lambda_node", "lambda_cons", "gamma"}, "loss");
        get(*t, "lambda_V", c.loss.lambda_V);
        get(*t, "lambda_topo", c.loss.lambda_topo);
        get(*t, "lambda_lead", c.loss.lambda_lead);
        get(*t, "lambda_node", c.loss.lambda_node);
        get(*t, "lambda_cons", c.loss.lambda_cons);
        get(*t, "gamma", c.loss.gamma);
    }
    if (const toml::table* t = section(root, "labels")) {
        reject_unknown(*t, {"epsilon", "tau", "horizon", "alpha", "tau_s", "interaction_radius", "max_cycle_len"},
                       "labels");
        get(*t, "epsilon", c.weave.epsilon);
        get(*t, "tau", c.weave.tau);
        get(*t, "horizon", c.weave.horizon);
        get(*t, "alpha", c.field.alpha);
        get(*t, "tau_s", c.field.tau_s);
        get(*t, "interaction_radius", c.field.interaction_radius);
        get(*t, "max_cycle_len", c.field.max_cycle_len);
    }
    if (const toml::table* t = section(root, "reward")) {
        reject_unknown(*t, {"progress", "collision", "map", "smooth"}, "reward");
        get(*t, "progress", c.reward.progress);
        get(*t, "collision", c.reward.collision);
        get(*t, "map", c.reward.map);
        get(*t, "smooth", c.reward.smooth);
    }
    c.loss.tau_s = c.field.tau_s;
    c.field.max_neighbors = c.net.M;
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

namespace {

std::string num(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, p);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch;
    }
    return out + "\"";
}

}  // namespace

std::string to_toml(const TrainConfig& c) {
    std::ostringstream o;
    o << "schema_version = " << kConfigSchemaVersion << "\n"
      << "seed = " << c.seed << "\n"
      << "ablation = " << quoted(std::string(ablation_name(c.ablation))) << "\n\n"
      << "[scenario]\n"
      << "name = " << quoted(c.scenario) << "\n";
    if (!c.scenario_file.empty()) o << "file = " << quoted(c.scenario_file) << "\n";
    o << "n_vehicles = " << c.n_vehicles << "\n"
      << "episode_len = " << c.episode_len << "\n\n"
      << "[train]\n"
      << "iterations = " << c.iterations << "\n"
      << "steps_per_iter = " << c.steps_per_iter << "\n"
      << "batch_steps = " << c.batch_steps << "\n"
      << "updates_per_iter = " << c.updates_per_iter << "\n"
      << "learning_rate = " << num(c.learning_rate) << "\n"
      << "target_rho = " << num(c.target_rho) << "\n"
      << "grad_clip = " << num(c.grad_clip) << "\n"
      << "replay_capacity = " << c.replay_capacity << "\n"
      << "optimizer = " << quoted(c.optimizer) << "\n"
      << "normalize_advantage = " << (c.normalize_advantage ? "true" : "false") << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "eval_episodes = " << c.eval_episodes << "\n"
      << "checkpoint_every = " << c.checkpoint_every << "\n\n"
      << "[net]\n"
      << "d_e = " << c.net.d_e << "\nd_n = " << c.net.d_n << "\nd_t = " << c.net.d_t << "\nd_c = " << c.net.d_c
      << "\nd_u = " << c.net.d_u << "\nM = " << c.net.M << "\nK = " << c.net.K << "\n"
      << "delta_p = " << num(c.net.delta_p) << "\n"
      << "init_std = " << num(c.net.init_std) << "\n\n"
      << "[net.hidden]\n"
      << "ego_enc = " << c.net.hidden.ego_enc << "\nnbr_enc = " << c.net.hidden.nbr_enc
      << "\ntopo_dec = " << c.net.hidden.topo_dec << "\nnode_head = " << c.net.hidden.node_head
      << "\nego_dec = " << c.net.hidden.ego_dec << "\npolicy = " << c.net.hidden.policy
      << "\npredict = " << c.net.hidden.predict << "\nvalue = " << c.net.hidden.value << "\n\n"
      << "[loss]\n"
      << "lambda_V = " << num(c.loss.lambda_V) << "\n"
      << "lambda_topo = " << num(c.loss.lambda_topo) << "\n"
      << "lambda_lead = " << num(c.loss.lambda_lead) << "\n"
      << "lambda_node = " << num(c.loss.lambda_node) << "\n"
      << "lambda_cons = " << num(c.loss.lambda_cons) << "\n"
      << "gamma = " << num(c.loss.gamma) << "\n\n"
      << "[labels]\n"
      << "epsilon = " << num(c.weave.epsilon) << "\n"
      << "tau = " << num(c.weave.tau) << "\n"
      << "horizon = " << c.weave.horizon << "\n"
      << "alpha = " << num(c.field.alpha) << "\n"
      << "tau_s = " << num(c.field.tau_s) << "\n"
      << "interaction_radius = " << num(c.field.interaction_radius) << "\n"
      << "max_cycle_len = " << c.field.max_cycle_len << "\n\n"
      << "[reward]\n"
      << "progress = " << num(c.reward.progress) << "\n"
      << "collision = " << num(c.reward.collision) << "\n"
      << "map = " << num(c.reward.map) << "\n"
      << "smooth = " << num(c.reward.smooth) << "\n";
    return o.str();
}

}  // namespace tsc::train
