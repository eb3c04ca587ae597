// tsc: labeling, training, evaluation, lemma checks and ablations.
//
// Exit codes: 0 success, 1 validation / verification failure, 2 usage error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsc/error.hpp"
#include "tsc/field.hpp"
#include "tsc/lemmalab.hpp"
#include "tsc/sim.hpp"
#include "tsc/topo.hpp"
#include "tsc/trainer.hpp"
#include "tsc/tscnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tsc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

/// Written at the start of a command and rewritten on completion.
class Manifest {
public:
    Manifest(std::string command, fs::path dir) : dir_(std::move(dir)) {
        doc_["command"] = std::move(command);
        doc_["code_version"] = TSC_CODE_VERSION;
        doc_["started_at"] = utc_now();
        doc_["artifacts"] = json::array();
    }
    void set(const std::string& key, json value) { doc_[key] = std::move(value); }
    fs::path artifact(const std::string& name) {
        const fs::path p = dir_ / name;
        doc_["artifacts"].push_back(p.string());
        return p;
    }
    void write() {
        fs::create_directories(dir_);
        auto out = open_out(dir_ / "manifest.json");
        out << doc_.dump(2) << '\n';
    }
    void finish(const std::string& status) {
        doc_["finished_at"] = utc_now();
        doc_["status"] = status;
        json missing = json::array();
        for (const auto& p : doc_["artifacts"])
            if (!fs::exists(p.get<std::string>())) missing.push_back(p);
        if (!missing.empty()) doc_["missing_artifacts"] = missing;
        write();
    }

private:
    fs::path dir_;
    json doc_;
};

struct Common {
    std::string out_dir;
    bool single_thread = false;
};

fs::path output_dir(const Common& c, const std::string& command) {
    if (!c.out_dir.empty()) return c.out_dir;
    const char* root = std::getenv("TSC_OUT_ROOT");
    return fs::path(root && *root ? root : "runs") / command;
}

std::vector<std::uint64_t> seed_list(const std::vector<long long>& raw) {
    std::vector<std::uint64_t> out;
    for (long long s : raw) {
        if (s < 0) throw InvalidParameter("seeds must be nonnegative");
        out.push_back(static_cast<std::uint64_t>(s));
    }
    return out;
}

// --- label ------------------------------------------------------------------

struct LabelArgs {
    std::string input;
    std::string config;
};

int cmd_label(const LabelArgs& a, const Common& common) {
    train::TrainConfig cfg;
    if (!a.config.empty()) cfg = train::load_train_config(a.config);
    cfg.field.max_neighbors = cfg.net.M;

    // Parse and label before touching the output directory so that a bad
    // input leaves nothing behind.
    std::ifstream in(a.input);
    if (!in) throw InvalidInput("cannot read trajectory file " + a.input);
    const auto rows = topo::read_trajectory_csv(in);
    if (rows.empty()) throw InvalidInput(a.input + ": no trajectory rows");
    const auto steps = field::label_trajectories(rows, cfg.weave, cfg.field);

    Manifest m("label", output_dir(common, "label"));
    m.set("inputs", {{"trajectories", a.input}, {"config", a.config}});
    m.set("config", train::to_toml(cfg));
    const auto edges = m.artifact("edges.csv");
    const auto nodes = m.artifact("nodes.csv");
    const auto summary = m.artifact("labels.json");
    m.write();
    {
        auto o = open_out(edges);
        field::write_edge_labels_csv(o, steps);
    }
    {
        auto o = open_out(nodes);
        field::write_node_labels_csv(o, steps);
    }
    {
        auto o = open_out(summary);
        field::write_labels_summary_json(o, steps, cfg.weave, cfg.field);
    }
    m.finish("ok");
    std::cout << "labelled " << steps.size() << " steps into " << edges.parent_path().string() << '\n';
    return kExitOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::optional<long long> seed;
    std::string ablation;
    std::string resume;
};

std::string checkpoint_name(int iteration) {
    std::ostringstream s;
    s << "checkpoint_" << std::setw(6) << std::setfill('0') << iteration << ".bin";
    return s.str();
}

std::string checkpoint_meta(const train::TrainConfig& cfg, int iteration) {
    json j;
    j["iteration"] = iteration;
    j["seed"] = cfg.seed;
    j["ablation"] = std::string(train::ablation_name(cfg.ablation));
    j["config"] = train::to_toml(cfg);
    return j.dump();
}

int cmd_train(const TrainArgs& a, const Common& common) {
    train::TrainConfig cfg = train::load_train_config(a.config);
    if (a.seed) cfg.seed = seed_list({*a.seed})[0];
    if (!a.ablation.empty()) cfg.ablation = train::parse_ablation(a.ablation);
    cfg.validate();

    Manifest m("train", output_dir(common, "train"));
    m.set("seed", cfg.seed);
    m.set("ablation", std::string(train::ablation_name(cfg.ablation)));
    m.set("single_thread", true);
    m.set("config", train::to_toml(cfg));
    if (!a.resume.empty()) m.set("resumed_from", a.resume);
    const auto snapshot = m.artifact("config.toml");
    const auto log_path = m.artifact("train_log.csv");
    m.write();
    {
        auto o = open_out(snapshot);
        o << train::to_toml(cfg);
    }

    train::Trainer tr(cfg);
    if (!a.resume.empty()) tr.load_state(a.resume);
    auto save = [&](int it) {
        net::save_checkpoint_file(m.artifact(checkpoint_name(it)).string(), tr.params(), checkpoint_meta(cfg, it));
    };
    if (tr.iteration() == 0) save(0);

    auto log = open_out(log_path);
    train::write_log_header(log);
    while (!tr.done()) {
        const auto st = tr.step();
        train::write_log_row(log, st);
        log.flush();
        if (cfg.checkpoint_every > 0 && st.iteration % cfg.checkpoint_every == 0) save(st.iteration);
        std::cerr << "iteration " << st.iteration << "/" << cfg.iterations << " loss " << st.loss.total << '\n';
    }
    log.close();
    if (tr.iteration() > 0) {
        if (cfg.checkpoint_every <= 0 || tr.iteration() % cfg.checkpoint_every != 0) save(tr.iteration());
        tr.save_state(m.artifact("trainer.state").string());
    }
    m.finish("ok");
    return kExitOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string scenario;
    int episodes = 4;
    long long seed = 0;
    int n_vehicles = 0;
    int episode_len = 0;
};

sim::Scenario resolve_scenario(const std::string& name_or_path) {
    if (fs::exists(name_or_path)) return sim::load_scenario(name_or_path);
    return sim::builtin_scenario(name_or_path);
}

int cmd_eval(const EvalArgs& a, const Common& common) {
    if (!fs::exists(a.checkpoint)) throw InvalidInput("checkpoint not found: " + a.checkpoint);
    std::string meta;
    const net::ParamStore params = net::load_checkpoint_file(a.checkpoint, &meta);

    std::string scenario_name = a.scenario;
    int n_vehicles = a.n_vehicles, episode_len = a.episode_len;
    if (scenario_name.empty()) {
        // fall back to the scenario the checkpoint was trained on
        const json j = json::parse(meta, nullptr, false);
        if (j.is_object() && j.contains("config")) {
            const auto cfg = train::parse_train_config(j["config"].get<std::string>());
            scenario_name = cfg.scenario_file.empty() ? cfg.scenario : cfg.scenario_file;
            if (n_vehicles == 0) n_vehicles = cfg.n_vehicles;
            if (episode_len == 0) episode_len = cfg.episode_len;
        } else {
            throw InvalidInput("checkpoint carries no scenario; pass --scenario");
        }
    }
    sim::Scenario sc = resolve_scenario(scenario_name);
    if (n_vehicles > 0) sc.n_vehicles = n_vehicles;
    if (episode_len > 0) sc.episode_len = episode_len;
    sc.validate();
    const net::NetConfig& nc = params.config();
    if (nc.ego_features != sim::kEgoFeatures || nc.neighbor_features != sim::kNeighborFeatures || nc.action_dim != 2)
        throw InvalidInput("checkpoint dimensions (ego " + std::to_string(nc.ego_features) + ", neighbor " +
                           std::to_string(nc.neighbor_features) + ", action " + std::to_string(nc.action_dim) +
                           ") do not match the scenario observation (ego " + std::to_string(sim::kEgoFeatures) +
                           ", neighbor " + std::to_string(sim::kNeighborFeatures) + ", action 2)");
    if (a.episodes < 1) throw InvalidParameter("--episodes must be at least 1");

    Manifest m("eval", output_dir(common, "eval"));
    m.set("seed", a.seed);
    m.set("inputs", {{"checkpoint", a.checkpoint}, {"scenario", scenario_name}});
    m.set("episodes", a.episodes);
    std::vector<fs::path> csvs;
    for (int e = 0; e < a.episodes; ++e) {
        std::ostringstream n;
        n << "episode_" << std::setw(3) << std::setfill('0') << e << ".csv";
        csvs.push_back(m.artifact(n.str()));
    }
    const auto metrics_path = m.artifact("metrics.json");
    m.write();

    const auto res = train::evaluate(params, sc, a.episodes, seed_list({a.seed})[0], true);
    for (int e = 0; e < a.episodes; ++e) {
        auto o = open_out(csvs[static_cast<std::size_t>(e)]);
        sim::write_episode_csv(o, res.logs[static_cast<std::size_t>(e)]);
    }
    {
        auto o = open_out(metrics_path);
        sim::write_metrics_json(o, res.mean);
    }
    m.finish("ok");
    sim::write_metrics_json(std::cout, res.mean);
    return kExitOk;
}

// --- verify-lemmas -----------------------------------------------------------

struct LemmaArgs {
    int instances = 100;
    std::vector<double> gammas{0.5, 0.9, 0.99};
    long long seed = 0;
    double rhs_scale = 1.0;  // test hook
};

int cmd_verify_lemmas(const LemmaArgs& a, const Common& common) {
    if (a.instances < 1) throw InvalidParameter("--instances must be at least 1");
    for (double g : a.gammas)
        if (!(g >= 0.0 && g < 1.0)) throw InvalidParameter("gammas must lie in [0, 1)");
    const auto seed = seed_list({a.seed})[0];

    Manifest m("verify-lemmas", output_dir(common, "verify-lemmas"));
    m.set("seed", seed);
    m.set("instances", a.instances);
    m.set("gammas", a.gammas);
    if (a.rhs_scale != 1.0) m.set("rhs_scale", a.rhs_scale);
    const auto bell_path = m.artifact("bellman.jsonl");
    const auto pdl_path = m.artifact("pdl.jsonl");
    const auto report_path = m.artifact("report.json");
    m.write();

    const auto t0 = std::chrono::steady_clock::now();
    const auto bell = lemmalab::run_bellman_suite(a.instances, a.gammas, seed, a.rhs_scale);
    const auto t1 = std::chrono::steady_clock::now();
    const auto pdl = lemmalab::run_pdl_suite(a.instances, a.gammas, seed);
    const auto t2 = std::chrono::steady_clock::now();
    {
        auto o = open_out(bell_path);
        lemmalab::write_bellman_jsonl(o, bell);
    }
    {
        auto o = open_out(pdl_path);
        lemmalab::write_pdl_jsonl(o, pdl);
    }

    json bad_bell = json::array(), bad_pdl = json::array();
    for (const auto& r : bell)
        if (!r.report.holds) bad_bell.push_back({{"seed", r.seed}, {"gamma", r.gamma}});
    for (const auto& r : pdl)
        if (!r.holds) bad_pdl.push_back({{"seed", r.seed}, {"gamma", r.gamma}});
    const bool ok = bad_bell.empty() && bad_pdl.empty();
    json report = {{"bellman", {{"records", bell.size()},
                                {"violations", bad_bell},
                                {"seconds", std::chrono::duration<double>(t1 - t0).count()}}},
                   {"pdl", {{"records", pdl.size()},
                            {"violations", bad_pdl},
                            {"seconds", std::chrono::duration<double>(t2 - t1).count()}}},
                   {"holds", ok}};
    {
        auto o = open_out(report_path);
        o << report.dump(2) << '\n';
    }
    m.finish(ok ? "ok" : "violations");
    std::cout << "bellman bound: " << bell.size() - bad_bell.size() << "/" << bell.size() << " hold\n"
              << "performance difference: " << pdl.size() - bad_pdl.size() << "/" << pdl.size() << " hold\n";
    if (!ok) {
        std::cerr << "violating instances (seed, gamma):\n";
        for (const auto& v : bad_bell) std::cerr << "  bellman " << v["seed"] << " " << v["gamma"] << '\n';
        for (const auto& v : bad_pdl) std::cerr << "  pdl " << v["seed"] << " " << v["gamma"] << '\n';
    }
    return ok ? kExitOk : kExitFailure;
}

// --- ablation -----------------------------------------------------------------

struct AblationArgs {
    std::string config;
    std::vector<long long> seeds{1, 2, 3, 4, 5};
    std::vector<std::string> modes{"full", "random_priority", "no_stackelberg", "no_topk"};
    int episodes = 32;
};

int cmd_ablation(const AblationArgs& a, const Common& common) {
    const train::TrainConfig cfg = train::load_train_config(a.config);
    std::vector<train::Ablation> modes;
    for (const auto& s : a.modes) modes.push_back(train::parse_ablation(s));
    const auto seeds = seed_list(a.seeds);
    if (a.episodes < 1) throw InvalidParameter("--episodes must be at least 1");

    Manifest m("ablation", output_dir(common, "ablation"));
    m.set("seeds", seeds);
    m.set("modes", a.modes);
    m.set("single_thread", true);
    m.set("config", train::to_toml(cfg));
    const auto csv_path = m.artifact("ablation.csv");
    m.write();

    const auto rows = train::run_ablation(cfg, modes, seeds, a.episodes, &std::cerr);
    {
        auto o = open_out(csv_path);
        train::write_ablation_csv(o, rows);
    }
    m.finish("ok");
    train::write_ablation_csv(std::cout, rows);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topology-aware Stackelberg coordination: labels, training, evaluation, verification"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--out-dir", common.out_dir, "output directory (default $TSC_OUT_ROOT/<command> or runs/<command>)");
    app.add_flag("--single-thread", common.single_thread, "deterministic single-threaded mode (always on)");

    LabelArgs la;
    auto* label = app.add_subcommand("label", "weaving-distance priority labels for a trajectory CSV");
    label->add_option("--input,input", la.input, "trajectory CSV: agent_id,t,x,y,heading")->required();
    label->add_option("--config", la.config, "train config supplying the [labels] parameters");

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "train the shared policy");
    trn->add_option("--config", ta.config, "TOML train config")->required();
    trn->add_option("--seed", ta.seed, "override the config seed");
    trn->add_option("--ablation", ta.ablation, "full | random_priority | no_stackelberg | no_topk")
        ->check(CLI::IsMember({"full", "random_priority", "no_stackelberg", "no_topk"}));
    trn->add_option("--resume", ta.resume, "trainer.state file of an earlier run with the same config");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "deterministic evaluation of a checkpoint");
    ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
    ev->add_option("--scenario", ea.scenario, "builtin scenario name or scenario TOML (default: from checkpoint)");
    ev->add_option("--episodes", ea.episodes, "episodes");
    ev->add_option("--seed", ea.seed, "evaluation seed");
    ev->add_option("--n-vehicles", ea.n_vehicles, "override the vehicle count");
    ev->add_option("--episode-len", ea.episode_len, "override the episode length");

    LemmaArgs lm;
    auto* ver = app.add_subcommand("verify-lemmas", "tabular checks of the Bellman error bound and the performance difference identity");
    ver->add_option("--instances", lm.instances, "random instances per gamma");
    ver->add_option("--gammas", lm.gammas, "discount factors")->delimiter(',');
    ver->add_option("--seed", lm.seed, "suite seed");
    ver->add_option("--rhs-scale", lm.rhs_scale)->group("");  // hidden harness hook

    AblationArgs ab;
    auto* abl = app.add_subcommand("ablation", "train and evaluate ablation modes on paired seeds");
    abl->add_option("--config", ab.config, "TOML train config")->required();
    abl->add_option("--seeds", ab.seeds, "seeds")->delimiter(',');
    abl->add_option("--ablation,--modes", ab.modes, "modes")
        ->delimiter(',')
        ->check(CLI::IsMember({"full", "random_priority", "no_stackelberg", "no_topk"}));
    abl->add_option("--episodes", ab.episodes, "evaluation episodes per run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*label) return cmd_label(la, common);
        if (*trn) return cmd_train(ta, common);
        if (*ev) return cmd_eval(ea, common);
        if (*ver) return cmd_verify_lemmas(lm, common);
        if (*abl) return cmd_ablation(ab, common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
