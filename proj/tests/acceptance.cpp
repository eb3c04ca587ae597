// Acceptance report: one PASS/FAIL line per criterion.
//
//   acceptance [--skip-trend] [--expect-red NAME]...
//
// Exit status is 0 when every failing criterion was named with --expect-red.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "net_fixtures.hpp"
#include "support.hpp"
#include "tsc/field.hpp"
#include "tsc/lemmalab.hpp"
#include "tsc/sim.hpp"
#include "tsc/topo.hpp"
#include "tsc/trainer.hpp"
#include "tsc/tscnet.hpp"

using namespace tsc;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kLemma1Slack = 1e-8;
constexpr double kLemma2Tol = 1e-8;
constexpr double kLemmaSeconds = 60.0;
constexpr double kFieldDeviation = 1e-8;
constexpr double kFieldGauge = 1e-9;
constexpr double kFieldProjGrad = 1e-7;
constexpr double kFdRelErr = 1e-4;
constexpr double kTrendSeconds = 1800.0;
constexpr int kTrendSeeds = 5;
constexpr int kTrendWinsNeeded = 4;
constexpr int kTrendEvalEpisodes = 32;

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(3) << v;
    return s.str();
}

// --- lemmas -------------------------------------------------------------------

Outcome lemma1() {
    const double gammas[] = {0.5, 0.9, 0.99};
    const auto t0 = Clock::now();
    const auto recs = lemmalab::run_bellman_suite(100, gammas, 2024);
    const double secs = seconds_since(t0);
    int held = 0;
    double worst_margin = -1e300;
    for (const auto& r : recs) {
        const double bound = r.report.eps_t / (1.0 - r.gamma) + kLemma1Slack;
        held += r.report.lhs <= bound;
        worst_margin = std::max(worst_margin, r.report.lhs - bound);
    }
    const bool ok = held == static_cast<int>(recs.size()) && recs.size() >= 300 && secs < kLemmaSeconds;
    return {ok, std::to_string(held) + "/" + std::to_string(recs.size()) + " instances within the bound, worst lhs-bound " +
                    fmt(worst_margin) + ", " + fmt(secs) + " s"};
}

Outcome lemma2() {
    const double gammas[] = {0.5, 0.9, 0.99};
    const auto t0 = Clock::now();
    const auto recs = lemmalab::run_pdl_suite(100, gammas, 2025);
    const double secs = seconds_since(t0);
    int held = 0, det = 0, det_exact = 0;
    double worst = 0;
    for (const auto& r : recs) {
        const double gap = std::fabs(r.report.lhs - r.report.rhs);
        worst = std::max(worst, gap);
        held += gap < kLemma2Tol;
        if (r.report.deterministic) {
            ++det;
            det_exact += r.report.rhs_state_form == r.report.rhs;
        }
    }
    const bool ok = held == static_cast<int>(recs.size()) && recs.size() >= 200 && det > 0 && det_exact == det &&
                    secs < kLemmaSeconds;
    return {ok, std::to_string(held) + "/" + std::to_string(recs.size()) + " triples, max |lhs-rhs| " + fmt(worst) +
                    ", deterministic state form exact " + std::to_string(det_exact) + "/" + std::to_string(det) + ", " +
                    fmt(secs) + " s"};
}

// --- score field ----------------------------------------------------------------

Outcome score_field() {
    std::mt19937_64 rng(3001);
    double dev = 0, gauge = 0, pg = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = testing::uniform_int(rng, 1, 12);
        const auto g = testing::random_graph(rng, n, testing::uniform(rng, 0.2, 1.0), testing::uniform(rng, 0.5, 2.0));
        const auto s = field::solve_score_field(g);
        const auto o = testing::lagrange_oracle(g);
        double sum = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            dev = std::max(dev, std::fabs(s[i] - o[i]));
            sum += s[i];
        }
        gauge = std::max(gauge, std::fabs(sum));
        const auto grad = field::score_field_gradient(g, s);
        double mean = 0;
        for (double x : grad) mean += x;
        mean /= static_cast<double>(grad.size());
        for (double x : grad) pg = std::max(pg, std::fabs(x - mean));
    }
    return {dev < kFieldDeviation && gauge < kFieldGauge && pg < kFieldProjGrad,
            "500 graphs: max deviation " + fmt(dev) + ", max |sum s| " + fmt(gauge) + ", max projected gradient " + fmt(pg)};
}

// --- priority algebra --------------------------------------------------------------

Outcome priority_algebra() {
    std::mt19937_64 rng(3002);
    long n = 0, bad_recip = 0, bad_anti = 0, bad_tie = 0, bad_mono = 0;
    auto check_pair = [&](double dij, double dji, double tau) {
        const auto pr = topo::pairwise_priority(dij, dji, tau);
        bad_recip += pr.p_ij + pr.p_ji != 1.0;
        const double a_ij = topo::preference_signal(pr.p_ij, pr.p_ji);
        const double a_ji = topo::preference_signal(pr.p_ji, pr.p_ij);
        bad_anti += a_ij != -a_ji;
        bad_tie += topo::pairwise_priority(dij, dij, tau).p_ij != 0.5;
        // p_{i<-j} falls as d_{i<-j} grows
        const double bigger = dij * (1.0 + testing::uniform(rng, 0.01, 1.0)) + 1e-3;
        const auto q = topo::pairwise_priority(bigger, dji, tau);
        if (q.p_ij > pr.p_ij) ++bad_mono;
        if (pr.p_ij > 1e-12 && pr.p_ij < 1 - 1e-12 && q.p_ij > 1e-12 && !(q.p_ij < pr.p_ij)) ++bad_mono;
        ++n;
    };
    for (int k = 0; k < 10000; ++k)
        check_pair(std::exp(testing::uniform(rng, -8, 4)), std::exp(testing::uniform(rng, -8, 4)),
                   std::exp(testing::uniform(rng, -2, 2)));
    // distances produced by the weaving pipeline on random trajectory pairs
    topo::WeaveParams w;
    for (int k = 0; k < 10000; ++k) {
        topo::Trajectory a, b;
        const auto pa = topo::Pose2::make(testing::uniform(rng, -5, 5), testing::uniform(rng, -5, 5), testing::uniform(rng, -3, 3));
        const auto pb = topo::Pose2::make(testing::uniform(rng, -5, 5), testing::uniform(rng, -5, 5), testing::uniform(rng, -3, 3));
        const double va = testing::uniform(rng, 0, 1.5), vb = testing::uniform(rng, 0, 1.5);
        for (int h = 0; h <= w.horizon; ++h) {
            a.positions.push_back({pa.x + va * h * std::cos(pa.heading), pa.y + va * h * std::sin(pa.heading)});
            b.positions.push_back({pb.x + vb * h * std::cos(pb.heading), pb.y + vb * h * std::sin(pb.heading)});
        }
        check_pair(topo::directed_weaving_distance(a, b, pa, w), topo::directed_weaving_distance(b, a, pb, w), w.tau);
    }
    const bool ok = bad_recip + bad_anti + bad_tie + bad_mono == 0 && n >= 10000;
    return {ok, std::to_string(n) + " inputs: reciprocity " + std::to_string(bad_recip) + ", antisymmetry " +
                    std::to_string(bad_anti) + ", tie " + std::to_string(bad_tie) + ", monotonicity " +
                    std::to_string(bad_mono) + " violations"};
}

// --- de-cycling ------------------------------------------------------------------

Outcome decycling() {
    std::mt19937_64 rng(3003);
    int cyclic = 0, unstable = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto g = testing::random_tournament(rng, testing::uniform_int(rng, 2, 8));
        const auto once = field::decycle(g, 3);
        cyclic += testing::has_short_cycle(once, 3);
        unstable += !testing::same_graph(field::decycle(once, 3), once);
    }
    return {cyclic == 0 && unstable == 0, "500 tournaments: " + std::to_string(cyclic) + " with a cycle of length <= 3, " +
                                             std::to_string(unstable) + " not idempotent"};
}

// --- gradients -------------------------------------------------------------------

Outcome gradients() {
    std::mt19937_64 rng(3004);
    std::normal_distribution<double> nd(0.0, 1.0);
    double worst_map = 0, worst_loss = 0;
    const int configs = 24;
    for (int trial = 0; trial < configs; ++trial) {
        const net::NetConfig c = testing::small_config(rng, trial);
        net::ParamStore p = testing::noisy_params(c, rng);

        // every differentiable output map of one forward pass
        const net::NetInput in = testing::random_input(c, rng, 1 + trial % c.M, trial % 3 == 1);
        const net::Forward f0 = net::forward(p, in);
        for (int family = 0; family < 5; ++family) {
            testing::OutputProbe probe;
            for (int k = 0; k < c.M; ++k) probe.w_logit.push_back(family == 0 ? nd(rng) : 0.0);
            probe.w_s_hat = family == 1 ? nd(rng) : 0.0;
            for (int a = 0; a < c.action_dim; ++a) {
                probe.w_mean.push_back(family == 2 ? nd(rng) : 0.0);
                probe.w_std.push_back(family == 3 ? nd(rng) : 0.0);
            }
            for (std::size_t k = 0; k < f0.a_hat.size(); ++k) probe.w_a_hat.push_back(family == 4 ? nd(rng) : 0.0);
            std::vector<double> grad(p.size(), 0.0);
            net::backward(p, f0, probe.grad(f0, c.action_dim), grad);
            worst_map = std::max(worst_map, testing::fd_check(p, [&] { return probe(net::forward(p, in)); }, grad).worst);
        }

        // every loss term, isolated through the weights; the value map is
        // checked through its loss with the leader input held fixed
        std::vector<net::StepGroup> groups;
        for (int t = 0; t < 2; ++t) groups.push_back(testing::random_group(c, rng, 3 + t, t, trial % 3 == 2));
        auto weights = [](double v, double topo, double lead, double node, double cons) {
            net::LossWeights w;
            w.lambda_V = v;
            w.lambda_topo = topo;
            w.lambda_lead = lead;
            w.lambda_node = node;
            w.lambda_cons = cons;
            w.gamma = 0.9;
            return w;
        };
        const std::pair<net::LossWeights, bool> terms[] = {
            {weights(0, 0, 0, 0, 0), false}, {weights(1, 0, 0, 0, 0), true}, {weights(0, 1, 0, 0, 0), true},
            {weights(0, 1, 0, 1, 0), true},  {weights(0, 1, 0, 0, 1), true}, {weights(0, 0, 1, 0, 0), true},
            {weights(0.7, 0.9, 1.3, 0.8, 1.1), false},
        };
        for (const auto& [w, zero_adv] : terms) {
            net::Targets t = net::compute_targets(p, groups, w);
            if (zero_adv) std::fill(t.advantage.begin(), t.advantage.end(), 0.0);
            std::vector<double> grad(p.size(), 0.0);
            (void)net::total_loss(p, groups, t, w, grad);
            worst_loss = std::max(
                worst_loss,
                testing::fd_check(p, [&] { return net::total_loss(p, groups, t, w, {}).total; }, grad).worst);
        }
    }
    return {worst_map < kFdRelErr && worst_loss < kFdRelErr,
            std::to_string(configs) + " configs: worst relative error " + fmt(worst_map) + " (output maps), " +
                fmt(worst_loss) + " (loss terms)"};
}

// --- metrics ---------------------------------------------------------------------

sim::EpisodeLog constant_log(int n, long T, double speed) {
    sim::EpisodeLog log;
    log.n_agents = n;
    for (long t = 0; t < T; ++t)
        for (int i = 0; i < n; ++i) log.records.push_back({double(t), double(i), 0.0, speed, 0.3, -0.2, false, false});
    return log;
}

Outcome metric_formulas() {
    std::vector<std::string> bad;
    const auto c = sim::compute_metrics(constant_log(3, 100, 4.0), 10.0);
    if (c.sm != 0.0) bad.push_back("SM constant=" + fmt(c.sm));
    const auto v = sim::compute_metrics(constant_log(2, 50, 10.0), 10.0);
    if (std::fabs(v.as - 100.0) > 1e-12) bad.push_back("AS=" + fmt(v.as));
    auto one = constant_log(1, 1200, 5.0);
    one.records[600].coll_aa = true;
    const auto e = sim::compute_metrics(one, 10.0);
    if (std::fabs(e.cr_aa - 100.0 / 1200.0) > 1e-15) bad.push_back("CR_AA=" + fmt(e.cr_aa));
    std::mt19937_64 rng(3005);
    for (int k = 0; k < 200; ++k) {
        auto log = constant_log(1 + static_cast<int>(rng() % 4), 2 + static_cast<long>(rng() % 100), 3.0);
        for (auto& r : log.records) {
            r.coll_aa = testing::uniform(rng, 0, 1) < 0.05;
            r.coll_am = testing::uniform(rng, 0, 1) < 0.05;
        }
        const auto m = sim::compute_metrics(log, 10.0);
        if (m.cr != m.cr_aa + m.cr_am) {
            bad.push_back("CR != CR_AA + CR_AM");
            break;
        }
    }
    std::string detail = "SM " + fmt(c.sm) + " at constant commands, AS " + fmt(v.as) + " at v_max, CR_AA " +
                         std::to_string(e.cr_aa) + " for one event in 1200 steps, CR = CR_AA + CR_AM on 200 logs";
    for (const auto& b : bad) detail += "; " + b;
    return {bad.empty(), detail};
}

// --- directional trend -------------------------------------------------------------

Outcome trend() {
    train::TrainConfig cfg = train::load_train_config(std::string(TSC_SOURCE_DIR) + "/configs/merge_toy.toml");
    std::vector<std::uint64_t> seeds;
    for (int s = 1; s <= kTrendSeeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    const auto t0 = Clock::now();
    const auto rows = train::run_ablation(cfg, train::kAllAblations, seeds, kTrendEvalEpisodes, &std::cerr);
    const double secs = seconds_since(t0);
    int wins = 0;
    std::ostringstream table;
    for (std::uint64_t s : seeds) {
        double full = 0;
        std::vector<double> others;
        table << " [seed " << s;
        for (const auto& r : rows)
            if (r.seed == s) {
                table << " " << train::ablation_name(r.mode) << "=" << fmt(r.metrics.cr_aa);
                if (r.mode == train::Ablation::Full) full = r.metrics.cr_aa;
                else others.push_back(r.metrics.cr_aa);
            }
        table << "]";
        bool win = !others.empty();
        for (double o : others) win = win && full < o;
        wins += win;
    }
    const bool ok = wins >= kTrendWinsNeeded && secs < kTrendSeconds;
    return {ok, "full strictly lowest CR_AA in " + std::to_string(wins) + "/" + std::to_string(kTrendSeeds) + " seeds, " +
                    fmt(secs) + " s;" + table.str()};
}

// --- decentralization ---------------------------------------------------------------

Outcome decentralization() {
    std::mt19937_64 rng(3006);
    std::normal_distribution<double> nd(0.0, 1.0);
    int trials = 0, leaks = 0;
    for (int trial = 0; trial < 200; ++trial) {
        net::NetConfig c = testing::small_config(rng, trial);
        net::ParamStore p = testing::noisy_params(c, rng);
        const int n_valid = 1 + trial % c.M;
        net::NetInput in = testing::random_input(c, rng, n_valid, trial % 2 == 0);
        const net::PolicyOutput before = net::deterministic_policy(net::forward(p, in));

        // features of empty slots never reach the policy
        net::NetInput padded = in;
        for (int k = n_valid; k < c.M; ++k)
            for (int d = 0; d < c.neighbor_features; ++d)
                padded.neighbors[static_cast<std::size_t>(k * c.neighbor_features + d)] = 5.0 * nd(rng);
        // neither do the predictor, the critic or the target head
        net::ParamStore q = p;
        for (const char* name : {"predict.0.W", "predict.0.b", "predict.1.W", "predict.1.b", "value.0.W", "value.0.b",
                                 "value.1.W", "value.1.b"})
            for (double& x : q.array(name)) x += nd(rng);
        for (double& x : q.target()) x += nd(rng);
        const net::PolicyOutput after = net::deterministic_policy(net::forward(q, padded));
        leaks += after.action != before.action || after.mean != before.mean || after.stddev != before.stddev;

        // at execution time an agent's action changes only with its own observation
        std::vector<net::NetInput> joint;
        for (int a = 0; a < 3; ++a) joint.push_back(testing::random_input(c, rng, c.M, trial % 2 == 0));
        const auto own = net::deterministic_policy(net::forward(p, joint[0]));
        for (int a = 1; a < 3; ++a)
            for (double& x : joint[static_cast<std::size_t>(a)].ego) x += nd(rng);
        leaks += net::deterministic_policy(net::forward(p, joint[0])).action != own.action;
        ++trials;
    }
    // end to end: agent 0's evaluation trajectory only depends on what it observes
    train::TrainConfig cfg;
    cfg.n_vehicles = 3;
    cfg.episode_len = 40;
    cfg.net.d_e = cfg.net.d_n = cfg.net.d_c = cfg.net.d_u = 8;
    cfg.net.d_t = 4;
    cfg.net.hidden = {8, 8, 8, 8, 8, 8, 8, 8};
    const sim::Scenario sc = cfg.make_scenario();
    net::ParamStore p(cfg.effective_net());
    std::mt19937_64 init(1);
    p.initialize(init);
    const auto ev = train::evaluate(p, sc, 1, 9, true);
    sim::Simulator env(sc, train::derive_seed(9, train::Stream::Env));
    int replay_mismatch = 0;
    for (long t = 0; t < ev.logs[0].steps(); ++t) {
        std::vector<sim::Command> cmds;
        for (int i = 0; i < env.n_agents(); ++i) {
            const auto obs = sim::observe(env.state(), i, env.world(), cfg.net.M);
            const auto pol = net::deterministic_policy(net::forward(p, net::make_input(obs)));
            cmds.push_back({pol.action[0], pol.action[1]});
        }
        env.advance(cmds);
        for (int i = 0; i < env.n_agents(); ++i)
            replay_mismatch += env.state().vehicles[static_cast<std::size_t>(i)].pose.x != ev.logs[0].at(t, i).x;
    }
    return {leaks == 0 && replay_mismatch == 0,
            std::to_string(trials) + " randomized perturbations, " + std::to_string(leaks) +
                " leaks; execution replay from local observations: " + std::to_string(replay_mismatch) + " mismatches"};
}

// --- determinism ------------------------------------------------------------------

Outcome determinism() {
    const train::TrainConfig cfg = train::load_train_config(std::string(TSC_SOURCE_DIR) + "/configs/merge_toy.toml");
    auto run = [&] {
        train::Trainer tr(cfg);
        std::ostringstream out;
        train::write_log_header(out);
        while (!tr.done()) train::write_log_row(out, tr.step());
        return out.str();
    };
    const auto t0 = Clock::now();
    const std::string a = run();
    const std::string b = run();
    const long lines = std::count(a.begin(), a.end(), '\n');
    return {a == b && lines == cfg.iterations + 1,
            std::string(a == b ? "byte-identical" : "different") + " logs over two runs of " +
                std::to_string(cfg.iterations) + " iterations (" + std::to_string(a.size()) + " bytes), " +
                fmt(seconds_since(t0)) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
    bool skip_trend = false;
    std::set<std::string> expect_red;
    for (int k = 1; k < argc; ++k) {
        if (!std::strcmp(argv[k], "--skip-trend")) skip_trend = true;
        else if (!std::strcmp(argv[k], "--expect-red") && k + 1 < argc) expect_red.insert(argv[++k]);
        else {
            std::cerr << "usage: acceptance [--skip-trend] [--expect-red NAME]...\n";
            return 2;
        }
    }

    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {"lemma1_bellman_bound", lemma1},
        {"lemma2_performance_difference", lemma2},
        {"score_field_solver", score_field},
        {"priority_algebra", priority_algebra},
        {"decycling", decycling},
        {"gradient_checks", gradients},
        {"metric_formulas", metric_formulas},
        {"directional_trend", trend},
        {"decentralization_contracts", decentralization},
        {"determinism", determinism},
    };
    int unexpected = 0;
    for (const auto& c : criteria) {
        if (skip_trend && std::string(c.name) == "directional_trend") {
            std::cout << "SKIP " << c.name << ": not run (--skip-trend)" << std::endl;
            continue;
        }
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const bool expected = expect_red.count(c.name) > 0;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail
                  << (!o.pass && expected ? " (known red)" : "") << std::endl;
        if (!o.pass && !expected) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
