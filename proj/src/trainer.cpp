#include "tsc/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tsc/error.hpp"

namespace tsc::train {

namespace {

std::size_t sz(int n) { return static_cast<std::size_t>(n); }

std::vector<double> uniform_priorities(std::mt19937_64& rng, int M) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(sz(M));
    for (auto& x : p) x = u(rng);
    return p;
}

net::NetInput agent_input(const sim::Observation& obs, const net::NetConfig& c, std::mt19937_64& priority_rng) {
    net::NetInput in = net::make_input(obs);
    if (c.random_priority) in.priority_override = uniform_priorities(priority_rng, c.M);
    return in;
}

}  // namespace

Collector::Collector(const sim::Scenario& sc, std::uint64_t seed)
    : env(sc, derive_seed(seed, Stream::Env)),
      action_rng(derive_seed(seed, Stream::Actions)),
      priority_rng(derive_seed(seed, Stream::Priority)) {}

std::vector<net::StepGroup> collect(Collector& col, const net::ParamStore& params, const TrainConfig& cfg,
                                    int n_steps, CollectStats* stats) {
    const net::NetConfig& nc = params.config();
    const int M = nc.M;
    const int A = nc.action_dim;
    if (A != 2) throw InvalidParameter("collect: the simulator needs action_dim = 2");
    const sim::Scenario& sc = col.env.scenario();
    const int N = col.env.n_agents();

    std::vector<net::StepGroup> groups;
    groups.reserve(sz(std::max(n_steps, 0)));
    // Ground truth for labels: pose and identity segment of every agent at
    // every step boundary of the chunk.
    std::vector<std::vector<topo::Pose2>> poses;
    std::vector<std::vector<long>> segment;
    auto record = [&]() {
        std::vector<topo::Pose2> p;
        std::vector<long> s;
        for (const auto& v : col.env.state().vehicles) {
            p.push_back(v.pose);
            s.push_back(col.episodes * 1000003L + v.respawns);
        }
        poses.push_back(std::move(p));
        segment.push_back(std::move(s));
    };

    std::vector<net::NetInput> current(sz(N));
    std::vector<std::vector<int>> ids(sz(N));
    for (int i = 0; i < N; ++i) {
        const auto obs = sim::observe(col.env.state(), i, col.env.world(), M);
        current[sz(i)] = agent_input(obs, nc, col.priority_rng);
        ids[sz(i)] = obs.neighbor_ids;
    }

    for (int step = 0; step < n_steps; ++step) {
        record();
        net::StepGroup g;
        g.t = col.steps;
        std::vector<sim::Command> cmds;
        for (int i = 0; i < N; ++i) {
            net::Sample s;
            s.agent = i;
            s.t = col.steps;
            s.input = std::move(current[sz(i)]);
            s.neighbor_ids = ids[sz(i)];
            const net::Forward f = net::forward(params, s.input);
            const net::PolicyOutput pol = net::sample_policy(f, col.action_rng);
            s.raw_action = pol.raw;
            s.action = pol.action;
            s.log_prob = pol.log_prob;
            cmds.push_back({pol.action[0], pol.action[1]});
            g.samples.push_back(std::move(s));
        }
        for (auto& s : g.samples) {
            s.realized.assign(sz(M * A), 0.0);
            for (int k = 0; k < M; ++k) {
                const int j = s.neighbor_ids[sz(k)];
                if (j < 0) continue;
                std::copy_n(g.samples[sz(j)].action.begin(), A, s.realized.begin() + k * A);
            }
        }

        const sim::JointState prev = col.env.state();
        const auto events = col.env.advance(cmds);
        ++col.steps;
        const bool done = col.env.episode_done();
        for (int i = 0; i < N; ++i) {
            auto& s = g.samples[sz(i)];
            s.reward = sim::reward(prev.vehicles[sz(i)], col.env.state().vehicles[sz(i)], events[sz(i)], cfg.reward, sc);
            s.terminal = done;
            if (stats) {
                stats->reward_sum += s.reward;
                stats->aa_events += events[sz(i)].agent_agent;
                stats->am_events += events[sz(i)].agent_map;
            }
            const auto obs = sim::observe(col.env.state(), i, col.env.world(), M);
            s.next_input = agent_input(obs, nc, col.priority_rng);
        }
        if (done) {
            col.env.reset();
            ++col.episodes;
            if (stats) ++stats->episodes_finished;
        }
        for (int i = 0; i < N; ++i) {
            if (done) {
                const auto obs = sim::observe(col.env.state(), i, col.env.world(), M);
                current[sz(i)] = agent_input(obs, nc, col.priority_rng);
                ids[sz(i)] = obs.neighbor_ids;
            } else {
                current[sz(i)] = g.samples[sz(i)].next_input;
                ids[sz(i)] = sim::observe(col.env.state(), i, col.env.world(), M).neighbor_ids;
            }
        }
        groups.push_back(std::move(g));
    }
    record();

    field::FieldParams fp = cfg.field;
    fp.max_neighbors = M;
    const int H = cfg.weave.horizon;
    for (std::size_t t = 0; t < groups.size(); ++t) {
        std::vector<field::AgentSnapshot> snaps;
        for (int i = 0; i < N; ++i) {
            field::AgentSnapshot a;
            a.id = i;
            a.pose = poses[t][sz(i)];
            a.future.start_time = static_cast<long>(t);
            for (std::size_t u = t; u < poses.size() && u <= t + sz(H); ++u) {
                if (segment[u][sz(i)] != segment[t][sz(i)]) break;
                a.future.positions.push_back({poses[u][sz(i)].x, poses[u][sz(i)].y});
            }
            snaps.push_back(std::move(a));
        }
        const field::PriorityGraph graph = field::build_labels(snaps, cfg.weave, fp);
        for (auto& s : groups[t].samples) {
            s.p_label.assign(sz(M), 0.5);
            s.edge_mask.assign(sz(M), 0.0);
            for (int k = 0; k < M; ++k) {
                const int j = s.neighbor_ids[sz(k)];
                if (j < 0) continue;
                if (const field::DirectedEdge* e = graph.find_edge(j, s.agent)) {
                    s.p_label[sz(k)] = e->p;
                    s.edge_mask[sz(k)] = e->confidence > 0.0 ? 1.0 : 0.0;
                }
            }
            s.s_label = (*graph.scores)[graph.index_of(s.agent)];
        }
    }
    return groups;
}

// --- optimization -------------------------------------------------------------------------

double Optimizer::apply(std::vector<double>& params, std::vector<double>& grad) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw std::runtime_error("optimizer: non-finite gradient");
    if (norm > clip) {
        const double s = clip / norm;
        for (double& g : grad) g *= s;
    }
    if (kind == "adam") {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        if (m.size() != params.size()) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
        }
        ++t;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
            v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
            params[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
    } else {
        ++t;
        for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grad[k];
    }
    return norm;
}

IterationStats train_iteration(const std::vector<net::StepGroup>& buffer, net::ParamStore& params, Optimizer& opt,
                               const TrainConfig& cfg, std::mt19937_64& rng) {
    if (buffer.empty()) throw InvalidInput("train_iteration: empty buffer");
    IterationStats st;
    std::vector<double> grad(params.size());
    std::vector<net::StepGroup> batch;
    double n_total = 0.0;
    for (int u = 0; u < cfg.updates_per_iter; ++u) {
        batch.clear();
        for (int b = 0; b < cfg.batch_steps; ++b) batch.push_back(buffer[rng() % buffer.size()]);
        net::Targets targets = net::compute_targets(params, batch, cfg.loss);
        if (cfg.normalize_advantage && targets.advantage.size() > 1) {
            double mean = 0.0, var = 0.0;
            for (double a : targets.advantage) mean += a;
            mean /= static_cast<double>(targets.advantage.size());
            for (double a : targets.advantage) var += (a - mean) * (a - mean);
            const double sd = std::sqrt(var / static_cast<double>(targets.advantage.size()));
            for (double& a : targets.advantage) a = (a - mean) / (sd + 1e-8);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        const net::LossTerms L = net::total_loss(params, batch, targets, cfg.loss, grad);
        if (!std::isfinite(L.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at update " << u << ": policy=" << L.policy << " value=" << L.value
                << " edge=" << L.edge << " node=" << L.node << " cons=" << L.cons << " lead=" << L.lead;
            throw std::runtime_error(msg.str());
        }
        const double n = static_cast<double>(L.samples);
        for (double& g : grad) g /= n;
        st.grad_norm += opt.apply(params.values(), grad);
        params.soft_update_target(cfg.target_rho);
        st.loss.total += L.total;
        st.loss.policy += L.policy;
        st.loss.value += L.value;
        st.loss.topo += L.topo;
        st.loss.edge += L.edge;
        st.loss.node += L.node;
        st.loss.cons += L.cons;
        st.loss.lead += L.lead;
        st.loss.samples += L.samples;
        n_total += n;
    }
    if (n_total > 0) {
        for (double* x : {&st.loss.total, &st.loss.policy, &st.loss.value, &st.loss.topo, &st.loss.edge,
                          &st.loss.node, &st.loss.cons, &st.loss.lead})
            *x /= n_total;
        st.grad_norm /= cfg.updates_per_iter;
    }
    return st;
}

// --- evaluation ---------------------------------------------------------------------------

EvalResult evaluate(const net::ParamStore& params, const sim::Scenario& scenario, int n_episodes, std::uint64_t seed,
                    bool keep_logs) {
    const net::NetConfig& nc = params.config();
    if (nc.ego_features != sim::kEgoFeatures || nc.neighbor_features != sim::kNeighborFeatures || nc.action_dim != 2)
        throw InvalidInput("evaluate: network dimensions do not match the simulator observation/action");
    if (n_episodes < 1) throw InvalidParameter("evaluate: need at least one episode");
    sim::Simulator env(scenario, derive_seed(seed, Stream::Env));
    std::mt19937_64 priority_rng(derive_seed(seed, Stream::Priority));
    EvalResult res;
    const int N = env.n_agents();
    for (int e = 0; e < n_episodes; ++e) {
        if (e > 0) env.reset();
        sim::EpisodeLog log;
        while (!env.episode_done()) {
            std::vector<sim::Command> cmds;
            for (int i = 0; i < N; ++i) {
                const auto obs = sim::observe(env.state(), i, env.world(), nc.M);
                const net::Forward f = net::forward(params, agent_input(obs, nc, priority_rng));
                const auto pol = net::deterministic_policy(f);
                cmds.push_back({pol.action[0], pol.action[1]});
            }
            const auto events = env.advance(cmds);
            log.append(env.state(), events);
        }
        res.episodes.push_back(sim::compute_metrics(log, scenario.v_max));
        if (keep_logs) res.logs.push_back(std::move(log));
    }
    res.mean = sim::mean_metrics(res.episodes);
    return res;
}

// --- driver -----------------------------------------------------------------------------------

namespace {

net::ParamStore initial_params(const TrainConfig& cfg) {
    cfg.validate();
    net::ParamStore p(cfg.effective_net());
    std::mt19937_64 rng(derive_seed(cfg.seed, Stream::Init));
    p.initialize(rng);
    return p;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      scenario_(cfg_.make_scenario()),
      params_(initial_params(cfg_)),
      opt_{cfg_.optimizer, cfg_.learning_rate, cfg_.grad_clip, {}, {}, 0},
      collector_(scenario_, cfg_.seed),
      batch_rng_(derive_seed(cfg_.seed, Stream::Minibatch)) {}

IterationStats Trainer::step() {
    CollectStats cs;
    auto fresh = collect(collector_, params_, cfg_, cfg_.steps_per_iter, &cs);
    for (auto& g : fresh) buffer_.push_back(std::move(g));
    const auto cap = sz(cfg_.capacity());
    if (buffer_.size() > cap)
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(buffer_.size() - cap));
    IterationStats st = train_iteration(buffer_, params_, opt_, cfg_, batch_rng_);
    st.collect = cs;
    st.iteration = ++iteration_;
    if (cfg_.eval_every > 0 && iteration_ % cfg_.eval_every == 0)
        st.eval = evaluate(params_, scenario_, cfg_.eval_episodes, derive_seed(cfg_.seed, Stream::Eval)).mean;
    return st;
}

// --- resumable state ----------------------------------------------------------------------

namespace {

class Writer {
public:
    explicit Writer(std::ostream& o) : o_(o) {}
    template <typename T>
    void pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        o_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    template <typename T>
    void vec(const std::vector<T>& v) {
        pod<std::uint64_t>(v.size());
        if (!v.empty()) o_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        o_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    std::ostream& o_;
};

class Reader {
public:
    explicit Reader(std::istream& i) : i_(i) {}
    template <typename T>
    T pod() {
        T v{};
        if (!i_.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("trainer state: truncated file");
        return v;
    }
    template <typename T>
    std::vector<T> vec() {
        const auto n = pod<std::uint64_t>();
        if (n > (1ULL << 32)) throw ParseError("trainer state: corrupt length");
        std::vector<T> v(n);
        if (n && !i_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T))))
            throw ParseError("trainer state: truncated file");
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        if (n > (1ULL << 32)) throw ParseError("trainer state: corrupt length");
        std::string s(n, '\0');
        if (n && !i_.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError("trainer state: truncated file");
        return s;
    }

private:
    std::istream& i_;
};

void put_input(Writer& w, const net::NetInput& in) {
    w.vec(in.ego);
    w.vec(in.neighbors);
    w.vec(in.valid);
    w.vec(in.priority_override);
}

net::NetInput get_input(Reader& r) {
    net::NetInput in;
    in.ego = r.vec<double>();
    in.neighbors = r.vec<double>();
    in.valid = r.vec<double>();
    in.priority_override = r.vec<double>();
    return in;
}

std::string rng_text(const std::mt19937_64& g) {
    std::ostringstream o;
    o << g;
    return o.str();
}

void rng_restore(std::mt19937_64& g, const std::string& s) {
    std::istringstream i(s);
    i >> g;
    if (!i) throw ParseError("trainer state: bad rng state");
}

constexpr char kStateMagic[8] = {'T', 'S', 'C', 'S', 'T', 'A', 'T', '1'};

}  // namespace

void Trainer::save_state(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trainer state '" + path + "'");
    Writer w(out);
    out.write(kStateMagic, sizeof kStateMagic);
    w.str(to_toml(cfg_));
    w.pod<std::int32_t>(iteration_);
    w.vec(params_.values());
    w.vec(params_.target());
    w.str(opt_.kind);
    w.vec(opt_.m);
    w.vec(opt_.v);
    w.pod<std::int64_t>(opt_.t);
    w.str(rng_text(batch_rng_));
    w.str(rng_text(collector_.action_rng));
    w.str(rng_text(collector_.priority_rng));
    w.pod<std::int64_t>(collector_.episodes);
    w.pod<std::int64_t>(collector_.steps);

    auto& env = const_cast<sim::Simulator&>(collector_.env);
    w.str(rng_text(env.rng()));
    w.pod<std::int64_t>(env.episode_step());
    const auto& js = env.state();
    w.pod<std::int64_t>(js.t);
    w.pod<std::uint64_t>(js.spawn_cursor);
    w.pod<std::uint64_t>(js.vehicles.size());
    for (const auto& v : js.vehicles) {
        w.pod(v.pose.x);
        w.pod(v.pose.y);
        w.pod(v.pose.heading);
        w.pod(v.speed);
        w.pod(v.progress);
        w.pod(v.progress_delta);
        w.pod<std::int32_t>(v.spawn);
        w.pod(v.command.lon);
        w.pod(v.command.steer);
        w.pod<std::uint8_t>(v.alive);
        w.pod<std::uint8_t>(v.pending_respawn);
        w.pod<std::int32_t>(v.respawns);
    }

    w.pod<std::uint64_t>(buffer_.size());
    for (const auto& g : buffer_) {
        w.pod<std::int64_t>(g.t);
        w.pod<std::uint64_t>(g.samples.size());
        for (const auto& s : g.samples) {
            w.pod<std::int32_t>(s.agent);
            w.pod<std::int64_t>(s.t);
            put_input(w, s.input);
            w.vec(s.neighbor_ids);
            w.vec(s.raw_action);
            w.vec(s.action);
            w.pod(s.log_prob);
            w.pod(s.reward);
            w.pod<std::uint8_t>(s.terminal);
            put_input(w, s.next_input);
            w.vec(s.realized);
            w.vec(s.p_label);
            w.vec(s.edge_mask);
            w.pod(s.s_label);
        }
    }
    if (!out) throw std::runtime_error("trainer state: write failed");
}

void Trainer::load_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open trainer state '" + path + "'");
    char magic[sizeof kStateMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kStateMagic, sizeof magic) != 0)
        throw ParseError("trainer state: bad magic");
    Reader r(in);
    const TrainConfig saved = parse_train_config(r.str());
    if (to_toml(saved) != to_toml(cfg_)) {
        // Only the iteration budget may differ between the saved and the resumed run.
        TrainConfig a = saved, b = cfg_;
        a.iterations = b.iterations = 0;
        if (to_toml(a) != to_toml(b)) throw InvalidInput("trainer state: config differs from the running config");
    }
    iteration_ = r.pod<std::int32_t>();
    auto values = r.vec<double>();
    auto target = r.vec<double>();
    if (values.size() != params_.size() || target.size() != params_.target().size())
        throw ParseError("trainer state: parameter count mismatch");
    params_.values() = std::move(values);
    params_.target() = std::move(target);
    opt_.kind = r.str();
    opt_.m = r.vec<double>();
    opt_.v = r.vec<double>();
    opt_.t = r.pod<std::int64_t>();
    rng_restore(batch_rng_, r.str());
    rng_restore(collector_.action_rng, r.str());
    rng_restore(collector_.priority_rng, r.str());
    collector_.episodes = r.pod<std::int64_t>();
    collector_.steps = r.pod<std::int64_t>();

    rng_restore(collector_.env.rng(), r.str());
    const long episode_step = r.pod<std::int64_t>();
    sim::JointState js;
    js.t = r.pod<std::int64_t>();
    js.spawn_cursor = r.pod<std::uint64_t>();
    const auto nv = r.pod<std::uint64_t>();
    for (std::uint64_t k = 0; k < nv; ++k) {
        sim::VehicleState v;
        v.pose.x = r.pod<double>();
        v.pose.y = r.pod<double>();
        v.pose.heading = r.pod<double>();
        v.speed = r.pod<double>();
        v.progress = r.pod<double>();
        v.progress_delta = r.pod<double>();
        v.spawn = r.pod<std::int32_t>();
        v.command.lon = r.pod<double>();
        v.command.steer = r.pod<double>();
        v.alive = r.pod<std::uint8_t>() != 0;
        v.pending_respawn = r.pod<std::uint8_t>() != 0;
        v.respawns = r.pod<std::int32_t>();
        js.vehicles.push_back(v);
    }
    collector_.env.restore(std::move(js), episode_step);

    buffer_.clear();
    const auto ng = r.pod<std::uint64_t>();
    for (std::uint64_t k = 0; k < ng; ++k) {
        net::StepGroup g;
        g.t = r.pod<std::int64_t>();
        const auto ns = r.pod<std::uint64_t>();
        for (std::uint64_t q = 0; q < ns; ++q) {
            net::Sample s;
            s.agent = r.pod<std::int32_t>();
            s.t = r.pod<std::int64_t>();
            s.input = get_input(r);
            s.neighbor_ids = r.vec<int>();
            s.raw_action = r.vec<double>();
            s.action = r.vec<double>();
            s.log_prob = r.pod<double>();
            s.reward = r.pod<double>();
            s.terminal = r.pod<std::uint8_t>() != 0;
            s.next_input = get_input(r);
            s.realized = r.vec<double>();
            s.p_label = r.vec<double>();
            s.edge_mask = r.vec<double>();
            s.s_label = r.pod<double>();
            g.samples.push_back(std::move(s));
        }
        buffer_.push_back(std::move(g));
    }
}

// --- logs -------------------------------------------------------------------------------------

namespace {

void put_num(std::ostream& out, double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, p - buf);
}

}  // namespace

void write_log_header(std::ostream& out) {
    out << "iteration,samples,loss_total,loss_policy,loss_value,loss_topo,loss_edge,loss_node,loss_cons,loss_lead,"
           "grad_norm,collect_reward,collect_aa,collect_am,eval_CR,eval_CR_AA,eval_CR_AM,eval_AS,eval_SM\n";
}

void write_log_row(std::ostream& out, const IterationStats& s) {
    out << s.iteration << ',' << s.loss.samples;
    for (double v : {s.loss.total, s.loss.policy, s.loss.value, s.loss.topo, s.loss.edge, s.loss.node, s.loss.cons,
                     s.loss.lead, s.grad_norm, s.collect.reward_sum}) {
        out << ',';
        put_num(out, v);
    }
    out << ',' << s.collect.aa_events << ',' << s.collect.am_events;
    if (s.eval) {
        for (double v : {s.eval->cr, s.eval->cr_aa, s.eval->cr_am, s.eval->as, s.eval->sm}) {
            out << ',';
            put_num(out, v);
        }
    } else {
        out << ",,,,,";
    }
    out << '\n';
}

// --- ablations --------------------------------------------------------------------------------

std::vector<AblationRow> run_ablation(const TrainConfig& base, std::span<const Ablation> modes,
                                      std::span<const std::uint64_t> seeds, int eval_episodes, std::ostream* progress) {
    std::vector<AblationRow> rows;
    for (std::uint64_t seed : seeds) {
        for (Ablation mode : modes) {
            const auto t0 = std::chrono::steady_clock::now();
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.ablation = mode;
            cfg.eval_every = 0;
            Trainer tr(cfg);
            while (!tr.done()) tr.step();
            const auto res = evaluate(tr.params(), tr.scenario(), eval_episodes, derive_seed(seed, Stream::Eval));
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rows.push_back({mode, seed, res.mean, secs});
            if (progress)
                *progress << "seed " << seed << " " << ablation_name(mode) << ": CR_AA=" << res.mean.cr_aa
                          << " CR_AM=" << res.mean.cr_am << " AS=" << res.mean.as << " (" << secs << " s)" << std::endl;
        }
    }
    return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
    out << "seed,mode,CR,CR_AA,CR_AM,AS,SM,SM_LO,SM_LA,seconds\n";
    for (const auto& r : rows) {
        out << r.seed << ',' << ablation_name(r.mode);
        for (double v : {r.metrics.cr, r.metrics.cr_aa, r.metrics.cr_am, r.metrics.as, r.metrics.sm, r.metrics.sm_lo,
                         r.metrics.sm_la, r.seconds}) {
            out << ',';
            put_num(out, v);
        }
        out << '\n';
    }
}

}  // namespace tsc::train
