#include "tsc/lemmalab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

#include "tsc/error.hpp"

namespace tsc::lemmalab {

double TabularSEMDP::r_max() const {
    double m = 0.0;
    for (double x : reward) m = std::max(m, std::fabs(x));
    return m;
}

void TabularSEMDP::validate() const {
    if (n_states < 1 || n_follower < 1 || n_leader < 1) throw InvalidInput("mdp: empty dimension");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidInput("mdp: gamma must lie in [0, 1)");
    const std::size_t sa = static_cast<std::size_t>(n_states) * n_follower * n_leader;
    if (transition.size() != sa * n_states || reward.size() != sa)
        throw InvalidInput("mdp: table sizes do not match dimensions");
    for (std::size_t k = 0; k < sa; ++k) {
        double sum = 0.0;
        for (int s2 = 0; s2 < n_states; ++s2) {
            const double x = transition[k * n_states + s2];
            if (!(x >= 0.0)) throw InvalidInput("mdp: negative transition probability");
            sum += x;
        }
        if (std::fabs(sum - 1.0) > 1e-12) throw InvalidInput("mdp: transition row does not sum to 1");
    }
    for (double x : reward)
        if (!std::isfinite(x)) throw InvalidInput("mdp: non-finite reward");
}

template <typename Tag>
bool TabularPolicy<Tag>::is_deterministic() const {
    for (int s = 0; s < n_states; ++s) {
        int ones = 0;
        for (int a = 0; a < n_actions; ++a) {
            const double x = (*this)(s, a);
            if (x == 1.0) ++ones;
            else if (x != 0.0) return false;
        }
        if (ones != 1) return false;
    }
    return true;
}

template <typename Tag>
int TabularPolicy<Tag>::action(int s) const {
    for (int a = 0; a < n_actions; ++a)
        if ((*this)(s, a) == 1.0) return a;
    throw InvalidInput("policy: state has no deterministic action");
}

template <typename Tag>
void TabularPolicy<Tag>::validate() const {
    if (probs.size() != static_cast<std::size_t>(n_states) * n_actions)
        throw InvalidInput("policy: table size does not match dimensions");
    for (int s = 0; s < n_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < n_actions; ++a) {
            if (!((*this)(s, a) >= 0.0)) throw InvalidInput("policy: negative probability");
            sum += (*this)(s, a);
        }
        if (std::fabs(sum - 1.0) > 1e-12) throw InvalidInput("policy: row does not sum to 1");
    }
}

template struct TabularPolicy<LeaderTag>;
template struct TabularPolicy<FollowerTag>;

namespace {

void check_shapes(const TabularSEMDP& mdp, const FollowerPolicy& f, const LeaderPolicy& l) {
    if (f.n_states != mdp.n_states || f.n_actions != mdp.n_follower)
        throw InvalidInput("follower policy shape does not match the mdp");
    if (l.n_states != mdp.n_states || l.n_actions != mdp.n_leader)
        throw InvalidInput("leader policy shape does not match the mdp");
}

// Policy-induced chain: P_pi (row-major n x n) and r_pi.
void induced_chain(const TabularSEMDP& mdp, const FollowerPolicy& f, const LeaderPolicy& l,
                   Eigen::MatrixXd& p, Eigen::VectorXd& r) {
    const int n = mdp.n_states;
    p = Eigen::MatrixXd::Zero(n, n);
    r = Eigen::VectorXd::Zero(n);
    for (int s = 0; s < n; ++s)
        for (int af = 0; af < mdp.n_follower; ++af)
            for (int al = 0; al < mdp.n_leader; ++al) {
                const double w = f(s, af) * l(s, al);
                if (w == 0.0) continue;
                r(s) += w * mdp.r(s, af, al);
                for (int s2 = 0; s2 < n; ++s2) p(s, s2) += w * mdp.p(s, af, al, s2);
            }
}

}  // namespace

Values se_bellman_backup(std::span<const double> v, const TabularSEMDP& mdp,
                         const FollowerPolicy& follower, const LeaderPolicy& leader) {
    check_shapes(mdp, follower, leader);
    if (v.size() != static_cast<std::size_t>(mdp.n_states))
        throw InvalidInput("bellman backup: value vector has the wrong length");
    Values out(v.size(), 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        double acc = 0.0;
        for (int af = 0; af < mdp.n_follower; ++af) {
            const double pf = follower(s, af);
            if (pf == 0.0) continue;
            for (int al = 0; al < mdp.n_leader; ++al) {
                const double pl = leader(s, al);
                if (pl == 0.0) continue;
                double cont = 0.0;
                for (int s2 = 0; s2 < mdp.n_states; ++s2) cont += mdp.p(s, af, al, s2) * v[s2];
                acc += pf * pl * (mdp.r(s, af, al) + mdp.gamma * cont);
            }
        }
        out[s] = acc;
    }
    return out;
}

FixedPoint fixed_point(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                       const LeaderPolicy& leader, double tol) {
    if (!(tol > 0.0)) throw InvalidParameter("fixed_point: tol must be > 0");
    const double g = mdp.gamma;
    const double stop = g > 0.0 ? tol * (1.0 - g) / g : std::numeric_limits<double>::infinity();
    const double rate = g > 0.0 ? std::log(1.0 / g) : std::numeric_limits<double>::infinity();
    // The cap follows 10 log(1/tol) / log(1/gamma); the additive slack covers
    // the start-up distance ||V*|| which can reach V_max.
    const double base = 10.0 * std::log(1.0 / tol) / rate;
    const int cap = static_cast<int>(std::ceil(base + std::log(1.0 + mdp.v_max()) / rate)) + 10;

    FixedPoint fp;
    fp.v.assign(static_cast<std::size_t>(mdp.n_states), 0.0);
    for (int it = 0; it < cap; ++it) {
        Values next = se_bellman_backup(fp.v, mdp, follower, leader);
        double delta = 0.0;
        for (std::size_t s = 0; s < next.size(); ++s) delta = std::max(delta, std::fabs(next[s] - fp.v[s]));
        fp.v = std::move(next);
        fp.deltas.push_back(delta);
        fp.iterations = it + 1;
        if (delta < stop) return fp;
    }
    throw std::runtime_error("fixed_point: no convergence within the iteration cap");
}

Values exact_values(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                    const LeaderPolicy& leader) {
    check_shapes(mdp, follower, leader);
    Eigen::MatrixXd p;
    Eigen::VectorXd r;
    induced_chain(mdp, follower, leader, p, r);
    const int n = mdp.n_states;
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * p;
    const Eigen::VectorXd v = a.partialPivLu().solve(r);
    return Values(v.data(), v.data() + n);
}

std::vector<double> follower_q_values(const TabularSEMDP& mdp, const LeaderPolicy& leader,
                                      std::span<const double> v) {
    std::vector<double> q(static_cast<std::size_t>(mdp.n_states) * mdp.n_follower, 0.0);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int af = 0; af < mdp.n_follower; ++af) {
            double acc = 0.0;
            for (int al = 0; al < mdp.n_leader; ++al) {
                double cont = 0.0;
                for (int s2 = 0; s2 < mdp.n_states; ++s2) cont += mdp.p(s, af, al, s2) * v[s2];
                acc += leader(s, al) * (mdp.r(s, af, al) + mdp.gamma * cont);
            }
            q[static_cast<std::size_t>(s) * mdp.n_follower + af] = acc;
        }
    return q;
}

double operator_gap_bound(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                          const LeaderPolicy& leader, const LeaderPolicy& predicted) {
    check_shapes(mdp, follower, leader);
    if (predicted.n_states != mdp.n_states || predicted.n_actions != mdp.n_leader)
        throw InvalidInput("predicted leader policy shape does not match the mdp");
    const double vmax = mdp.v_max();
    double eps = 0.0;
    std::vector<double> mix(static_cast<std::size_t>(mdp.n_states));
    for (int s = 0; s < mdp.n_states; ++s) {
        double row = 0.0;
        for (int af = 0; af < mdp.n_follower; ++af) {
            double dr = 0.0;
            std::fill(mix.begin(), mix.end(), 0.0);
            for (int al = 0; al < mdp.n_leader; ++al) {
                const double d = leader(s, al) - predicted(s, al);
                dr += d * mdp.r(s, af, al);
                for (int s2 = 0; s2 < mdp.n_states; ++s2) mix[s2] += d * mdp.p(s, af, al, s2);
            }
            double l1 = 0.0;
            for (double x : mix) l1 += std::fabs(x);
            row += follower(s, af) * (std::fabs(dr) + mdp.gamma * vmax * l1);
        }
        eps = std::max(eps, row);
    }
    return eps;
}

BellmanReport verify_bellman_bound(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                                   const LeaderPolicy& leader, const LeaderPolicy& predicted,
                                   double tol, double rhs_scale) {
    // Residual 1e-13 keeps each fixed point within 1e-11 of its true value
    // even at gamma = 0.99, well below the comparison slack.
    const auto v_true = fixed_point(mdp, follower, leader, 1e-13).v;
    const auto v_pred = fixed_point(mdp, follower, predicted, 1e-13).v;
    BellmanReport rep;
    for (std::size_t s = 0; s < v_true.size(); ++s)
        rep.lhs = std::max(rep.lhs, std::fabs(v_true[s] - v_pred[s]));
    rep.eps_t = operator_gap_bound(mdp, follower, leader, predicted);
    rep.rhs = rhs_scale * rep.eps_t / (1.0 - mdp.gamma);
    rep.holds = rep.lhs <= rep.rhs + tol;
    return rep;
}

std::vector<double> visitation_distribution(const TabularSEMDP& mdp,
                                            const FollowerPolicy& follower,
                                            const LeaderPolicy& leader,
                                            std::span<const double> start) {
    check_shapes(mdp, follower, leader);
    const int n = mdp.n_states;
    if (start.size() != static_cast<std::size_t>(n)) throw InvalidInput("start distribution has the wrong length");
    double mass = 0.0;
    for (double x : start) mass += x;
    if (std::fabs(mass - 1.0) > 1e-12) throw InvalidInput("start distribution must sum to 1");
    Eigen::MatrixXd p;
    Eigen::VectorXd r;
    induced_chain(mdp, follower, leader, p, r);
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * p.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) throw std::runtime_error("visitation_distribution: singular system");
    const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(start.data(), n);
    const Eigen::VectorXd d = (1.0 - mdp.gamma) * lu.solve(b);
    return std::vector<double>(d.data(), d.data() + n);
}

PdlReport verify_pdl(const TabularSEMDP& mdp, const FollowerPolicy& pi,
                     const FollowerPolicy& pi_tilde, const LeaderPolicy& leader,
                     std::span<const double> start) {
    const auto v_pi = exact_values(mdp, pi, leader);
    const auto v_tilde = exact_values(mdp, pi_tilde, leader);
    PdlReport rep;
    for (int s = 0; s < mdp.n_states; ++s) rep.lhs += start[s] * (v_pi[s] - v_tilde[s]);

    const auto d = visitation_distribution(mdp, pi, leader, start);
    const auto q = follower_q_values(mdp, leader, v_tilde);
    const double scale = 1.0 / (1.0 - mdp.gamma);
    double acc = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
        double inner = 0.0;
        for (int a = 0; a < mdp.n_follower; ++a)
            inner += pi(s, a) * (q[static_cast<std::size_t>(s) * mdp.n_follower + a] - v_tilde[s]);
        acc += d[s] * inner;
    }
    rep.rhs = scale * acc;
    rep.gap = std::fabs(rep.lhs - rep.rhs);

    rep.deterministic = pi.is_deterministic();
    if (rep.deterministic) {
        double st = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            const int a = pi.action(s);
            // Same accumulation order as the action form with the zero-mass
            // terms dropped, so both forms round identically.
            double inner = 0.0;
            for (int b = 0; b < mdp.n_follower; ++b)
                if (b == a) inner += q[static_cast<std::size_t>(s) * mdp.n_follower + a] - v_tilde[s];
            st += d[s] * inner;
        }
        rep.rhs_state_form = scale * st;
    }
    return rep;
}

// --- random instances ---------------------------------------------------------

namespace {

std::vector<double> simplex_row(std::mt19937_64& rng, int n) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> x(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (auto& v : x) sum += (v = e(rng));
    for (auto& v : x) v /= sum;
    // Push the rounding residue into the largest entry.
    double resid = 1.0;
    for (double v : x) resid -= v;
    *std::max_element(x.begin(), x.end()) += resid;
    return x;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::vector<double> random_distribution(std::mt19937_64& rng, int n) { return simplex_row(rng, n); }

TabularSEMDP random_mdp(std::mt19937_64& rng, int n_states, int n_follower, int n_leader,
                        double gamma, double r_max) {
    TabularSEMDP m;
    m.n_states = n_states;
    m.n_follower = n_follower;
    m.n_leader = n_leader;
    m.gamma = gamma;
    std::uniform_real_distribution<double> u(-r_max, r_max);
    const int rows = n_states * n_follower * n_leader;
    for (int k = 0; k < rows; ++k) {
        const auto row = simplex_row(rng, n_states);
        m.transition.insert(m.transition.end(), row.begin(), row.end());
        m.reward.push_back(u(rng));
    }
    m.validate();
    return m;
}

template <typename Policy>
Policy random_policy(std::mt19937_64& rng, int n_states, int n_actions) {
    Policy p{n_states, n_actions, {}};
    for (int s = 0; s < n_states; ++s) {
        const auto row = simplex_row(rng, n_actions);
        p.probs.insert(p.probs.end(), row.begin(), row.end());
    }
    return p;
}

template <typename Policy>
Policy random_deterministic_policy(std::mt19937_64& rng, int n_states, int n_actions) {
    Policy p{n_states, n_actions, std::vector<double>(static_cast<std::size_t>(n_states) * n_actions, 0.0)};
    for (int s = 0; s < n_states; ++s) p.at(s, static_cast<int>(rng() % static_cast<std::uint64_t>(n_actions))) = 1.0;
    return p;
}

template LeaderPolicy random_policy<LeaderPolicy>(std::mt19937_64&, int, int);
template FollowerPolicy random_policy<FollowerPolicy>(std::mt19937_64&, int, int);
template LeaderPolicy random_deterministic_policy<LeaderPolicy>(std::mt19937_64&, int, int);
template FollowerPolicy random_deterministic_policy<FollowerPolicy>(std::mt19937_64&, int, int);

LeaderPolicy perturb_policy(std::mt19937_64& rng, const LeaderPolicy& base, double noise) {
    const auto other = random_policy<LeaderPolicy>(rng, base.n_states, base.n_actions);
    LeaderPolicy out = base;
    for (int s = 0; s < base.n_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < base.n_actions; ++a) {
            out.at(s, a) = (1.0 - noise) * base(s, a) + noise * other(s, a);
            sum += out(s, a);
        }
        for (int a = 0; a < base.n_actions; ++a) out.at(s, a) /= sum;
    }
    return out;
}

std::vector<BellmanRecord> run_bellman_suite(int n_instances, std::span<const double> gammas,
                                             std::uint64_t seed, double rhs_scale) {
    std::vector<BellmanRecord> out;
    for (std::size_t g = 0; g < gammas.size(); ++g) {
        for (int k = 0; k < n_instances; ++k) {
            const std::uint64_t s = splitmix64(seed ^ splitmix64(g * 1000003ULL + static_cast<std::uint64_t>(k)));
            std::mt19937_64 rng(s);
            const auto mdp = random_mdp(rng, 5, 3, 3, gammas[g]);
            const auto follower = random_policy<FollowerPolicy>(rng, 5, 3);
            const auto leader = random_policy<LeaderPolicy>(rng, 5, 3);
            const double noise = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            const auto predicted = perturb_policy(rng, leader, noise);
            out.push_back({s, gammas[g], verify_bellman_bound(mdp, follower, leader, predicted, 1e-8, rhs_scale)});
        }
    }
    return out;
}

std::vector<PdlRecord> run_pdl_suite(int n_instances, std::span<const double> gammas,
                                     std::uint64_t seed) {
    std::vector<PdlRecord> out;
    for (std::size_t g = 0; g < gammas.size(); ++g) {
        for (int k = 0; k < n_instances; ++k) {
            const std::uint64_t s = splitmix64(~seed ^ splitmix64(g * 1000003ULL + static_cast<std::uint64_t>(k)));
            std::mt19937_64 rng(s);
            const auto mdp = random_mdp(rng, 5, 3, 3, gammas[g]);
            const auto pi = (k % 2 == 0) ? random_deterministic_policy<FollowerPolicy>(rng, 5, 3)
                                         : random_policy<FollowerPolicy>(rng, 5, 3);
            const auto pi_tilde = random_policy<FollowerPolicy>(rng, 5, 3);
            const auto leader = random_policy<LeaderPolicy>(rng, 5, 3);
            const auto start = random_distribution(rng, 5);
            const auto rep = verify_pdl(mdp, pi, pi_tilde, leader, start);
            const bool ok = rep.gap < kPdlTolerance && (!rep.deterministic || rep.rhs_state_form == rep.rhs);
            out.push_back({s, gammas[g], rep, ok});
        }
    }
    return out;
}

void write_bellman_jsonl(std::ostream& out, std::span<const BellmanRecord> records) {
    for (const auto& r : records) {
        nlohmann::json j{{"lemma", "bellman_bound"}, {"seed", r.seed},         {"gamma", r.gamma},
                         {"lhs", r.report.lhs},      {"eps_t", r.report.eps_t}, {"rhs", r.report.rhs},
                         {"holds", r.report.holds}};
        out << j.dump() << '\n';
    }
}

void write_pdl_jsonl(std::ostream& out, std::span<const PdlRecord> records) {
    for (const auto& r : records) {
        nlohmann::json j{{"lemma", "performance_difference"},
                         {"seed", r.seed},
                         {"gamma", r.gamma},
                         {"lhs", r.report.lhs},
                         {"rhs", r.report.rhs},
                         {"gap", r.report.gap},
                         {"deterministic", r.report.deterministic},
                         {"holds", r.holds}};
        if (r.report.deterministic) j["rhs_state_form"] = r.report.rhs_state_form;
        out << j.dump() << '\n';
    }
}

}  // namespace tsc::lemmalab
