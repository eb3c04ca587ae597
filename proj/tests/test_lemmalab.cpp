#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "tsc/error.hpp"
#include "tsc/lemmalab.hpp"

using namespace tsc;
using namespace tsc::lemmalab;
using tsc::testing::uniform;

namespace {

double max_abs_diff(const Values& a, const Values& b) {
    double m = 0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::fabs(a[k] - b[k]));
    return m;
}

Values naive_backup(const Values& v, const TabularSEMDP& m, const FollowerPolicy& f, const LeaderPolicy& l) {
    Values out(static_cast<std::size_t>(m.n_states), 0.0);
    for (int s = 0; s < m.n_states; ++s)
        for (int af = 0; af < m.n_follower; ++af)
            for (int al = 0; al < m.n_leader; ++al) {
                double cont = 0;
                for (int s2 = 0; s2 < m.n_states; ++s2) cont += m.p(s, af, al, s2) * v[static_cast<std::size_t>(s2)];
                out[static_cast<std::size_t>(s)] += f(s, af) * l(s, al) * (m.r(s, af, al) + m.gamma * cont);
            }
    return out;
}

struct Instance {
    TabularSEMDP mdp;
    FollowerPolicy f;
    LeaderPolicy l;
};

Instance random_instance(std::mt19937_64& rng, int n, double gamma) {
    Instance in{random_mdp(rng, n, 3, 3, gamma), {}, {}};
    in.f = random_policy<FollowerPolicy>(rng, n, 3);
    in.l = random_policy<LeaderPolicy>(rng, n, 3);
    return in;
}

}  // namespace

TEST_CASE("random instances are valid") {
    std::mt19937_64 rng(31);
    const auto in = random_instance(rng, 5, 0.9);
    CHECK_NOTHROW(in.mdp.validate());
    CHECK_NOTHROW(in.f.validate());
    CHECK_NOTHROW(in.l.validate());
    TabularSEMDP bad = in.mdp;
    bad.transition[0] += 0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("backup: constant and myopic cases, naive loop oracle") {
    std::mt19937_64 rng(32);
    auto in = random_instance(rng, 4, 0.7);
    TabularSEMDP zero = in.mdp;
    std::fill(zero.reward.begin(), zero.reward.end(), 0.0);
    const Values c(4, 2.5);
    for (double x : se_bellman_backup(c, zero, in.f, in.l)) CHECK(x == doctest::Approx(0.7 * 2.5).epsilon(1e-14));

    TabularSEMDP myopic = in.mdp;
    myopic.gamma = 0.0;
    const Values v{1, -2, 3, 4};
    const auto b0 = se_bellman_backup(v, myopic, in.f, in.l);
    const auto b0n = naive_backup(Values(4, 0.0), myopic, in.f, in.l);
    CHECK(max_abs_diff(b0, b0n) < 1e-14);

    for (int trial = 0; trial < 50; ++trial) {
        auto r = random_instance(rng, 4, uniform(rng, 0.1, 0.99));
        Values x(4);
        for (auto& e : x) e = uniform(rng, -5, 5);
        CHECK(max_abs_diff(se_bellman_backup(x, r.mdp, r.f, r.l), naive_backup(x, r.mdp, r.f, r.l)) < 1e-12);
    }
}

TEST_CASE("backup is a gamma-contraction") {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 200; ++trial) {
        auto in = random_instance(rng, 5, uniform(rng, 0.1, 0.99));
        Values a(5), b(5);
        for (auto& e : a) e = uniform(rng, -10, 10);
        for (auto& e : b) e = uniform(rng, -10, 10);
        const double lhs = max_abs_diff(se_bellman_backup(a, in.mdp, in.f, in.l), se_bellman_backup(b, in.mdp, in.f, in.l));
        CHECK(lhs <= in.mdp.gamma * max_abs_diff(a, b) + 1e-12);
    }
}

TEST_CASE("fixed point: closed form, linear solve and contraction") {
    std::mt19937_64 rng(34);
    auto in = random_instance(rng, 5, 0.9);
    TabularSEMDP ones = in.mdp;
    std::fill(ones.reward.begin(), ones.reward.end(), 1.0);
    for (double x : fixed_point(ones, in.f, in.l).v) CHECK(std::fabs(x - 10.0) < 1e-8);

    const auto fp = fixed_point(in.mdp, in.f, in.l, 1e-10);
    CHECK(max_abs_diff(fp.v, exact_values(in.mdp, in.f, in.l)) < 1e-8);
    CHECK(max_abs_diff(se_bellman_backup(fp.v, in.mdp, in.f, in.l), fp.v) < 1e-10);
    double vmax = 0;
    for (double x : fp.v) vmax = std::max(vmax, std::fabs(x));
    CHECK(vmax <= in.mdp.v_max() + 1e-10);

    // iterate from zero and compare against V*
    const Values star = exact_values(in.mdp, in.f, in.l);
    Values v(5, 0.0);
    double prev = max_abs_diff(v, star);
    for (int k = 0; k < 50; ++k) {
        v = se_bellman_backup(v, in.mdp, in.f, in.l);
        const double now = max_abs_diff(v, star);
        CHECK(now <= in.mdp.gamma * prev + 1e-10);
        prev = now;
    }
}

TEST_CASE("operator gap bound") {
    std::mt19937_64 rng(35);
    auto in = random_instance(rng, 5, 0.9);
    CHECK(operator_gap_bound(in.mdp, in.f, in.l, in.l) == 0.0);

    // leader-irrelevant MDP
    TabularSEMDP flat = in.mdp;
    for (int s = 0; s < 5; ++s)
        for (int af = 0; af < 3; ++af)
            for (int al = 1; al < 3; ++al) {
                flat.reward[(static_cast<std::size_t>(s) * 3 + af) * 3 + al] = flat.r(s, af, 0);
                for (int s2 = 0; s2 < 5; ++s2)
                    flat.transition[((static_cast<std::size_t>(s) * 3 + af) * 3 + al) * 5 + s2] = flat.p(s, af, 0, s2);
            }
    const auto other = random_policy<LeaderPolicy>(rng, 5, 3);
    CHECK(operator_gap_bound(flat, in.f, in.l, other) < 1e-15);

    // the bound dominates the empirical sup over bounded V
    for (int trial = 0; trial < 20; ++trial) {
        auto r = random_instance(rng, 5, uniform(rng, 0.3, 0.99));
        const auto pred = perturb_policy(rng, r.l, uniform(rng, 0.05, 0.6));
        const double eps = operator_gap_bound(r.mdp, r.f, r.l, pred);
        const double vmax = r.mdp.v_max();
        double worst = 0;
        for (int k = 0; k < 1000; ++k) {
            Values v(5);
            for (auto& e : v) e = (k % 2) ? (uniform(rng, 0, 1) < 0.5 ? -vmax : vmax) : uniform(rng, -vmax, vmax);
            worst = std::max(worst, max_abs_diff(se_bellman_backup(v, r.mdp, r.f, r.l),
                                                 se_bellman_backup(v, r.mdp, r.f, pred)));
        }
        CHECK(worst <= eps + 1e-12);
    }
}

TEST_CASE("Bellman bound: identity, linearity in reward scale") {
    std::mt19937_64 rng(36);
    auto in = random_instance(rng, 5, 0.9);
    const auto same = verify_bellman_bound(in.mdp, in.f, in.l, in.l);
    CHECK(same.lhs < 1e-8);
    CHECK(same.holds);

    const auto pred = perturb_policy(rng, in.l, 0.3);
    const auto base = verify_bellman_bound(in.mdp, in.f, in.l, pred);
    TabularSEMDP scaled = in.mdp;
    for (auto& r : scaled.reward) r *= 3.0;
    const auto big = verify_bellman_bound(scaled, in.f, in.l, pred);
    CHECK(big.eps_t == doctest::Approx(3.0 * base.eps_t).epsilon(1e-12));
    CHECK(big.lhs == doctest::Approx(3.0 * base.lhs).epsilon(1e-6));
    CHECK(base.holds);

    const auto broken = verify_bellman_bound(in.mdp, in.f, in.l, pred, 1e-8, 0.0);
    CHECK_FALSE(broken.holds);
}

TEST_CASE("visitation distribution") {
    std::mt19937_64 rng(37);
    auto in = random_instance(rng, 5, 0.9);
    const auto start = random_distribution(rng, 5);
    const auto d = visitation_distribution(in.mdp, in.f, in.l, start);
    double sum = 0;
    for (double x : d) {
        CHECK(x >= 0.0);
        sum += x;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-10);

    // truncated geometric series oracle
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(5, 5);
    for (int s = 0; s < 5; ++s)
        for (int af = 0; af < 3; ++af)
            for (int al = 0; al < 3; ++al)
                for (int s2 = 0; s2 < 5; ++s2) P(s, s2) += in.f(s, af) * in.l(s, al) * in.mdp.p(s, af, al, s2);
    Eigen::VectorXd term = Eigen::Map<const Eigen::VectorXd>(start.data(), 5);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(5);
    double g = 1.0;
    while (g > 1e-13) {
        acc += g * term;
        term = P.transpose() * term;
        g *= 0.9;
    }
    acc *= 0.1;
    for (int s = 0; s < 5; ++s) CHECK(std::fabs(acc(s) - d[static_cast<std::size_t>(s)]) < 1e-9);

    TabularSEMDP myopic = in.mdp;
    myopic.gamma = 1e-8;
    const auto d0 = visitation_distribution(myopic, in.f, in.l, start);
    for (int s = 0; s < 5; ++s) CHECK(std::fabs(d0[static_cast<std::size_t>(s)] - start[static_cast<std::size_t>(s)]) < 1e-7);

    // absorbing state 0: mass concentrates there as gamma -> 1
    TabularSEMDP absorb = in.mdp;
    for (int s = 0; s < 5; ++s)
        for (int af = 0; af < 3; ++af)
            for (int al = 0; al < 3; ++al)
                for (int s2 = 0; s2 < 5; ++s2)
                    absorb.transition[((static_cast<std::size_t>(s) * 3 + af) * 3 + al) * 5 + s2] = (s2 == 0) ? 1.0 : 0.0;
    absorb.gamma = 0.999;
    CHECK(visitation_distribution(absorb, in.f, in.l, start)[0] > 0.99);
}

TEST_CASE("advantage of a policy against itself has zero mean") {
    std::mt19937_64 rng(38);
    for (int trial = 0; trial < 50; ++trial) {
        auto in = random_instance(rng, 5, uniform(rng, 0.2, 0.99));
        const auto start = random_distribution(rng, 5);
        const auto d = visitation_distribution(in.mdp, in.f, in.l, start);
        const auto v = exact_values(in.mdp, in.f, in.l);
        const auto q = follower_q_values(in.mdp, in.l, v);
        double e = 0;
        for (int s = 0; s < 5; ++s)
            for (int a = 0; a < 3; ++a)
                e += d[static_cast<std::size_t>(s)] * in.f(s, a) * (q[static_cast<std::size_t>(s) * 3 + a] - v[static_cast<std::size_t>(s)]);
        CHECK(std::fabs(e) < 1e-10);
        const auto self = verify_pdl(in.mdp, in.f, in.f, in.l, start);
        CHECK(std::fabs(self.lhs) < 1e-12);
        CHECK(std::fabs(self.rhs) < 1e-10);
    }
}

TEST_CASE("performance difference identity, action and state forms") {
    std::mt19937_64 rng(39);
    for (int trial = 0; trial < 100; ++trial) {
        auto in = random_instance(rng, 5, uniform(rng, 0.1, 0.99));
        const auto start = random_distribution(rng, 5);
        const auto det = random_deterministic_policy<FollowerPolicy>(rng, 5, 3);
        const auto tilde = random_policy<FollowerPolicy>(rng, 5, 3);
        const auto r = verify_pdl(in.mdp, det, tilde, in.l, start);
        CHECK(r.deterministic);
        CHECK(r.gap < 1e-8);
        CHECK(r.rhs_state_form == r.rhs);
        const auto r2 = verify_pdl(in.mdp, in.f, tilde, in.l, start);
        CHECK_FALSE(r2.deterministic);
        CHECK(r2.gap < 1e-8);
    }
}

TEST_CASE("suites and JSON lines") {
    const double gammas[] = {0.5, 0.9};
    const auto b = run_bellman_suite(5, gammas, 7);
    CHECK(b.size() == 10);
    for (const auto& r : b) CHECK(r.report.holds);
    const auto again = run_bellman_suite(5, gammas, 7);
    for (std::size_t k = 0; k < b.size(); ++k) CHECK(again[k].report.lhs == b[k].report.lhs);
    const auto p = run_pdl_suite(4, gammas, 7);
    CHECK(p.size() == 8);
    for (const auto& r : p) CHECK(r.holds);
    std::ostringstream out;
    write_bellman_jsonl(out, b);
    write_pdl_jsonl(out, p);
    std::istringstream in(out.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("lhs"));
        CHECK(j.contains("holds"));
        ++n;
    }
    CHECK(n == 18);
    const auto scaled = run_bellman_suite(3, gammas, 7, 0.0);
    bool any_fail = false;
    for (const auto& r : scaled) any_fail = any_fail || !r.report.holds;
    CHECK(any_fail);
}
