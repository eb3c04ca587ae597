#pragma once

// Small random networks, inputs and batches for gradient and contract tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tsc/tscnet.hpp"

namespace tsc::testing {

inline net::NetConfig small_config(std::mt19937_64& rng, int variant) {
    std::uniform_int_distribution<int> w(2, 5);
    net::NetConfig c;
    c.d_e = w(rng);
    c.d_n = w(rng);
    c.d_t = w(rng);
    c.d_c = w(rng);
    c.d_u = w(rng);
    c.M = 2 + variant % 3;
    c.K = 1 + static_cast<int>(rng() % static_cast<unsigned>(c.M));
    c.hidden = {w(rng), w(rng), w(rng), w(rng), w(rng), w(rng), w(rng), w(rng)};
    c.stackelberg = variant % 4 != 3;
    // low margin so that leader sets are usually non-empty
    c.delta_p = (variant % 2) ? 0.0 : 0.02;
    return c;
}

inline net::NetInput random_input(const net::NetConfig& c, std::mt19937_64& rng, int n_valid,
                                  bool override_priority = false) {
    std::normal_distribution<double> n(0.0, 1.0);
    net::NetInput in;
    for (int i = 0; i < c.ego_features; ++i) in.ego.push_back(n(rng));
    for (int k = 0; k < c.M; ++k) {
        for (int d = 0; d < c.neighbor_features; ++d) in.neighbors.push_back(k < n_valid ? n(rng) : 0.0);
        in.valid.push_back(k < n_valid ? 1.0 : 0.0);
    }
    if (override_priority) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int k = 0; k < c.M; ++k) in.priority_override.push_back(u(rng));
    }
    return in;
}

/// Initialized store with extra noise so that biases and the target head are
/// not at their symmetric starting values.
inline net::ParamStore noisy_params(const net::NetConfig& c, std::mt19937_64& rng, double noise = 0.3) {
    net::ParamStore p(c);
    p.initialize(rng);
    std::normal_distribution<double> n(0.0, noise);
    for (auto& v : p.values()) v += n(rng);
    for (auto& v : p.target()) v += n(rng);
    return p;
}

/// One step group of n agents; every agent sees the others in a fixed
/// rotation so that neighbor references resolve inside the group.
inline net::StepGroup random_group(const net::NetConfig& c, std::mt19937_64& rng, int n_agents, long t,
                                   bool override_priority) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    net::StepGroup g;
    g.t = t;
    for (int a = 0; a < n_agents; ++a) {
        net::Sample s;
        s.agent = a;
        s.t = t;
        const int n_valid = std::min(c.M, std::max(1, n_agents - 1 - (a % 2)));
        s.input = random_input(c, rng, n_valid, override_priority);
        s.next_input = random_input(c, rng, std::max(1, n_valid - 1), override_priority);
        for (int k = 0; k < c.M; ++k) s.neighbor_ids.push_back(k < n_valid ? (a + 1 + k) % n_agents : -1);
        s.raw_action = {0.5 * n(rng), 0.5 * n(rng)};
        s.action = {std::tanh(s.raw_action[0]), std::tanh(s.raw_action[1])};
        s.reward = n(rng);
        s.terminal = u(rng) < 0.3;
        for (int k = 0; k < c.M * c.action_dim; ++k) s.realized.push_back(2.0 * u(rng) - 1.0);
        for (int k = 0; k < c.M; ++k) {
            s.p_label.push_back(u(rng));
            s.edge_mask.push_back(u(rng) < 0.8 ? 1.0 : 0.0);
        }
        s.s_label = n(rng);
        g.samples.push_back(std::move(s));
    }
    return g;
}

struct FdResult {
    double worst = 0.0;
    std::size_t checked = 0;
};

/// Central differences of f over every parameter against the analytic
/// gradient; error |fd - g| / max(floor, |fd| + |g|).
inline FdResult fd_check(net::ParamStore& p, const std::function<double()>& f, const std::vector<double>& grad,
                         double h = 1e-6, double floor = 1e-4) {
    FdResult r;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p.values()[i];
        p.values()[i] = orig + h;
        const double lp = f();
        p.values()[i] = orig - h;
        const double lm = f();
        p.values()[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double err = std::fabs(fd - grad[i]) / std::max(floor, std::fabs(fd) + std::fabs(grad[i]));
        r.worst = std::max(r.worst, err);
        ++r.checked;
    }
    return r;
}

/// Random upstream weights on the selected forward outputs; returns the
/// scalar sum(weight * output) as a function of the parameters.
struct OutputProbe {
    std::vector<double> w_logit, w_mean, w_std, w_a_hat;
    double w_s_hat = 0.0, w_value = 0.0;

    double operator()(const net::Forward& f) const {
        double acc = w_s_hat * f.s_hat + w_value * f.value;
        for (std::size_t k = 0; k < w_logit.size(); ++k)
            if (f.in.valid[k] > 0.0) acc += w_logit[k] * f.logit[k];
        for (std::size_t k = 0; k < w_mean.size(); ++k) acc += w_mean[k] * f.mean[k] + w_std[k] * f.stddev[k];
        for (std::size_t k = 0; k < std::min(w_a_hat.size(), f.a_hat.size()); ++k) acc += w_a_hat[k] * f.a_hat[k];
        return acc;
    }

    net::OutputGrad grad(const net::Forward& f, int action_dim) const {
        net::OutputGrad g(f, action_dim);
        g.d_s_hat = w_s_hat;
        g.d_value = w_value;
        for (std::size_t k = 0; k < w_logit.size(); ++k) g.d_logit[k] = w_logit[k];
        for (std::size_t k = 0; k < w_mean.size(); ++k) {
            g.d_mean[k] = w_mean[k];
            g.d_std[k] = w_std[k];
        }
        for (std::size_t k = 0; k < std::min(w_a_hat.size(), g.d_a_hat.size()); ++k) g.d_a_hat[k] = w_a_hat[k];
        return g;
    }
};

}  // namespace tsc::testing
