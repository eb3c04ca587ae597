#pragma once

// Exact tabular laboratory for the follower-side Stackelberg MDP: a follower
// picks a_f, a single aggregate leader channel picks a_l, and the follower's
// value obeys the Bellman recursion with both actions marginalized.
//
// Used to check two facts numerically:
//   * replacing the leader policy by a prediction moves the fixed point by at
//     most eps_T / (1 - gamma), where eps_T bounds the one-step operator gap;
//   * the performance-difference identity between two follower policies.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace tsc::lemmalab {

struct TabularSEMDP {
    int n_states = 0;
    int n_follower = 0;  ///< |A_f|
    int n_leader = 0;    ///< |A_l|
    double gamma = 0.9;
    std::vector<double> transition;  ///< [s][a_f][a_l][s']
    std::vector<double> reward;      ///< [s][a_f][a_l]

    double p(int s, int af, int al, int s2) const {
        return transition[((static_cast<std::size_t>(s) * n_follower + af) * n_leader + al) * n_states + s2];
    }
    double r(int s, int af, int al) const {
        return reward[(static_cast<std::size_t>(s) * n_follower + af) * n_leader + al];
    }
    double r_max() const;
    double v_max() const { return r_max() / (1.0 - gamma); }
    /// Throws InvalidInput on shape, stochasticity (1e-12) or gamma violations.
    void validate() const;
};

/// Row-stochastic table pi(a | s). The tag keeps leader and follower
/// policies from being swapped at call sites.
template <typename Tag>
struct TabularPolicy {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> probs;  ///< [s][a]

    double operator()(int s, int a) const {
        return probs[static_cast<std::size_t>(s) * n_actions + a];
    }
    double& at(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
    bool is_deterministic() const;
    /// Index of the action with mass 1 at s (requires is_deterministic()).
    int action(int s) const;
    void validate() const;
};

struct LeaderTag;
struct FollowerTag;
using LeaderPolicy = TabularPolicy<LeaderTag>;
using FollowerPolicy = TabularPolicy<FollowerTag>;

extern template struct TabularPolicy<LeaderTag>;
extern template struct TabularPolicy<FollowerTag>;

using Values = std::vector<double>;

Values se_bellman_backup(std::span<const double> v, const TabularSEMDP& mdp,
                         const FollowerPolicy& follower, const LeaderPolicy& leader);

struct FixedPoint {
    Values v;
    int iterations = 0;
    std::vector<double> deltas;  ///< max-norm change per iteration
};

/// Iterates the backup from V = 0 until the max-norm change drops below
/// tol (1 - gamma) / gamma, which certifies ||TV - V|| < tol. Throws
/// std::runtime_error if the iteration cap is exceeded.
FixedPoint fixed_point(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                       const LeaderPolicy& leader, double tol = 1e-10);

/// Direct solve of (I - gamma P_pi) V = r_pi.
Values exact_values(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                    const LeaderPolicy& leader);

/// Q(s, a_f) with the leader marginalized and V as the continuation value.
std::vector<double> follower_q_values(const TabularSEMDP& mdp, const LeaderPolicy& leader,
                                      std::span<const double> v);

/// Certified eps_T: a bound on ||T V - T_pred V||_inf valid for every V
/// with ||V||_inf <= V_max.
double operator_gap_bound(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                          const LeaderPolicy& leader, const LeaderPolicy& predicted);

struct BellmanReport {
    double lhs = 0;    ///< ||V*(leader) - V*(predicted)||_inf
    double eps_t = 0;
    double rhs = 0;    ///< eps_t / (1 - gamma)
    bool holds = false;
};

/// rhs_scale multiplies the bound before the comparison; 1 in normal use.
BellmanReport verify_bellman_bound(const TabularSEMDP& mdp, const FollowerPolicy& follower,
                                   const LeaderPolicy& leader, const LeaderPolicy& predicted,
                                   double tol = 1e-8, double rhs_scale = 1.0);

/// d_pi = (1 - gamma) (I - gamma P_pi^T)^{-1} start.
std::vector<double> visitation_distribution(const TabularSEMDP& mdp,
                                            const FollowerPolicy& follower,
                                            const LeaderPolicy& leader,
                                            std::span<const double> start);

struct PdlReport {
    double lhs = 0;  ///< J(pi) - J(pi_tilde)
    double rhs = 0;  ///< action form
    double gap = 0;
    bool deterministic = false;
    double rhs_state_form = 0;  ///< only meaningful when deterministic
};

PdlReport verify_pdl(const TabularSEMDP& mdp, const FollowerPolicy& pi,
                     const FollowerPolicy& pi_tilde, const LeaderPolicy& leader,
                     std::span<const double> start);

// --- random instances and suites ---------------------------------------------

TabularSEMDP random_mdp(std::mt19937_64& rng, int n_states, int n_follower, int n_leader,
                        double gamma, double r_max = 1.0);

template <typename Policy>
Policy random_policy(std::mt19937_64& rng, int n_states, int n_actions);

template <typename Policy>
Policy random_deterministic_policy(std::mt19937_64& rng, int n_states, int n_actions);

/// Mixes a random policy into `base` with weight `noise` in [0, 1].
LeaderPolicy perturb_policy(std::mt19937_64& rng, const LeaderPolicy& base, double noise);

std::vector<double> random_distribution(std::mt19937_64& rng, int n);

struct BellmanRecord {
    std::uint64_t seed;
    double gamma;
    BellmanReport report;
};

struct PdlRecord {
    std::uint64_t seed;
    double gamma;
    PdlReport report;
    bool holds;
};

inline constexpr double kPdlTolerance = 1e-8;

/// n_instances random 5-state, 3x3-action MDPs per gamma.
std::vector<BellmanRecord> run_bellman_suite(int n_instances, std::span<const double> gammas,
                                             std::uint64_t seed, double rhs_scale = 1.0);
/// n_instances random MDP / policy triples per gamma; every other triple
/// uses a deterministic pi to exercise the state form.
std::vector<PdlRecord> run_pdl_suite(int n_instances, std::span<const double> gammas,
                                     std::uint64_t seed);

void write_bellman_jsonl(std::ostream& out, std::span<const BellmanRecord> records);
void write_pdl_jsonl(std::ostream& out, std::span<const PdlRecord> records);

}  // namespace tsc::lemmalab
