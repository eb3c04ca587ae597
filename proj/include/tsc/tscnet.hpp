#pragma once

// Topology-aware coordination network with hand-written backpropagation.
//
// Per agent: ego and neighbor encoders, a per-slot topology decoder giving
// the edge probabilities p_hat (probability that the neighbor dominates the
// ego) and a node score s_hat, Top-K selection by p_hat, single-head
// attention over the selected neighbors, the ego decoder producing the
// decision state u, a tanh-squashed Gaussian policy, a per-slot leader action
// predictor and a critic conditioned on the predicted actions of the leaders.
//
// All parameters live in one flat vector. Gradients use the same layout.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsc/sim.hpp"

namespace tsc::net {

struct HiddenWidths {
    int ego_enc = 32;
    int nbr_enc = 32;
    int topo_dec = 32;
    int node_head = 32;
    int ego_dec = 32;
    int policy = 32;
    int predict = 32;
    int value = 32;
};

struct NetConfig {
    int ego_features = sim::kEgoFeatures;
    int neighbor_features = sim::kNeighborFeatures;
    int d_e = 32;
    int d_n = 32;
    int d_t = 16;
    int d_c = 32;
    int d_u = 32;
    int M = 4;
    int K = 2;
    double delta_p = 0.05;
    int action_dim = 2;
    /// When false every leader set is empty and the critic sees zeros.
    bool stackelberg = true;
    /// When true the caller supplies uniform random priorities for Top-K and
    /// the leader set instead of p_hat.
    bool random_priority = false;
    double init_std = 0.5;
    HiddenWidths hidden;

    void validate() const;
    int value_inputs() const { return d_u + K * action_dim + 1; }
};

/// One dense layer y = act(W x + b), W stored row-major [out x in].
struct Dense {
    std::size_t w = 0;
    std::size_t b = 0;
    int in = 0;
    int out = 0;
    bool tanh_out = true;
};

struct ParamView {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct Layout {
    Dense ego1, ego2;
    Dense nbr1, nbr2;
    Dense topo1, topo2;
    Dense topo_head;
    Dense node1, node2;
    Dense attn_q, attn_k, attn_v, attn_out;
    Dense dec1, dec2;
    Dense pol1, pol2;
    Dense pred1, pred2;
    Dense val1, val2;  ///< kept last: [value_begin, value_end) is contiguous
    std::size_t value_begin = 0;
    std::size_t value_end = 0;
    std::size_t total = 0;
    std::vector<ParamView> views;
};

Layout make_layout(const NetConfig& cfg);

class ParamStore {
public:
    explicit ParamStore(NetConfig cfg);

    const NetConfig& config() const { return cfg_; }
    const Layout& layout() const { return layout_; }
    std::size_t size() const { return values_.size(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    /// Copy of the value-head block; only the trainer writes it.
    std::vector<double>& target() { return target_; }
    const std::vector<double>& target() const { return target_; }

    std::span<double> array(const std::string& name);
    std::span<const double> array(const std::string& name) const;

    /// Glorot-uniform weights, zero biases, policy std bias at init_std;
    /// the target head is copied from the online head.
    void initialize(std::mt19937_64& rng);
    /// target <- (1 - rho) target + rho online.
    void soft_update_target(double rho);
    void sync_target();
    bool finite() const;

private:
    NetConfig cfg_;
    Layout layout_;
    std::vector<double> values_;
    std::vector<double> target_;
};

/// Inputs of one agent at one step. Nothing but the agent's own observation.
struct NetInput {
    std::vector<double> ego;        ///< ego_features
    std::vector<double> neighbors;  ///< M x neighbor_features
    std::vector<double> valid;      ///< M flags in {0, 1}
    /// Optional M values replacing p_hat in Top-K and leader selection.
    std::vector<double> priority_override;
};

NetInput make_input(const sim::Observation& obs);

/// Forward cache; everything backward() needs.
struct Forward {
    NetInput in;

    std::vector<double> ego_a1, h_i;
    std::vector<double> nbr_a1, h_nbr;  ///< M x hidden, M x d_n (gated)
    std::vector<double> topo_in, topo_a1, q;  ///< per slot
    std::vector<double> logit, p_hat;         ///< M
    std::vector<double> q_bar, node_in, node_a1;
    double s_hat = 0.0;

    std::vector<double> priority;  ///< what Top-K and the leader set saw
    std::vector<int> selected;     ///< slots, in rank order
    std::vector<double> attn_qv, attn_kv, attn_vv, attn_w, ctx, attn_in, C;

    std::vector<double> dec_in, dec_a1, u;
    std::vector<double> pol_a1, pol_out, mean, std_raw, stddev;

    std::vector<int> leaders;  ///< ranks into `selected`
    std::vector<double> pred_in, pred_a1, a_hat;  ///< per selected rank
    std::vector<double> val_in, val_a1;
    double value = 0.0;
};

Forward forward(const ParamStore& params, NetInput input);

double value_with(const ParamStore& params, const Forward& f, bool use_target);

/// Gradients flowing into the forward outputs.
struct OutputGrad {
    std::vector<double> d_logit;  ///< M, ignored on invalid slots
    double d_s_hat = 0.0;
    std::vector<double> d_mean, d_std;
    std::vector<double> d_a_hat;  ///< selected ranks x action_dim
    double d_value = 0.0;

    explicit OutputGrad(const Forward& f, int action_dim);
};

/// Accumulates d(loss)/d(theta) into grad (online layout).
void backward(const ParamStore& params, const Forward& f, const OutputGrad& g,
              std::span<double> grad);

// --- discrete pieces ----------------------------------------------------------

/// K valid slots with the largest priority; ties to the lower slot.
std::vector<int> topk_select(std::span<const double> priority, std::span<const double> valid, int K);

/// Ranks r with priority[selected[r]] > 0.5 + delta_p.
std::vector<int> leader_set(std::span<const double> priority, std::span<const int> selected,
                            double delta_p);

// --- policy ---------------------------------------------------------------------

struct PolicyOutput {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<double> raw;
    std::vector<double> action;
    double log_prob = 0.0;
};

/// log density of the squashed action tanh(raw).
double squashed_log_prob(std::span<const double> mean, std::span<const double> stddev,
                         std::span<const double> raw);

PolicyOutput sample_policy(const Forward& f, std::mt19937_64& rng);
PolicyOutput deterministic_policy(const Forward& f);

// --- losses ---------------------------------------------------------------------

struct LossWeights {
    double lambda_V = 0.5;
    double lambda_topo = 1.0;
    double lambda_lead = 1.0;
    double lambda_node = 1.0;
    double lambda_cons = 1.0;
    double gamma = 0.99;
    double tau_s = 1.0;  ///< temperature of the score-induced probability

    void validate() const;
};

/// Flat view of topology predictions and labels across a batch. Neighbor
/// references point at sample rows of the same batch (same step).
struct TopoBatch {
    int M = 0;
    std::vector<double> logits;     ///< rows x M
    std::vector<double> valid;      ///< rows x M
    std::vector<int> neighbor_row;  ///< rows x M, -1 when absent
    std::vector<double> s_hat;      ///< rows
    std::vector<double> p_label;    ///< rows x M
    std::vector<double> edge_mask;  ///< rows x M; 0 drops the edge from L_edge
    std::vector<double> s_label;    ///< rows

    std::size_t rows() const { return s_hat.size(); }
};

struct TopoLoss {
    double edge = 0.0;
    double node = 0.0;
    double cons = 0.0;
    double total = 0.0;
    std::vector<double> d_logits;
    std::vector<double> d_s_hat;
};

TopoLoss loss_topo(const TopoBatch& batch, double lambda_node, double lambda_cons, double tau_s);

struct LeadLoss {
    double value = 0.0;
    std::vector<double> d_a_hat;
};

/// Sum of squared errors over rows whose mask is 1; rows of action_dim.
LeadLoss loss_lead(std::span<const double> a_hat, std::span<const double> realized,
                   std::span<const double> mask, int action_dim);

struct TdResult {
    std::vector<double> y;
    std::vector<double> advantage;
};

TdResult td_target_and_advantage(std::span<const double> reward, std::span<const double> terminal,
                                 std::span<const double> value, std::span<const double> next_target_value,
                                 double gamma);

// --- batches --------------------------------------------------------------------

struct Sample {
    int agent = 0;
    long t = 0;
    NetInput input;
    std::vector<int> neighbor_ids;  ///< agent behind each slot, -1 if none
    std::vector<double> raw_action;
    std::vector<double> action;
    double log_prob = 0.0;
    double reward = 0.0;
    bool terminal = false;
    NetInput next_input;
    std::vector<double> realized;   ///< M x action_dim, actions the neighbors executed
    std::vector<double> p_label;    ///< M
    std::vector<double> edge_mask;  ///< M
    double s_label = 0.0;
};

/// All agents at one step; samples[k].agent are distinct.
struct StepGroup {
    long t = 0;
    std::vector<Sample> samples;
};

struct Targets {
    std::vector<double> y;
    std::vector<double> advantage;
    /// Leader-action input of the critic per sample (K x action_dim), frozen
    /// so that it acts as a constant in total_loss.
    std::vector<std::vector<double>> leader_input;
};

/// y, the detached advantage and the frozen critic leader input for every
/// sample, groups in order.
Targets compute_targets(const ParamStore& params, std::span<const StepGroup> groups,
                        const LossWeights& w);

struct LossTerms {
    double total = 0.0;
    double policy = 0.0;
    double value = 0.0;
    double topo = 0.0;
    double edge = 0.0;
    double node = 0.0;
    double cons = 0.0;
    double lead = 0.0;
    std::size_t samples = 0;
};

/// Total objective with targets held fixed. grad may be empty (no backward).
LossTerms total_loss(const ParamStore& params, std::span<const StepGroup> groups,
                     const Targets& targets, const LossWeights& w, std::span<double> grad);

// --- checkpoints ----------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// Length-prefixed JSON header followed by raw little-endian doubles: the
/// online arrays in layout order, then the target value head.
void save_checkpoint(std::ostream& out, const ParamStore& params, const std::string& extra_json = "{}");
ParamStore load_checkpoint(std::istream& in, std::string* extra_json = nullptr);
void save_checkpoint_file(const std::string& path, const ParamStore& params,
                          const std::string& extra_json = "{}");
ParamStore load_checkpoint_file(const std::string& path, std::string* extra_json = nullptr);

}  // namespace tsc::net
