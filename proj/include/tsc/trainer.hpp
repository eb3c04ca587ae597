#pragma once

// Centralized training with decentralized execution. Every agent acts through
// one shared parameter store from its own observation; labels, realized
// neighbor actions and neighbor node scores are used by the losses only.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/field.hpp"
#include "tsc/sim.hpp"
#include "tsc/topo.hpp"
#include "tsc/tscnet.hpp"

namespace tsc::train {

enum class Ablation { Full, RandomPriority, NoStackelberg, NoTopK };

std::string_view ablation_name(Ablation a);
/// Throws InvalidParameter on an unknown name.
Ablation parse_ablation(std::string_view name);
inline constexpr Ablation kAllAblations[] = {Ablation::Full, Ablation::RandomPriority, Ablation::NoStackelberg,
                                             Ablation::NoTopK};

inline constexpr int kConfigSchemaVersion = 1;

struct TrainConfig {
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::Full;

    std::string scenario = "merge";  ///< builtin name, ignored when scenario_file is set
    std::string scenario_file;
    int n_vehicles = 0;   ///< 0 keeps the scenario value
    int episode_len = 0;  ///< 0 keeps the scenario value

    int iterations = 250;
    int steps_per_iter = 4096;
    int batch_steps = 32;        ///< step groups per mini-batch
    int updates_per_iter = 32;
    double learning_rate = 0.05;
    double target_rho = 0.01;
    double grad_clip = 1.0;
    int replay_capacity = 0;     ///< step groups; 0 means 2 x steps_per_iter
    std::string optimizer = "sgd";  ///< "sgd" or "adam"
    /// Standardize the detached advantages within each mini-batch.
    bool normalize_advantage = true;
    int eval_every = 0;          ///< iterations; 0 disables scheduled evaluation
    int eval_episodes = 4;
    int checkpoint_every = 0;

    net::NetConfig net;
    net::LossWeights loss;
    topo::WeaveParams weave;
    field::FieldParams field;
    sim::RewardWeights reward;

    void validate() const;
    int capacity() const { return replay_capacity > 0 ? replay_capacity : 2 * steps_per_iter; }
    /// Scenario with the overrides applied.
    sim::Scenario make_scenario() const;
    /// Network config after the ablation switches.
    net::NetConfig effective_net() const;
};

/// Versioned TOML; unknown keys and a wrong schema_version are ParseErrors.
TrainConfig parse_train_config(std::string_view toml_text);
TrainConfig load_train_config(const std::string& path);
/// TOML snapshot that parses back to the same config.
std::string to_toml(const TrainConfig& cfg);

/// Independent streams derived from the run seed.
enum class Stream : std::uint64_t { Init = 1, Env, Actions, Priority, Minibatch, Eval };
std::uint64_t derive_seed(std::uint64_t seed, Stream s);

// --- rollouts ---------------------------------------------------------------------

struct Collector {
    sim::Simulator env;
    std::mt19937_64 action_rng;
    std::mt19937_64 priority_rng;
    long episodes = 0;
    long steps = 0;

    Collector(const sim::Scenario& sc, std::uint64_t seed);
};

struct CollectStats {
    double reward_sum = 0.0;
    long aa_events = 0;
    long am_events = 0;
    long episodes_finished = 0;
};

/// n_steps joint steps with the stochastic shared policy; labels are built
/// afterwards from the logged ground truth, each agent's future truncated at
/// its next respawn, episode end or chunk end.
std::vector<net::StepGroup> collect(Collector& col, const net::ParamStore& params, const TrainConfig& cfg,
                                    int n_steps, CollectStats* stats = nullptr);

// --- optimization -------------------------------------------------------------------

struct Optimizer {
    std::string kind = "sgd";
    double lr = 0.05;
    double clip = 1.0;
    std::vector<double> m, v;  ///< adam moments
    long t = 0;

    /// Clips the gradient to norm `clip` and applies it; returns the raw norm.
    double apply(std::vector<double>& params, std::vector<double>& grad);
};

struct IterationStats {
    int iteration = 0;
    net::LossTerms loss;  ///< averaged per sample over the updates
    double grad_norm = 0.0;
    CollectStats collect;
    std::optional<sim::Metrics> eval;
};

/// updates_per_iter mini-batches from the buffer, one optimizer step each,
/// then a soft target update. Throws std::runtime_error on a non-finite loss.
IterationStats train_iteration(const std::vector<net::StepGroup>& buffer, net::ParamStore& params,
                               Optimizer& opt, const TrainConfig& cfg, std::mt19937_64& rng);

// --- evaluation ---------------------------------------------------------------------

struct EvalResult {
    sim::Metrics mean;
    std::vector<sim::Metrics> episodes;
    std::vector<sim::EpisodeLog> logs;
};

/// Deterministic policy tanh(mean). Reads nothing but each agent's own
/// observation (plus random priorities for the random_priority network).
EvalResult evaluate(const net::ParamStore& params, const sim::Scenario& scenario, int n_episodes,
                    std::uint64_t seed, bool keep_logs = false);

// --- training driver ------------------------------------------------------------------

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    const TrainConfig& config() const { return cfg_; }
    const sim::Scenario& scenario() const { return scenario_; }
    net::ParamStore& params() { return params_; }
    const net::ParamStore& params() const { return params_; }
    int iteration() const { return iteration_; }
    bool done() const { return iteration_ >= cfg_.iterations; }
    const std::vector<net::StepGroup>& buffer() const { return buffer_; }

    IterationStats step();

    /// Full state (parameters, optimizer, buffer, rngs, simulator) so that a
    /// resumed run continues bit-identically.
    void save_state(const std::string& path) const;
    void load_state(const std::string& path);

private:
    TrainConfig cfg_;
    sim::Scenario scenario_;
    net::ParamStore params_;
    Optimizer opt_;
    Collector collector_;
    std::mt19937_64 batch_rng_;
    std::vector<net::StepGroup> buffer_;
    int iteration_ = 0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const IterationStats& s);

// --- ablations ------------------------------------------------------------------------

struct AblationRow {
    Ablation mode;
    std::uint64_t seed;
    sim::Metrics metrics;
    double seconds;
};

/// Trains and evaluates each mode under identical seeds and budgets.
std::vector<AblationRow> run_ablation(const TrainConfig& base, std::span<const Ablation> modes,
                                      std::span<const std::uint64_t> seeds, int eval_episodes,
                                      std::ostream* progress = nullptr);

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace tsc::train
