#pragma once

// Directed priority graph over interacting agents and the scalar priority
// field recovered from it. Edges carry p_{i<-j} (j dominates i), the
// confidence |p - 1/2|^alpha and the preference A_{i<-j} = 1 - 2p.

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tsc/topo.hpp"

namespace tsc::field {

struct DirectedEdge {
    int from = 0;            ///< j
    int to = 0;              ///< i
    double p = 0.5;          ///< p_{i<-j}
    double confidence = 0;   ///< c_{i<-j}
    double preference = 0;   ///< A_{i<-j}
};

struct PriorityGraph {
    std::vector<int> node_ids;
    std::vector<DirectedEdge> edges;
    std::optional<std::vector<double>> scores;  ///< aligned with node_ids

    /// Position of an agent id in node_ids; throws InvalidInput if absent.
    std::size_t index_of(int id) const;
    const DirectedEdge* find_edge(int from, int to) const;
    /// Throws InvalidInput on any broken graph invariant.
    void validate() const;
};

struct FieldParams {
    double alpha = 1.0;                ///< confidence exponent
    double tau_s = 1.0;                ///< score temperature
    double interaction_radius = 15.0;  ///< meters
    int max_cycle_len = 3;
    int max_neighbors = 4;             ///< cap per ego agent, matches the observation capacity

    void validate() const;
};

/// |p - 1/2|^alpha, with an exact tie scoring 0 for every alpha.
double confidence_weights(double p, double alpha);

/// Edge j -> i carrying p_{i<-j} with confidence and preference filled in.
DirectedEdge make_edge(int from, int to, double p, double alpha);

/// Confidence-weighted least squares for s with (s_i - s_j) ~ A_{i<-j}, each
/// connected component (over edges with c > 0) pinned to zero mean. Nodes
/// without any weighted edge get score 0.
std::vector<double> solve_score_field(const PriorityGraph& graph);

/// Objective value 1/2 sum c((s_i - s_j) - A)^2.
double score_field_objective(const PriorityGraph& graph, std::span<const double> scores);
/// Gradient of score_field_objective w.r.t. the scores.
std::vector<double> score_field_gradient(const PriorityGraph& graph,
                                         std::span<const double> scores);

/// logistic((s_j - s_i) / tau_s), overflow-free.
double score_induced_prob(double s_i, double s_j, double tau_s);

struct Arc {
    int dominant;
    int dominated;
    double margin;  ///< |p - 1/2|
};

/// Pairs oriented by p > 1/2; exact ties carry no orientation.
std::vector<Arc> oriented_arcs(const PriorityGraph& graph);

/// Every simple directed cycle of length <= max_len over the oriented arcs,
/// as node-id sequences starting at their smallest id.
std::vector<std::vector<int>> short_cycles(const PriorityGraph& graph, int max_len);

/// Repeatedly neutralizes (p = 1/2, c = 0, A = 0, both orientations) the
/// weakest pair that lies on a directed cycle of length <= max_cycle_len
/// until none remains.
PriorityGraph decycle(const PriorityGraph& graph, int max_cycle_len);

struct AgentSnapshot {
    int id;
    topo::Pose2 pose;          ///< pose at the labelled step
    topo::Trajectory future;   ///< positions from the labelled step onward
};

/// Interaction-relevant ordered pairs: for each ego i, the nearest
/// max_neighbors agents within interaction_radius contribute edges j -> i.
std::vector<std::pair<int, int>> interaction_pairs(std::span<const AgentSnapshot> agents,
                                                   const FieldParams& field);

/// Full labelling pipeline for one step: weaving distances, priorities,
/// de-cycling and the score field.
PriorityGraph build_labels(std::span<const AgentSnapshot> agents, const topo::WeaveParams& weave,
                           const FieldParams& field);

// --- label files ---------------------------------------------------------

struct StepLabels {
    long t;
    PriorityGraph graph;
};

/// Labels every time step of a logged trajectory set. Each agent present at
/// step t contributes its pose there and its contiguous positions from t up
/// to t + horizon. Throws InvalidInput on an empty log.
std::vector<StepLabels> label_trajectories(std::span<const topo::TrajectoryRow> rows,
                                           const topo::WeaveParams& weave, const FieldParams& field);

/// "t,i,j,p,c,A" one row per edge (i = to, j = from).
void write_edge_labels_csv(std::ostream& out, std::span<const StepLabels> steps);
/// "t,i,s" one row per node.
void write_node_labels_csv(std::ostream& out, std::span<const StepLabels> steps);
/// Structured summary of a label run.
void write_labels_summary_json(std::ostream& out, std::span<const StepLabels> steps,
                               const topo::WeaveParams& weave, const FieldParams& field);

}  // namespace tsc::field
