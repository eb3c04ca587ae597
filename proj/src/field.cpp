#include "tsc/field.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

#include <json.hpp>

#include "tsc/error.hpp"

namespace tsc::field {

std::size_t PriorityGraph::index_of(int id) const {
    auto it = std::find(node_ids.begin(), node_ids.end(), id);
    if (it == node_ids.end()) throw InvalidInput("priority graph: unknown node " + std::to_string(id));
    return static_cast<std::size_t>(it - node_ids.begin());
}

const DirectedEdge* PriorityGraph::find_edge(int from, int to) const {
    for (const auto& e : edges)
        if (e.from == from && e.to == to) return &e;
    return nullptr;
}

void PriorityGraph::validate() const {
    std::set<int> ids(node_ids.begin(), node_ids.end());
    if (ids.size() != node_ids.size()) throw InvalidInput("priority graph: duplicate node id");
    std::set<std::pair<int, int>> seen;
    for (const auto& e : edges) {
        if (!ids.count(e.from) || !ids.count(e.to) || e.from == e.to)
            throw InvalidInput("priority graph: edge endpoints invalid");
        if (!seen.insert({e.from, e.to}).second)
            throw InvalidInput("priority graph: duplicate ordered pair");
        if (!(e.p >= 0.0 && e.p <= 1.0)) throw InvalidInput("priority graph: p outside [0,1]");
        if (!(e.confidence >= 0.0)) throw InvalidInput("priority graph: negative confidence");
        if (!(e.preference >= -1.0 && e.preference <= 1.0))
            throw InvalidInput("priority graph: preference outside [-1,1]");
        if (const auto* r = find_edge(e.to, e.from); r && std::fabs(r->p + e.p - 1.0) > 1e-12)
            throw InvalidInput("priority graph: reciprocal edges do not sum to 1");
    }
    if (scores) {
        if (scores->size() != node_ids.size())
            throw InvalidInput("priority graph: score count does not match node count");
        const double sum = std::accumulate(scores->begin(), scores->end(), 0.0);
        if (std::fabs(sum) > 1e-9) throw InvalidInput("priority graph: scores violate the gauge");
    }
}

void FieldParams::validate() const {
    if (!(alpha >= 0.0)) throw InvalidParameter("field alpha must be >= 0");
    if (!(tau_s > 0.0)) throw InvalidParameter("field tau_s must be > 0");
    if (!(interaction_radius > 0.0)) throw InvalidParameter("interaction_radius must be > 0");
    if (max_cycle_len < 2) throw InvalidParameter("max_cycle_len must be >= 2");
    if (max_neighbors < 1) throw InvalidParameter("max_neighbors must be >= 1");
}

double confidence_weights(double p, double alpha) {
    const double m = std::fabs(p - 0.5);
    if (m == 0.0) return 0.0;
    return std::pow(m, alpha);
}

DirectedEdge make_edge(int from, int to, double p, double alpha) {
    return {from, to, p, confidence_weights(p, alpha), (1.0 - p) - p};
}

// --- score field -----------------------------------------------------------

namespace {

struct DisjointSet {
    std::vector<std::size_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

// In-place Cholesky solve of the SPD system a x = b (a is n x n row-major).
void cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (!(d > 0.0)) throw InvalidInput("score field: Laplacian block is not positive definite");
        const double ljj = std::sqrt(d);
        a[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
}

}  // namespace

std::vector<double> solve_score_field(const PriorityGraph& graph) {
    const std::size_t n = graph.node_ids.size();
    std::vector<double> s(n, 0.0);
    if (n == 0) return s;

    std::map<int, std::size_t> pos;
    for (std::size_t k = 0; k < n; ++k) pos[graph.node_ids[k]] = k;

    DisjointSet ds(n);
    for (const auto& e : graph.edges) {
        if (e.confidence < 0.0) throw InvalidInput("score field: negative confidence");
        if (e.confidence > 0.0) ds.unite(pos.at(e.from), pos.at(e.to));
    }

    std::map<std::size_t, std::vector<std::size_t>> components;
    for (std::size_t k = 0; k < n; ++k) components[ds.find(k)].push_back(k);

    for (const auto& [root, members] : components) {
        const std::size_t m = members.size();
        if (m == 1) continue;
        std::map<std::size_t, std::size_t> local;
        for (std::size_t k = 0; k < m; ++k) local[members[k]] = k;

        // (L + 11^T / m) s = b has the zero-mean normal-equation solution.
        std::vector<double> a(m * m, 1.0 / static_cast<double>(m));
        std::vector<double> b(m, 0.0);
        for (const auto& e : graph.edges) {
            if (e.confidence == 0.0) continue;
            const std::size_t gi = pos.at(e.to);
            if (ds.find(gi) != root) continue;
            const std::size_t i = local.at(gi);
            const std::size_t j = local.at(pos.at(e.from));
            const double c = e.confidence;
            a[i * m + i] += c;
            a[j * m + j] += c;
            a[i * m + j] -= c;
            a[j * m + i] -= c;
            b[i] += c * e.preference;
            b[j] -= c * e.preference;
        }
        cholesky_solve(a, b, m);
        const double mean = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(m);
        for (std::size_t k = 0; k < m; ++k) s[members[k]] = b[k] - mean;
    }
    return s;
}

double score_field_objective(const PriorityGraph& graph, std::span<const double> scores) {
    double f = 0.0;
    for (const auto& e : graph.edges) {
        const double r = (scores[graph.index_of(e.to)] - scores[graph.index_of(e.from)]) -
                         e.preference;
        f += 0.5 * e.confidence * r * r;
    }
    return f;
}

std::vector<double> score_field_gradient(const PriorityGraph& graph,
                                         std::span<const double> scores) {
    std::vector<double> g(scores.size(), 0.0);
    for (const auto& e : graph.edges) {
        const std::size_t i = graph.index_of(e.to);
        const std::size_t j = graph.index_of(e.from);
        const double r = e.confidence * ((scores[i] - scores[j]) - e.preference);
        g[i] += r;
        g[j] -= r;
    }
    return g;
}

double score_induced_prob(double s_i, double s_j, double tau_s) {
    if (!(tau_s > 0.0)) throw InvalidParameter("score_induced_prob: tau_s must be > 0");
    const double z = (s_j - s_i) / tau_s;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// --- de-cycling -------------------------------------------------------------

std::vector<Arc> oriented_arcs(const PriorityGraph& graph) {
    std::map<std::pair<int, int>, Arc> by_pair;
    for (const auto& e : graph.edges) {
        if (e.p == 0.5) continue;
        const int dom = e.p > 0.5 ? e.from : e.to;
        const int sub = e.p > 0.5 ? e.to : e.from;
        by_pair.emplace(std::make_pair(std::min(dom, sub), std::max(dom, sub)),
                        Arc{dom, sub, std::fabs(e.p - 0.5)});
    }
    std::vector<Arc> arcs;
    arcs.reserve(by_pair.size());
    for (const auto& [k, a] : by_pair) arcs.push_back(a);
    return arcs;
}

std::vector<std::vector<int>> short_cycles(const PriorityGraph& graph, int max_len) {
    std::map<int, std::vector<int>> succ;
    for (const auto& a : oriented_arcs(graph)) succ[a.dominant].push_back(a.dominated);
    for (auto& [k, v] : succ) std::sort(v.begin(), v.end());

    std::vector<std::vector<int>> cycles;
    std::vector<int> path;
    std::vector<int> ids = graph.node_ids;
    std::sort(ids.begin(), ids.end());

    std::function<void(int, int)> dfs = [&](int start, int node) {
        auto it = succ.find(node);
        if (it == succ.end()) return;
        for (int next : it->second) {
            if (next == start) {
                if (path.size() >= 2) cycles.push_back(path);
                continue;
            }
            if (next < start || static_cast<int>(path.size()) >= max_len) continue;
            if (std::find(path.begin(), path.end(), next) != path.end()) continue;
            path.push_back(next);
            dfs(start, next);
            path.pop_back();
        }
    };
    for (int s : ids) {
        path.assign(1, s);
        dfs(s, s);
    }
    return cycles;
}

PriorityGraph decycle(const PriorityGraph& graph, int max_cycle_len) {
    if (max_cycle_len < 2) throw InvalidParameter("decycle: max_cycle_len must be >= 2");
    PriorityGraph out = graph;
    for (;;) {
        const auto cycles = short_cycles(out, max_cycle_len);
        if (cycles.empty()) break;

        std::set<std::pair<int, int>> on_cycle;
        for (const auto& c : cycles)
            for (std::size_t k = 0; k < c.size(); ++k) {
                const int a = c[k];
                const int b = c[(k + 1) % c.size()];
                on_cycle.insert({std::min(a, b), std::max(a, b)});
            }

        const Arc* weakest = nullptr;
        const auto arcs = oriented_arcs(out);
        for (const auto& arc : arcs) {
            const std::pair<int, int> key{std::min(arc.dominant, arc.dominated),
                                          std::max(arc.dominant, arc.dominated)};
            if (!on_cycle.count(key)) continue;
            if (!weakest || arc.margin < weakest->margin) weakest = &arc;
        }
        const int a = weakest->dominant;
        const int b = weakest->dominated;
        for (auto& e : out.edges) {
            if ((e.from == a && e.to == b) || (e.from == b && e.to == a)) {
                e.p = 0.5;
                e.confidence = 0.0;
                e.preference = 0.0;
            }
        }
    }
    return out;
}

// --- labelling pipeline ---------------------------------------------------------

std::vector<std::pair<int, int>> interaction_pairs(std::span<const AgentSnapshot> agents,
                                                   const FieldParams& field) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& ego : agents) {
        std::vector<std::pair<double, int>> cand;
        for (const auto& other : agents) {
            if (other.id == ego.id) continue;
            const double d = std::hypot(other.pose.x - ego.pose.x, other.pose.y - ego.pose.y);
            if (d <= field.interaction_radius) cand.emplace_back(d, other.id);
        }
        std::sort(cand.begin(), cand.end());
        const std::size_t keep = std::min(cand.size(), static_cast<std::size_t>(field.max_neighbors));
        for (std::size_t k = 0; k < keep; ++k) pairs.emplace_back(cand[k].second, ego.id);
    }
    return pairs;
}

PriorityGraph build_labels(std::span<const AgentSnapshot> agents, const topo::WeaveParams& weave,
                           const FieldParams& field) {
    weave.validate();
    field.validate();
    PriorityGraph g;
    std::map<int, const AgentSnapshot*> by_id;
    for (const auto& a : agents) {
        if (!by_id.emplace(a.id, &a).second)
            throw InvalidInput("build_labels: duplicate agent id " + std::to_string(a.id));
        g.node_ids.push_back(a.id);
    }

    std::map<std::pair<int, int>, double> dist;  // (ego, nbr) -> d_{ego<-nbr}
    auto weave_dist = [&](int ego, int nbr) {
        auto [it, fresh] = dist.try_emplace({ego, nbr}, 0.0);
        if (fresh) {
            const auto* e = by_id.at(ego);
            const auto* n = by_id.at(nbr);
            it->second = topo::directed_weaving_distance(e->future, n->future, e->pose, weave);
        }
        return it->second;
    };

    for (const auto& [j, i] : interaction_pairs(agents, field)) {
        const auto pr = topo::pairwise_priority(weave_dist(i, j), weave_dist(j, i), weave.tau);
        DirectedEdge e = make_edge(j, i, pr.p_ij, field.alpha);
        e.preference = topo::preference_signal(pr.p_ij, pr.p_ji);
        g.edges.push_back(e);
    }

    g = decycle(g, field.max_cycle_len);
    g.scores = solve_score_field(g);
    return g;
}

// --- label files ----------------------------------------------------------------

std::vector<StepLabels> label_trajectories(std::span<const topo::TrajectoryRow> rows, const topo::WeaveParams& weave,
                                           const FieldParams& field) {
    if (rows.empty()) throw InvalidInput("label_trajectories: no trajectory rows");
    const auto by_agent = topo::group_by_agent(std::vector<topo::TrajectoryRow>(rows.begin(), rows.end()));
    std::set<long> times;
    for (const auto& r : rows) times.insert(r.t);

    std::vector<StepLabels> out;
    for (long t : times) {
        std::vector<AgentSnapshot> snaps;
        for (const auto& [id, traj] : by_agent) {
            auto it = std::lower_bound(traj.begin(), traj.end(), t,
                                       [](const topo::TrajectoryRow& r, long v) { return r.t < v; });
            if (it == traj.end() || it->t != t) continue;
            AgentSnapshot a;
            a.id = id;
            a.pose = topo::Pose2::make(it->x, it->y, it->heading);
            a.future.start_time = t;
            for (long u = t; it != traj.end() && it->t == u && u <= t + weave.horizon; ++it, ++u)
                a.future.positions.push_back({it->x, it->y});
            snaps.push_back(std::move(a));
        }
        out.push_back({t, build_labels(snaps, weave, field)});
    }
    return out;
}

void write_edge_labels_csv(std::ostream& out, std::span<const StepLabels> steps) {
    out << "t,i,j,p,c,A\n";
    out.precision(17);
    for (const auto& st : steps)
        for (const auto& e : st.graph.edges)
            out << st.t << ',' << e.to << ',' << e.from << ',' << e.p << ',' << e.confidence << ','
                << e.preference << '\n';
}

void write_node_labels_csv(std::ostream& out, std::span<const StepLabels> steps) {
    out << "t,i,s\n";
    out.precision(17);
    for (const auto& st : steps) {
        for (std::size_t k = 0; k < st.graph.node_ids.size(); ++k) {
            const double s = st.graph.scores ? (*st.graph.scores)[k] : 0.0;
            out << st.t << ',' << st.graph.node_ids[k] << ',' << s << '\n';
        }
    }
}

void write_labels_summary_json(std::ostream& out, std::span<const StepLabels> steps,
                               const topo::WeaveParams& weave, const FieldParams& field) {
    nlohmann::json j;
    j["format"] = "tsc-labels";
    j["version"] = 1;
    j["weave"] = {{"epsilon", weave.epsilon}, {"tau", weave.tau}, {"horizon", weave.horizon}};
    j["field"] = {{"alpha", field.alpha},
                  {"tau_s", field.tau_s},
                  {"interaction_radius", field.interaction_radius},
                  {"max_cycle_len", field.max_cycle_len},
                  {"max_neighbors", field.max_neighbors}};
    std::size_t n_edges = 0, n_neutral = 0;
    nlohmann::json per_step = nlohmann::json::array();
    for (const auto& st : steps) {
        std::size_t neutral = 0;
        for (const auto& e : st.graph.edges) neutral += (e.confidence == 0.0);
        n_edges += st.graph.edges.size();
        n_neutral += neutral;
        nlohmann::json s;
        s["t"] = st.t;
        s["nodes"] = st.graph.node_ids.size();
        s["edges"] = st.graph.edges.size();
        s["neutral_edges"] = neutral;
        s["scores"] = st.graph.scores.value_or(std::vector<double>{});
        per_step.push_back(std::move(s));
    }
    j["steps"] = steps.size();
    j["edges"] = n_edges;
    j["neutral_edges"] = n_neutral;
    j["per_step"] = std::move(per_step);
    out << j.dump(2) << '\n';
}

}  // namespace tsc::field
