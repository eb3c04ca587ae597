#include "tsc/tscnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsc/error.hpp"
#include "tsc/kernels.hpp"

namespace tsc::net {

namespace {

constexpr double kStdFloor = 1e-3;
constexpr double kLog2 = 0.69314718055994530942;
constexpr double kLog2Pi = 1.8378770664093454836;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// P points at a parameter block whose first element sits at layout offset `shift`.
void dense_fwd(const double* P, std::size_t shift, const Dense& d, const double* x, double* y) {
    kernels::table().gemv(P + (d.w - shift), static_cast<std::size_t>(d.out), static_cast<std::size_t>(d.in), x,
                          P + (d.b - shift), y);
    if (d.tanh_out)
        for (int i = 0; i < d.out; ++i) y[i] = std::tanh(y[i]);
}

// dy is taken w.r.t. the layer output y; dx (nullable) accumulates.
void dense_bwd(const double* P, const Dense& d, const double* x, const double* y, const double* dy,
               double* G, double* dx) {
    double buf[256];
    std::vector<double> heap;
    double* dpre = buf;
    if (d.out > 256) {
        heap.resize(static_cast<std::size_t>(d.out));
        dpre = heap.data();
    }
    for (int i = 0; i < d.out; ++i) {
        dpre[i] = d.tanh_out ? dy[i] * (1.0 - y[i] * y[i]) : dy[i];
        G[d.b + static_cast<std::size_t>(i)] += dpre[i];
    }
    const auto& k = kernels::table();
    k.ger_acc(dpre, static_cast<std::size_t>(d.out), x, static_cast<std::size_t>(d.in), G + d.w);
    if (dx) k.gemv_t_acc(P + d.w, static_cast<std::size_t>(d.out), static_cast<std::size_t>(d.in), dpre, dx);
}

std::size_t sz(int n) { return static_cast<std::size_t>(n); }

}  // namespace

void NetConfig::validate() const {
    auto pos = [](int v, const char* what) {
        if (v < 1) throw InvalidParameter(std::string("net config: ") + what + " must be >= 1");
    };
    pos(ego_features, "ego_features");
    pos(neighbor_features, "neighbor_features");
    pos(d_e, "d_e");
    pos(d_n, "d_n");
    pos(d_t, "d_t");
    pos(d_c, "d_c");
    pos(d_u, "d_u");
    pos(M, "M");
    pos(K, "K");
    pos(action_dim, "action_dim");
    for (int h : {hidden.ego_enc, hidden.nbr_enc, hidden.topo_dec, hidden.node_head, hidden.ego_dec,
                  hidden.policy, hidden.predict, hidden.value})
        pos(h, "hidden width");
    if (K > M) throw InvalidParameter("net config: K must not exceed M");
    if (!(delta_p >= 0.0 && delta_p < 0.5)) throw InvalidParameter("net config: delta_p must lie in [0, 0.5)");
    if (!(init_std > 0.0)) throw InvalidParameter("net config: init_std must be > 0");
}

Layout make_layout(const NetConfig& c) {
    c.validate();
    Layout L;
    std::size_t off = 0;
    auto add = [&](const std::string& name, int in, int out, bool tanh_out) {
        Dense d;
        d.in = in;
        d.out = out;
        d.tanh_out = tanh_out;
        d.w = off;
        L.views.push_back({name + ".W", off, out, in});
        off += sz(in) * sz(out);
        d.b = off;
        L.views.push_back({name + ".b", off, out, 1});
        off += sz(out);
        return d;
    };
    const auto& h = c.hidden;
    L.ego1 = add("ego_enc.0", c.ego_features, h.ego_enc, true);
    L.ego2 = add("ego_enc.1", h.ego_enc, c.d_e, true);
    L.nbr1 = add("nbr_enc.0", c.neighbor_features, h.nbr_enc, true);
    L.nbr2 = add("nbr_enc.1", h.nbr_enc, c.d_n, true);
    L.topo1 = add("topo_dec.0", c.d_e + c.d_n, h.topo_dec, true);
    L.topo2 = add("topo_dec.1", h.topo_dec, c.d_t, true);
    L.topo_head = add("topo_head", c.d_t, 1, false);
    L.node1 = add("node_head.0", c.d_e + c.d_t, h.node_head, true);
    L.node2 = add("node_head.1", h.node_head, 1, false);
    L.attn_q = add("attn.query", c.d_e, c.d_c, false);
    L.attn_k = add("attn.key", c.d_n, c.d_c, false);
    L.attn_v = add("attn.value", c.d_n, c.d_c, false);
    L.attn_out = add("attn.out", c.d_e + c.d_c, c.d_c, true);
    L.dec1 = add("ego_dec.0", c.d_c + 1, h.ego_dec, true);
    L.dec2 = add("ego_dec.1", h.ego_dec, c.d_u, true);
    L.pol1 = add("policy.0", c.d_u, h.policy, true);
    L.pol2 = add("policy.1", h.policy, 2 * c.action_dim, false);
    L.pred1 = add("predict.0", c.d_n + 1, h.predict, true);
    L.pred2 = add("predict.1", h.predict, c.action_dim, true);
    L.value_begin = off;
    L.val1 = add("value.0", c.value_inputs(), h.value, true);
    L.val2 = add("value.1", h.value, 1, false);
    L.value_end = off;
    L.total = off;
    return L;
}

// --- ParamStore -----------------------------------------------------------------

ParamStore::ParamStore(NetConfig cfg)
    : cfg_(cfg), layout_(make_layout(cfg_)), values_(layout_.total, 0.0),
      target_(layout_.value_end - layout_.value_begin, 0.0) {}

std::span<double> ParamStore::array(const std::string& name) {
    for (const auto& v : layout_.views)
        if (v.name == name) return std::span<double>(values_).subspan(v.offset, v.size());
    throw InvalidInput("unknown parameter array '" + name + "'");
}

std::span<const double> ParamStore::array(const std::string& name) const {
    for (const auto& v : layout_.views)
        if (v.name == name) return std::span<const double>(values_).subspan(v.offset, v.size());
    throw InvalidInput("unknown parameter array '" + name + "'");
}

void ParamStore::initialize(std::mt19937_64& rng) {
    std::fill(values_.begin(), values_.end(), 0.0);
    for (const auto& v : layout_.views) {
        if (v.cols == 1 && v.name.ends_with(".b")) continue;
        const double lim = std::sqrt(6.0 / static_cast<double>(v.rows + v.cols));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (std::size_t k = 0; k < v.size(); ++k) values_[v.offset + k] = u(rng);
    }
    // Small initial means; std starts at init_std.
    const Dense& p = layout_.pol2;
    for (int r = 0; r < cfg_.action_dim; ++r)
        for (int c = 0; c < p.in; ++c) values_[p.w + sz(r) * sz(p.in) + sz(c)] *= 0.01;
    const double s = cfg_.init_std - kStdFloor;
    const double raw = s > 30.0 ? s : std::log(std::expm1(s));
    for (int r = cfg_.action_dim; r < 2 * cfg_.action_dim; ++r) {
        for (int c = 0; c < p.in; ++c) values_[p.w + sz(r) * sz(p.in) + sz(c)] = 0.0;
        values_[p.b + sz(r)] = raw;
    }
    sync_target();
}

void ParamStore::soft_update_target(double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidParameter("target update coefficient must lie in [0, 1]");
    for (std::size_t k = 0; k < target_.size(); ++k) {
        const double online = values_[layout_.value_begin + k];
        target_[k] = rho == 1.0 ? online : (1.0 - rho) * target_[k] + rho * online;
    }
}

void ParamStore::sync_target() {
    std::copy(values_.begin() + static_cast<std::ptrdiff_t>(layout_.value_begin),
              values_.begin() + static_cast<std::ptrdiff_t>(layout_.value_end), target_.begin());
}

bool ParamStore::finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    for (double v : target_)
        if (!std::isfinite(v)) return false;
    return true;
}

// --- discrete pieces ------------------------------------------------------------

std::vector<int> topk_select(std::span<const double> priority, std::span<const double> valid, int K) {
    if (priority.size() != valid.size()) throw InvalidInput("topk_select: size mismatch");
    if (K < 0) throw InvalidParameter("topk_select: K must be >= 0");
    std::vector<int> slots;
    for (std::size_t k = 0; k < valid.size(); ++k)
        if (valid[k] != 0.0) slots.push_back(static_cast<int>(k));
    std::stable_sort(slots.begin(), slots.end(), [&](int a, int b) { return priority[sz(a)] > priority[sz(b)]; });
    if (slots.size() > sz(K)) slots.resize(sz(K));
    return slots;
}

std::vector<int> leader_set(std::span<const double> priority, std::span<const int> selected, double delta_p) {
    std::vector<int> ranks;
    for (std::size_t r = 0; r < selected.size(); ++r)
        if (priority[sz(selected[r])] > 0.5 + delta_p) ranks.push_back(static_cast<int>(r));
    return ranks;
}

// --- forward ------------------------------------------------------------------------

NetInput make_input(const sim::Observation& obs) {
    return NetInput{obs.ego, obs.neighbors, obs.valid, {}};
}

Forward forward(const ParamStore& params, NetInput input) {
    const NetConfig& c = params.config();
    const Layout& L = params.layout();
    const double* P = params.values().data();
    if (input.ego.size() != sz(c.ego_features) || input.neighbors.size() != sz(c.M * c.neighbor_features) ||
        input.valid.size() != sz(c.M))
        throw InvalidInput("forward: input does not match the network dimensions");
    if (!input.priority_override.empty() && input.priority_override.size() != sz(c.M))
        throw InvalidInput("forward: priority override must have M entries");

    Forward f;
    f.in = std::move(input);
    const int M = c.M;

    f.ego_a1.resize(sz(L.ego1.out));
    f.h_i.resize(sz(c.d_e));
    dense_fwd(P, 0, L.ego1, f.in.ego.data(), f.ego_a1.data());
    dense_fwd(P, 0, L.ego2, f.ego_a1.data(), f.h_i.data());

    f.nbr_a1.assign(sz(M * L.nbr1.out), 0.0);
    f.h_nbr.assign(sz(M * c.d_n), 0.0);
    f.topo_in.resize(sz(M * L.topo1.in));
    f.topo_a1.resize(sz(M * L.topo1.out));
    f.q.resize(sz(M * c.d_t));
    f.logit.resize(sz(M));
    f.p_hat.resize(sz(M));
    f.q_bar.assign(sz(c.d_t), 0.0);
    int n_valid = 0;
    for (int k = 0; k < M; ++k) {
        double* a1 = f.nbr_a1.data() + sz(k * L.nbr1.out);
        double* h = f.h_nbr.data() + sz(k * c.d_n);
        dense_fwd(P, 0, L.nbr1, f.in.neighbors.data() + sz(k * c.neighbor_features), a1);
        dense_fwd(P, 0, L.nbr2, a1, h);
        const double v = f.in.valid[sz(k)];
        for (int d = 0; d < c.d_n; ++d) h[d] *= v;

        double* tin = f.topo_in.data() + sz(k * L.topo1.in);
        std::copy(f.h_i.begin(), f.h_i.end(), tin);
        std::copy(h, h + c.d_n, tin + c.d_e);
        double* ta = f.topo_a1.data() + sz(k * L.topo1.out);
        double* q = f.q.data() + sz(k * c.d_t);
        dense_fwd(P, 0, L.topo1, tin, ta);
        dense_fwd(P, 0, L.topo2, ta, q);
        dense_fwd(P, 0, L.topo_head, q, &f.logit[sz(k)]);
        f.p_hat[sz(k)] = v != 0.0 ? sigmoid(f.logit[sz(k)]) : 0.5;
        if (v != 0.0) {
            ++n_valid;
            for (int d = 0; d < c.d_t; ++d) f.q_bar[sz(d)] += q[d];
        }
    }
    if (n_valid > 0)
        for (auto& x : f.q_bar) x /= n_valid;

    f.node_in.resize(sz(L.node1.in));
    std::copy(f.h_i.begin(), f.h_i.end(), f.node_in.begin());
    std::copy(f.q_bar.begin(), f.q_bar.end(), f.node_in.begin() + c.d_e);
    f.node_a1.resize(sz(L.node1.out));
    dense_fwd(P, 0, L.node1, f.node_in.data(), f.node_a1.data());
    dense_fwd(P, 0, L.node2, f.node_a1.data(), &f.s_hat);

    f.priority = f.in.priority_override.empty() ? f.p_hat : f.in.priority_override;
    f.selected = topk_select(f.priority, f.in.valid, c.K);
    const int n_sel = static_cast<int>(f.selected.size());

    f.ctx.assign(sz(c.d_c), 0.0);
    f.attn_qv.assign(sz(c.d_c), 0.0);
    f.attn_kv.assign(sz(n_sel * c.d_c), 0.0);
    f.attn_vv.assign(sz(n_sel * c.d_c), 0.0);
    f.attn_w.assign(sz(n_sel), 0.0);
    if (n_sel > 0) {
        dense_fwd(P, 0, L.attn_q, f.h_i.data(), f.attn_qv.data());
        const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_c));
        double mx = -INFINITY;
        for (int r = 0; r < n_sel; ++r) {
            const double* h = f.h_nbr.data() + sz(f.selected[sz(r)] * c.d_n);
            dense_fwd(P, 0, L.attn_k, h, f.attn_kv.data() + sz(r * c.d_c));
            dense_fwd(P, 0, L.attn_v, h, f.attn_vv.data() + sz(r * c.d_c));
            f.attn_w[sz(r)] = kernels::table().dot(f.attn_qv.data(), f.attn_kv.data() + sz(r * c.d_c), sz(c.d_c)) * scale;
            mx = std::max(mx, f.attn_w[sz(r)]);
        }
        double z = 0.0;
        for (auto& w : f.attn_w) z += (w = std::exp(w - mx));
        for (auto& w : f.attn_w) w /= z;
        for (int r = 0; r < n_sel; ++r)
            for (int d = 0; d < c.d_c; ++d) f.ctx[sz(d)] += f.attn_w[sz(r)] * f.attn_vv[sz(r * c.d_c + d)];
    }
    f.attn_in.resize(sz(L.attn_out.in));
    std::copy(f.h_i.begin(), f.h_i.end(), f.attn_in.begin());
    std::copy(f.ctx.begin(), f.ctx.end(), f.attn_in.begin() + c.d_e);
    f.C.resize(sz(c.d_c));
    dense_fwd(P, 0, L.attn_out, f.attn_in.data(), f.C.data());

    f.dec_in.resize(sz(L.dec1.in));
    std::copy(f.C.begin(), f.C.end(), f.dec_in.begin());
    f.dec_in.back() = f.s_hat;
    f.dec_a1.resize(sz(L.dec1.out));
    f.u.resize(sz(c.d_u));
    dense_fwd(P, 0, L.dec1, f.dec_in.data(), f.dec_a1.data());
    dense_fwd(P, 0, L.dec2, f.dec_a1.data(), f.u.data());

    const int A = c.action_dim;
    f.pol_a1.resize(sz(L.pol1.out));
    f.pol_out.resize(sz(2 * A));
    dense_fwd(P, 0, L.pol1, f.u.data(), f.pol_a1.data());
    dense_fwd(P, 0, L.pol2, f.pol_a1.data(), f.pol_out.data());
    f.mean.assign(f.pol_out.begin(), f.pol_out.begin() + A);
    f.std_raw.assign(f.pol_out.begin() + A, f.pol_out.end());
    f.stddev.resize(sz(A));
    for (int a = 0; a < A; ++a) f.stddev[sz(a)] = softplus(f.std_raw[sz(a)]) + kStdFloor;

    if (c.stackelberg) f.leaders = leader_set(f.priority, f.selected, c.delta_p);

    f.pred_in.resize(sz(n_sel * L.pred1.in));
    f.pred_a1.resize(sz(n_sel * L.pred1.out));
    f.a_hat.resize(sz(n_sel * A));
    for (int r = 0; r < n_sel; ++r) {
        const int slot = f.selected[sz(r)];
        double* in = f.pred_in.data() + sz(r * L.pred1.in);
        std::copy_n(f.h_nbr.data() + sz(slot * c.d_n), c.d_n, in);
        in[c.d_n] = f.p_hat[sz(slot)];
        double* a1 = f.pred_a1.data() + sz(r * L.pred1.out);
        dense_fwd(P, 0, L.pred1, in, a1);
        dense_fwd(P, 0, L.pred2, a1, f.a_hat.data() + sz(r * A));
    }

    f.val_in.assign(sz(L.val1.in), 0.0);
    std::copy(f.u.begin(), f.u.end(), f.val_in.begin());
    for (int r : f.leaders)
        std::copy_n(f.a_hat.data() + sz(r * A), A, f.val_in.data() + c.d_u + r * A);
    f.val_in.back() = static_cast<double>(f.leaders.size()) / c.K;
    f.val_a1.resize(sz(L.val1.out));
    dense_fwd(P, 0, L.val1, f.val_in.data(), f.val_a1.data());
    dense_fwd(P, 0, L.val2, f.val_a1.data(), &f.value);
    return f;
}

double value_with(const ParamStore& params, const Forward& f, bool use_target) {
    if (!use_target) return f.value;
    const Layout& L = params.layout();
    const double* T = params.target().data();
    std::vector<double> a1(sz(L.val1.out));
    double v = 0.0;
    dense_fwd(T, L.value_begin, L.val1, f.val_in.data(), a1.data());
    dense_fwd(T, L.value_begin, L.val2, a1.data(), &v);
    return v;
}

// --- backward -----------------------------------------------------------------------

OutputGrad::OutputGrad(const Forward& f, int action_dim)
    : d_logit(f.logit.size(), 0.0), d_mean(sz(action_dim), 0.0), d_std(sz(action_dim), 0.0),
      d_a_hat(f.selected.size() * sz(action_dim), 0.0) {}

void backward(const ParamStore& params, const Forward& f, const OutputGrad& g, std::span<double> grad) {
    const NetConfig& c = params.config();
    const Layout& L = params.layout();
    const double* P = params.values().data();
    double* G = grad.data();
    if (grad.size() != params.size()) throw InvalidInput("backward: gradient buffer has the wrong size");
    const int M = c.M;
    const int A = c.action_dim;
    const int n_sel = static_cast<int>(f.selected.size());

    std::vector<double> d_u(sz(c.d_u), 0.0);
    std::vector<double> d_h_i(sz(c.d_e), 0.0);
    std::vector<double> d_h_nbr(sz(M * c.d_n), 0.0);
    std::vector<double> d_p_hat(sz(M), 0.0);
    double d_s_hat = g.d_s_hat;

    // Critic. Leader actions enter as constants.
    if (g.d_value != 0.0) {
        std::vector<double> d_a1(sz(L.val1.out), 0.0), d_in(sz(L.val1.in), 0.0);
        dense_bwd(P, L.val2, f.val_a1.data(), &f.value, &g.d_value, G, d_a1.data());
        dense_bwd(P, L.val1, f.val_in.data(), f.val_a1.data(), d_a1.data(), G, d_in.data());
        for (int d = 0; d < c.d_u; ++d) d_u[sz(d)] += d_in[sz(d)];
    }

    // Policy head.
    {
        std::vector<double> d_out(sz(2 * A), 0.0);
        bool any = false;
        for (int a = 0; a < A; ++a) {
            d_out[sz(a)] = g.d_mean[sz(a)];
            d_out[sz(A + a)] = g.d_std[sz(a)] * sigmoid(f.std_raw[sz(a)]);
            any |= d_out[sz(a)] != 0.0 || d_out[sz(A + a)] != 0.0;
        }
        if (any) {
            std::vector<double> d_a1(sz(L.pol1.out), 0.0);
            dense_bwd(P, L.pol2, f.pol_a1.data(), f.pol_out.data(), d_out.data(), G, d_a1.data());
            dense_bwd(P, L.pol1, f.u.data(), f.pol_a1.data(), d_a1.data(), G, d_u.data());
        }
    }

    // Leader action predictor.
    for (int r = 0; r < n_sel; ++r) {
        const double* dy = g.d_a_hat.data() + sz(r * A);
        if (std::all_of(dy, dy + A, [](double x) { return x == 0.0; })) continue;
        const int slot = f.selected[sz(r)];
        std::vector<double> d_a1(sz(L.pred1.out), 0.0), d_in(sz(L.pred1.in), 0.0);
        dense_bwd(P, L.pred2, f.pred_a1.data() + sz(r * L.pred1.out), f.a_hat.data() + sz(r * A), dy, G,
                  d_a1.data());
        dense_bwd(P, L.pred1, f.pred_in.data() + sz(r * L.pred1.in), f.pred_a1.data() + sz(r * L.pred1.out),
                  d_a1.data(), G, d_in.data());
        for (int d = 0; d < c.d_n; ++d) d_h_nbr[sz(slot * c.d_n + d)] += d_in[sz(d)];
        d_p_hat[sz(slot)] += d_in[sz(c.d_n)];
    }

    // Ego decoder.
    std::vector<double> d_C(sz(c.d_c), 0.0);
    if (std::any_of(d_u.begin(), d_u.end(), [](double x) { return x != 0.0; })) {
        std::vector<double> d_a1(sz(L.dec1.out), 0.0), d_in(sz(L.dec1.in), 0.0);
        dense_bwd(P, L.dec2, f.dec_a1.data(), f.u.data(), d_u.data(), G, d_a1.data());
        dense_bwd(P, L.dec1, f.dec_in.data(), f.dec_a1.data(), d_a1.data(), G, d_in.data());
        std::copy_n(d_in.begin(), c.d_c, d_C.begin());
        d_s_hat += d_in[sz(c.d_c)];
    }

    // Attention.
    if (std::any_of(d_C.begin(), d_C.end(), [](double x) { return x != 0.0; })) {
        std::vector<double> d_in(sz(L.attn_out.in), 0.0);
        dense_bwd(P, L.attn_out, f.attn_in.data(), f.C.data(), d_C.data(), G, d_in.data());
        for (int d = 0; d < c.d_e; ++d) d_h_i[sz(d)] += d_in[sz(d)];
        if (n_sel > 0) {
            const double* d_ctx = d_in.data() + c.d_e;
            const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_c));
            std::vector<double> d_w(sz(n_sel), 0.0);
            double wd = 0.0;
            for (int r = 0; r < n_sel; ++r) {
                d_w[sz(r)] = kernels::table().dot(f.attn_vv.data() + sz(r * c.d_c), d_ctx, sz(c.d_c));
                wd += f.attn_w[sz(r)] * d_w[sz(r)];
            }
            std::vector<double> d_q(sz(c.d_c), 0.0), d_k(sz(c.d_c)), d_v(sz(c.d_c));
            for (int r = 0; r < n_sel; ++r) {
                const int slot = f.selected[sz(r)];
                const double w = f.attn_w[sz(r)];
                const double d_score = w * (d_w[sz(r)] - wd) * scale;
                const double* kr = f.attn_kv.data() + sz(r * c.d_c);
                for (int d = 0; d < c.d_c; ++d) {
                    d_q[sz(d)] += d_score * kr[d];
                    d_k[sz(d)] = d_score * f.attn_qv[sz(d)];
                    d_v[sz(d)] = w * d_ctx[d];
                }
                const double* h = f.h_nbr.data() + sz(slot * c.d_n);
                double* dh = d_h_nbr.data() + sz(slot * c.d_n);
                dense_bwd(P, L.attn_k, h, kr, d_k.data(), G, dh);
                dense_bwd(P, L.attn_v, h, f.attn_vv.data() + sz(r * c.d_c), d_v.data(), G, dh);
            }
            dense_bwd(P, L.attn_q, f.h_i.data(), f.attn_qv.data(), d_q.data(), G, d_h_i.data());
        }
    }

    // Node head.
    std::vector<double> d_q(sz(M * c.d_t), 0.0);
    int n_valid = 0;
    for (int k = 0; k < M; ++k) n_valid += f.in.valid[sz(k)] != 0.0;
    if (d_s_hat != 0.0) {
        std::vector<double> d_a1(sz(L.node1.out), 0.0), d_in(sz(L.node1.in), 0.0);
        dense_bwd(P, L.node2, f.node_a1.data(), &f.s_hat, &d_s_hat, G, d_a1.data());
        dense_bwd(P, L.node1, f.node_in.data(), f.node_a1.data(), d_a1.data(), G, d_in.data());
        for (int d = 0; d < c.d_e; ++d) d_h_i[sz(d)] += d_in[sz(d)];
        if (n_valid > 0)
            for (int k = 0; k < M; ++k) {
                if (f.in.valid[sz(k)] == 0.0) continue;
                for (int d = 0; d < c.d_t; ++d) d_q[sz(k * c.d_t + d)] += d_in[sz(c.d_e + d)] / n_valid;
            }
    }

    // Topology decoder and neighbor encoder, valid slots only.
    for (int k = 0; k < M; ++k) {
        if (f.in.valid[sz(k)] == 0.0) continue;
        const double p = f.p_hat[sz(k)];
        const double d_logit = g.d_logit[sz(k)] + d_p_hat[sz(k)] * p * (1.0 - p);
        double* dq = d_q.data() + sz(k * c.d_t);
        const double* q = f.q.data() + sz(k * c.d_t);
        if (d_logit != 0.0) dense_bwd(P, L.topo_head, q, &f.logit[sz(k)], &d_logit, G, dq);
        if (std::any_of(dq, dq + c.d_t, [](double x) { return x != 0.0; })) {
            std::vector<double> d_a1(sz(L.topo1.out), 0.0), d_in(sz(L.topo1.in), 0.0);
            dense_bwd(P, L.topo2, f.topo_a1.data() + sz(k * L.topo1.out), q, dq, G, d_a1.data());
            dense_bwd(P, L.topo1, f.topo_in.data() + sz(k * L.topo1.in), f.topo_a1.data() + sz(k * L.topo1.out),
                      d_a1.data(), G, d_in.data());
            for (int d = 0; d < c.d_e; ++d) d_h_i[sz(d)] += d_in[sz(d)];
            for (int d = 0; d < c.d_n; ++d) d_h_nbr[sz(k * c.d_n + d)] += d_in[sz(c.d_e + d)];
        }
        const double* dh = d_h_nbr.data() + sz(k * c.d_n);
        if (std::any_of(dh, dh + c.d_n, [](double x) { return x != 0.0; })) {
            std::vector<double> d_a1(sz(L.nbr1.out), 0.0);
            const double* a1 = f.nbr_a1.data() + sz(k * L.nbr1.out);
            dense_bwd(P, L.nbr2, a1, f.h_nbr.data() + sz(k * c.d_n), dh, G, d_a1.data());
            dense_bwd(P, L.nbr1, f.in.neighbors.data() + sz(k * c.neighbor_features), a1, d_a1.data(), G, nullptr);
        }
    }

    if (std::any_of(d_h_i.begin(), d_h_i.end(), [](double x) { return x != 0.0; })) {
        std::vector<double> d_a1(sz(L.ego1.out), 0.0);
        dense_bwd(P, L.ego2, f.ego_a1.data(), f.h_i.data(), d_h_i.data(), G, d_a1.data());
        dense_bwd(P, L.ego1, f.in.ego.data(), f.ego_a1.data(), d_a1.data(), G, nullptr);
    }
}

// --- policy ---------------------------------------------------------------------------

double squashed_log_prob(std::span<const double> mean, std::span<const double> stddev, std::span<const double> raw) {
    if (mean.size() != stddev.size() || mean.size() != raw.size())
        throw InvalidInput("squashed_log_prob: size mismatch");
    double lp = 0.0;
    for (std::size_t a = 0; a < mean.size(); ++a) {
        const double z = (raw[a] - mean[a]) / stddev[a];
        const double log_jac = 2.0 * (kLog2 - raw[a] - softplus(-2.0 * raw[a]));
        lp += -0.5 * z * z - std::log(stddev[a]) - 0.5 * kLog2Pi - log_jac;
    }
    return lp;
}

PolicyOutput sample_policy(const Forward& f, std::mt19937_64& rng) {
    PolicyOutput out{f.mean, f.stddev, {}, {}, 0.0};
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t a = 0; a < f.mean.size(); ++a) {
        const double z = f.mean[a] + f.stddev[a] * n(rng);
        out.raw.push_back(z);
        out.action.push_back(std::tanh(z));
    }
    out.log_prob = squashed_log_prob(out.mean, out.stddev, out.raw);
    return out;
}

PolicyOutput deterministic_policy(const Forward& f) {
    PolicyOutput out{f.mean, f.stddev, f.mean, {}, 0.0};
    for (double m : f.mean) out.action.push_back(std::tanh(m));
    out.log_prob = squashed_log_prob(out.mean, out.stddev, out.raw);
    return out;
}

// --- losses ---------------------------------------------------------------------------

void LossWeights::validate() const {
    for (double x : {lambda_V, lambda_topo, lambda_lead, lambda_node, lambda_cons})
        if (!(x >= 0.0)) throw InvalidParameter("loss weights must be nonnegative");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidParameter("gamma must lie in [0, 1]");
    if (!(tau_s > 0.0)) throw InvalidParameter("tau_s must be > 0");
}

TopoLoss loss_topo(const TopoBatch& b, double lambda_node, double lambda_cons, double tau_s) {
    const std::size_t rows = b.rows();
    const std::size_t M = sz(b.M);
    if (b.logits.size() != rows * M || b.valid.size() != rows * M || b.neighbor_row.size() != rows * M ||
        b.p_label.size() != rows * M || b.edge_mask.size() != rows * M || b.s_label.size() != rows)
        throw InvalidInput("loss_topo: inconsistent batch sizes");
    TopoLoss out;
    out.d_logits.assign(rows * M, 0.0);
    out.d_s_hat.assign(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double ds = b.s_hat[i] - b.s_label[i];
        out.node += ds * ds;
        out.d_s_hat[i] += lambda_node * 2.0 * ds;
        for (std::size_t k = 0; k < M; ++k) {
            const std::size_t e = i * M + k;
            if (b.valid[e] == 0.0) continue;
            const double p = b.p_label[e];
            if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("loss_topo: edge label outside [0, 1]");
            const double x = b.logits[e];
            const double p_hat = sigmoid(x);
            if (b.edge_mask[e] != 0.0) {
                // -p log p_hat - (1-p) log(1-p_hat) in logit form
                out.edge += softplus(x) - p * x;
                out.d_logits[e] += p_hat - p;
            }
            const int j = b.neighbor_row[e];
            if (j < 0) continue;
            const double s_i = b.s_hat[i];
            const double s_j = b.s_hat[sz(j)];
            const double tilde = sigmoid((s_j - s_i) / tau_s);
            const double r = p_hat - tilde;
            out.cons += r * r;
            out.d_logits[e] += lambda_cons * 2.0 * r * p_hat * (1.0 - p_hat);
            const double dt = -lambda_cons * 2.0 * r * tilde * (1.0 - tilde) / tau_s;
            out.d_s_hat[sz(j)] += dt;
            out.d_s_hat[i] -= dt;
        }
    }
    out.total = out.edge + lambda_node * out.node + lambda_cons * out.cons;
    return out;
}

LeadLoss loss_lead(std::span<const double> a_hat, std::span<const double> realized, std::span<const double> mask,
                   int action_dim) {
    if (a_hat.size() != realized.size() || a_hat.size() != mask.size() * sz(action_dim))
        throw InvalidInput("loss_lead: inconsistent sizes");
    LeadLoss out;
    out.d_a_hat.assign(a_hat.size(), 0.0);
    for (std::size_t r = 0; r < mask.size(); ++r) {
        if (mask[r] == 0.0) continue;
        for (int a = 0; a < action_dim; ++a) {
            const std::size_t k = r * sz(action_dim) + sz(a);
            const double d = a_hat[k] - realized[k];
            out.value += d * d;
            out.d_a_hat[k] = 2.0 * d;
        }
    }
    return out;
}

TdResult td_target_and_advantage(std::span<const double> reward, std::span<const double> terminal,
                                 std::span<const double> value, std::span<const double> next_target_value,
                                 double gamma) {
    const std::size_t n = reward.size();
    if (terminal.size() != n || value.size() != n || next_target_value.size() != n)
        throw InvalidInput("td_target_and_advantage: size mismatch");
    TdResult out;
    out.y.resize(n);
    out.advantage.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.y[i] = terminal[i] != 0.0 ? reward[i] : reward[i] + gamma * next_target_value[i];
        out.advantage[i] = out.y[i] - value[i];
    }
    return out;
}

Targets compute_targets(const ParamStore& params, std::span<const StepGroup> groups, const LossWeights& w) {
    const NetConfig& c = params.config();
    std::vector<double> r, term, v, vn;
    std::vector<std::vector<double>> leader_input;
    for (const auto& g : groups)
        for (const auto& s : g.samples) {
            const Forward f = forward(params, s.input);
            leader_input.emplace_back(f.val_in.begin() + c.d_u, f.val_in.begin() + c.d_u + c.K * c.action_dim);
            r.push_back(s.reward);
            term.push_back(s.terminal ? 1.0 : 0.0);
            v.push_back(f.value);
            if (s.terminal) {
                vn.push_back(0.0);
            } else {
                const Forward fn = forward(params, s.next_input);
                vn.push_back(value_with(params, fn, true));
            }
        }
    auto td = td_target_and_advantage(r, term, v, vn, w.gamma);
    return {std::move(td.y), std::move(td.advantage), std::move(leader_input)};
}

LossTerms total_loss(const ParamStore& params, std::span<const StepGroup> groups, const Targets& targets,
                     const LossWeights& w, std::span<double> grad) {
    w.validate();
    const NetConfig& c = params.config();
    const int M = c.M;
    const int A = c.action_dim;

    std::vector<Forward> fs;
    TopoBatch tb;
    tb.M = M;
    for (const auto& g : groups) {
        const std::size_t base = fs.size();
        for (const auto& s : g.samples) {
            if (s.neighbor_ids.size() != sz(M) || s.p_label.size() != sz(M) || s.edge_mask.size() != sz(M) ||
                s.raw_action.size() != sz(A) || s.realized.size() != sz(M * A))
                throw InvalidInput("total_loss: sample does not match the network dimensions");
            fs.push_back(forward(params, s.input));
            const Forward& f = fs.back();
            tb.logits.insert(tb.logits.end(), f.logit.begin(), f.logit.end());
            tb.valid.insert(tb.valid.end(), s.input.valid.begin(), s.input.valid.end());
            for (int k = 0; k < M; ++k) {
                int row = -1;
                const int id = s.neighbor_ids[sz(k)];
                if (id >= 0 && s.input.valid[sz(k)] != 0.0)
                    for (std::size_t q = 0; q < g.samples.size(); ++q)
                        if (g.samples[q].agent == id) row = static_cast<int>(base + q);
                tb.neighbor_row.push_back(row);
            }
            tb.s_hat.push_back(f.s_hat);
            tb.p_label.insert(tb.p_label.end(), s.p_label.begin(), s.p_label.end());
            tb.edge_mask.insert(tb.edge_mask.end(), s.edge_mask.begin(), s.edge_mask.end());
            tb.s_label.push_back(s.s_label);
        }
    }
    if (targets.y.size() != fs.size() || targets.advantage.size() != fs.size() ||
        targets.leader_input.size() != fs.size())
        throw InvalidInput("total_loss: targets do not match the batch");
    const Layout& L = params.layout();
    for (std::size_t k = 0; k < fs.size(); ++k) {
        Forward& f = fs[k];
        if (targets.leader_input[k].size() != sz(c.K * A)) throw InvalidInput("total_loss: bad leader input");
        std::copy(targets.leader_input[k].begin(), targets.leader_input[k].end(), f.val_in.begin() + c.d_u);
        dense_fwd(params.values().data(), 0, L.val1, f.val_in.data(), f.val_a1.data());
        dense_fwd(params.values().data(), 0, L.val2, f.val_a1.data(), &f.value);
    }

    const TopoLoss topo = loss_topo(tb, w.lambda_node, w.lambda_cons, w.tau_s);
    LossTerms out;
    out.samples = fs.size();
    out.edge = topo.edge;
    out.node = topo.node;
    out.cons = topo.cons;
    out.topo = topo.total;

    const bool want_grad = !grad.empty();
    std::size_t row = 0;
    for (const auto& g : groups)
        for (const auto& s : g.samples) {
            const Forward& f = fs[row];
            const double adv = targets.advantage[row];
            const double y = targets.y[row];

            out.policy -= squashed_log_prob(f.mean, f.stddev, s.raw_action) * adv;
            const double dv = f.value - y;
            out.value += dv * dv;

            const std::size_t n_sel = f.selected.size();
            std::vector<double> realized(n_sel * sz(A), 0.0), mask(n_sel, 0.0);
            for (int r : f.leaders) {
                mask[sz(r)] = 1.0;
                std::copy_n(s.realized.data() + sz(f.selected[sz(r)] * A), A, realized.data() + sz(r * A));
            }
            const LeadLoss lead = loss_lead(f.a_hat, realized, mask, A);
            out.lead += lead.value;

            if (want_grad) {
                OutputGrad og(f, A);
                for (int k = 0; k < M; ++k) og.d_logit[sz(k)] = w.lambda_topo * topo.d_logits[row * sz(M) + sz(k)];
                og.d_s_hat = w.lambda_topo * topo.d_s_hat[row];
                for (int a = 0; a < A; ++a) {
                    const double sd = f.stddev[sz(a)];
                    const double z = (s.raw_action[sz(a)] - f.mean[sz(a)]) / sd;
                    og.d_mean[sz(a)] = -adv * z / sd;
                    og.d_std[sz(a)] = -adv * (z * z - 1.0) / sd;
                }
                og.d_value = w.lambda_V * 2.0 * dv;
                for (std::size_t k = 0; k < og.d_a_hat.size(); ++k) og.d_a_hat[k] = w.lambda_lead * lead.d_a_hat[k];
                backward(params, f, og, grad);
            }
            ++row;
        }
    out.total = out.policy + w.lambda_V * out.value + w.lambda_topo * out.topo + w.lambda_lead * out.lead;
    return out;
}

}  // namespace tsc::net
