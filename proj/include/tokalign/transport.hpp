// Entropic-regularized optimal transport for the EMD weighting strategy.
//
// sinkhorn() runs log-domain updates (stable at small epsilon, cost entries
// in [0,2] for unit-norm tokens) and finishes with a feasibility rounding
// step, so returned plans always satisfy the marginal constraints exactly up
// to float rounding. exact_ot_small() enumerates spanning-tree basic
// solutions of the transportation polytope and is the test oracle.

#pragma once

#include <bit>
#include <cmath>
#include <limits>
#include <vector>

#include "tokalign/core.hpp"
#include "tokalign/types.hpp"

namespace tokalign {

struct TransportConfig {
    double epsilon = 0.05;  // entropic regularization
    int max_iters = 500;
    double tol = 1e-6;    // marginal residual threshold
    double floor = 1e-3;  // marginal clamp before normalization
};

template <class Scalar>
struct TransportPlan {
    Mat<Scalar> t;                 // l1 x l2, >= 0
    Scalar cost = 0;               // sum (1 - c) .* t
    Scalar marginal_residual = 0;  // of the returned (rounded) plan
    bool converged = false;        // pre-rounding residual reached tol
    // Residual after each full row+column update, pre-rounding.
    std::vector<Scalar> residual_history;
};

using TransportPland = TransportPlan<double>;

// Clamp each weight to at least `floor`, then rescale to a probability
// vector. Guarantees a feasible balanced transport problem even when the
// raw token weights are negative.
template <class Scalar>
std::pair<Vec<Scalar>, Vec<Scalar>> prepare_marginals(const TokenWeights<Scalar>& w,
                                                      double floor) {
    if (w.d.size() == 0 || w.e.size() == 0)
        throw EmptySequence("prepare_marginals: empty weights");
    if (floor <= 0) throw InvalidParameter("prepare_marginals: floor must be > 0");
    Vec<Scalar> d = w.d.cwiseMax(Scalar(floor));
    Vec<Scalar> e = w.e.cwiseMax(Scalar(floor));
    d /= d.sum();
    e /= e.sum();
    return {d, e};
}

namespace detail {

// max(||rowsums - d||_inf, ||colsums - e||_inf)
template <class Scalar>
Scalar marginal_residual(const Mat<Scalar>& t, const Vec<Scalar>& d,
                         const Vec<Scalar>& e) {
    const Scalar row = (t.rowwise().sum() - d).cwiseAbs().maxCoeff();
    const Scalar col = (t.colwise().sum().transpose() - e).cwiseAbs().maxCoeff();
    return std::max(row, col);
}

// Scale rows then columns down to their targets and spread the leftover mass
// as a rank-one correction (Altschuler et al.'s rounding). The result lies
// exactly in the transportation polytope up to float rounding.
template <class Scalar>
void round_to_feasible(Mat<Scalar>& t, const Vec<Scalar>& d, const Vec<Scalar>& e) {
    const Vec<Scalar> rows = t.rowwise().sum();
    for (Index i = 0; i < t.rows(); ++i)
        if (rows[i] > d[i] && rows[i] > 0) t.row(i) *= d[i] / rows[i];
    const Vec<Scalar> cols = t.colwise().sum().transpose();
    for (Index j = 0; j < t.cols(); ++j)
        if (cols[j] > e[j] && cols[j] > 0) t.col(j) *= e[j] / cols[j];
    Vec<Scalar> err_r = d - t.rowwise().sum();
    Vec<Scalar> err_c = e - t.colwise().sum().transpose();
    const Scalar mass = err_r.sum();
    if (mass > Scalar(0)) t += err_r * err_c.transpose() / mass;
    t = t.cwiseMax(Scalar(0));
}

}  // namespace detail

// Minimize sum (1 - c) .* T over the polytope {T >= 0, T1 = d, T'1 = e}
// with entropy regularization epsilon. d and e must each sum to 1.
template <class Scalar>
TransportPlan<Scalar> sinkhorn(const SimilarityMatrix<Scalar>& c, const Vec<Scalar>& d,
                               const Vec<Scalar>& e, const TransportConfig& cfg = {}) {
    const Index l1 = c.l1();
    const Index l2 = c.l2();
    if (d.size() != l1 || e.size() != l2)
        throw DimMismatch("sinkhorn: marginal sizes do not match c");
    if (d.minCoeff() < Scalar(0) || e.minCoeff() < Scalar(0))
        throw NonBalancedMarginals("sinkhorn: negative marginal entry");
    if (std::abs(double(d.sum()) - 1.0) > 1e-9 || std::abs(double(e.sum()) - 1.0) > 1e-9)
        throw NonBalancedMarginals("sinkhorn: marginals must each sum to 1");
    if (cfg.epsilon <= 0) throw InvalidParameter("sinkhorn: epsilon must be > 0");
    if (cfg.max_iters < 1) throw InvalidParameter("sinkhorn: max_iters must be >= 1");

    const Scalar eps = Scalar(cfg.epsilon);
    const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
    const Mat<Scalar> cost = (Scalar(1) - c.c.array()).matrix();

    // log marginals; zero-mass entries pin the matching potential at -inf so
    // the corresponding plan row or column is exactly zero.
    Vec<Scalar> log_d(l1), log_e(l2);
    for (Index i = 0; i < l1; ++i) log_d[i] = d[i] > 0 ? std::log(d[i]) : neg_inf;
    for (Index j = 0; j < l2; ++j) log_e[j] = e[j] > 0 ? std::log(e[j]) : neg_inf;

    Vec<Scalar> f = Vec<Scalar>::Zero(l1);  // row potentials
    Vec<Scalar> g = Vec<Scalar>::Zero(l2);  // column potentials

    // logsumexp over one row or column of (f_i + g_j - cost_ij) / eps
    auto lse_row = [&](Index i) {
        Scalar m = neg_inf;
        for (Index j = 0; j < l2; ++j)
            m = std::max(m, (g[j] - cost(i, j)) / eps);
        if (m == neg_inf) return neg_inf;
        Scalar s = 0;
        for (Index j = 0; j < l2; ++j)
            s += std::exp((g[j] - cost(i, j)) / eps - m);
        return m + std::log(s);
    };
    auto lse_col = [&](Index j) {
        Scalar m = neg_inf;
        for (Index i = 0; i < l1; ++i)
            m = std::max(m, (f[i] - cost(i, j)) / eps);
        if (m == neg_inf) return neg_inf;
        Scalar s = 0;
        for (Index i = 0; i < l1; ++i)
            s += std::exp((f[i] - cost(i, j)) / eps - m);
        return m + std::log(s);
    };
    auto plan_from_potentials = [&]() {
        Mat<Scalar> t(l1, l2);
        for (Index i = 0; i < l1; ++i)
            for (Index j = 0; j < l2; ++j) {
                const Scalar lt = f[i] == neg_inf || g[j] == neg_inf
                                      ? neg_inf
                                      : (f[i] + g[j] - cost(i, j)) / eps;
                t(i, j) = lt == neg_inf ? Scalar(0) : std::exp(lt);
            }
        return t;
    };

    TransportPlan<Scalar> plan;
    plan.residual_history.reserve(std::size_t(cfg.max_iters));
    for (int it = 0; it < cfg.max_iters; ++it) {
        for (Index i = 0; i < l1; ++i)
            f[i] = log_d[i] == neg_inf ? neg_inf : eps * log_d[i] - eps * lse_row(i);
        for (Index j = 0; j < l2; ++j)
            g[j] = log_e[j] == neg_inf ? neg_inf : eps * log_e[j] - eps * lse_col(j);
        const Mat<Scalar> t = plan_from_potentials();
        const Scalar res = detail::marginal_residual(t, d, e);
        plan.residual_history.push_back(res);
        if (res <= Scalar(cfg.tol)) {
            plan.converged = true;
            plan.t = t;
            break;
        }
        if (it + 1 == cfg.max_iters) plan.t = t;
    }

    detail::round_to_feasible(plan.t, d, e);
    plan.marginal_residual = detail::marginal_residual(plan.t, d, e);
    plan.cost = cost.cwiseProduct(plan.t).sum();
    if (!plan.t.allFinite()) throw NonFinite("sinkhorn: non-finite plan");
    return plan;
}

// Exact minimal-cost plan by enumerating every spanning tree of the
// complete bipartite support graph; each tree induces one basic feasible
// solution and the optimum of a bounded feasible LP sits at a vertex.
// Test oracle only: requires l1*l2 <= 16.
template <class Scalar>
TransportPlan<Scalar> exact_ot_small(const Mat<Scalar>& cost, const Vec<Scalar>& d,
                                     const Vec<Scalar>& e) {
    const Index l1 = cost.rows();
    const Index l2 = cost.cols();
    if (l1 * l2 > 16) throw TooLarge("exact_ot_small: instance above 16 cells");
    if (d.size() != l1 || e.size() != l2)
        throw DimMismatch("exact_ot_small: marginal sizes do not match cost");
    if (std::abs(double(d.sum() - e.sum())) > 1e-9)
        throw NonBalancedMarginals("exact_ot_small: sum(d) != sum(e)");

    const int n_edges = int(l1 * l2);
    const int n_nodes = int(l1 + l2);
    const int tree_edges = n_nodes - 1;

    TransportPlan<Scalar> best;
    best.cost = std::numeric_limits<Scalar>::infinity();

    std::vector<int> parent(static_cast<std::size_t>(n_nodes));
    auto find = [&](int x) {
        while (parent[std::size_t(x)] != x) x = parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
        return x;
    };

    // Subsets of edges with popcount == tree_edges; edge k joins row k/l2
    // with column-node l1 + k%l2.
    for (unsigned mask = 0; mask < (1u << n_edges); ++mask) {
        if (std::popcount(mask) != tree_edges) continue;
        for (int i = 0; i < n_nodes; ++i) parent[std::size_t(i)] = i;
        bool acyclic = true;
        for (int k = 0; k < n_edges && acyclic; ++k) {
            if (!(mask & (1u << k))) continue;
            const int a = find(int(k / l2));
            const int b = find(int(l1 + k % l2));
            if (a == b) acyclic = false;
            parent[std::size_t(a)] = b;
        }
        if (!acyclic) continue;  // tree_edges acyclic edges => spanning tree

        // Leaf peeling: a degree-1 node fixes the flow on its only edge.
        std::vector<int> degree(std::size_t(n_nodes), 0);
        for (int k = 0; k < n_edges; ++k)
            if (mask & (1u << k)) {
                ++degree[std::size_t(k / l2)];
                ++degree[std::size_t(l1 + k % l2)];
            }
        Vec<Scalar> rem(n_nodes);
        rem.head(l1) = d;
        rem.tail(l2) = e;
        unsigned live = mask;
        Mat<Scalar> t = Mat<Scalar>::Zero(l1, l2);
        bool feasible = true;
        for (int step = 0; step < tree_edges; ++step) {
            int leaf = -1;
            for (int v = 0; v < n_nodes; ++v)
                if (degree[std::size_t(v)] == 1) { leaf = v; break; }
            if (leaf < 0) { feasible = false; break; }
            int edge = -1;
            for (int k = 0; k < n_edges; ++k) {
                if (!(live & (1u << k))) continue;
                if (int(k / l2) == leaf || int(l1 + k % l2) == leaf) { edge = k; break; }
            }
            const Index r = edge / l2;
            const Index cidx = edge % l2;
            const int other = leaf < l1 ? int(l1 + cidx) : int(r);
            const Scalar flow = rem[leaf];
            if (flow < Scalar(-1e-12)) { feasible = false; break; }
            t(r, cidx) = std::max(flow, Scalar(0));
            rem[leaf] = 0;
            rem[other] -= flow;
            live &= ~(1u << edge);
            --degree[std::size_t(leaf)];
            --degree[std::size_t(other)];
        }
        if (!feasible || rem.cwiseAbs().maxCoeff() > Scalar(1e-9)) continue;
        const Scalar tot = cost.cwiseProduct(t).sum();
        if (tot < best.cost) {
            best.cost = tot;
            best.t = t;
        }
    }
    if (!std::isfinite(double(best.cost)))
        throw NonBalancedMarginals("exact_ot_small: no feasible basic solution");
    best.converged = true;
    best.marginal_residual = detail::marginal_residual(best.t, d, e);
    return best;
}

// The EMD weighting strategy: one optimal plan serves both directions.
template <class Scalar>
MatchingFlow<Scalar> emd_flow(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                              const TransportConfig& cfg = {}) {
    const SimilarityMatrix<Scalar> c = token_similarity_matrix(mu, omega);
    const TokenWeights<Scalar> w = token_weights(mu, omega);
    const auto [d, e] = prepare_marginals(w, cfg.floor);
    TransportPlan<Scalar> plan = sinkhorn(c, d, e, cfg);
    MatchingFlow<Scalar> flow;
    flow.t = std::move(plan.t);
    flow.strategy = Strategy::Emd;
    flow.direction = Direction::VisualToText;
    return flow;
}

}  // namespace tokalign
