#include <doctest.h>

#include <cmath>

#include "tokalign/core.hpp"
#include "tokalign/harness.hpp"
#include "tokalign/transport.hpp"

using namespace tokalign;

namespace {

Mat<double> rows(std::initializer_list<std::initializer_list<double>> data) {
    const Index r = Index(data.size());
    const Index c = Index(data.begin()->size());
    Mat<double> m(r, c);
    Index i = 0;
    for (const auto& row : data) {
        Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Vec<double> vec(std::initializer_list<double> data) {
    Vec<double> v(Index(data.size()));
    Index i = 0;
    for (double x : data) v[i++] = x;
    return v;
}

TokenWeightsd weights(std::initializer_list<double> d, std::initializer_list<double> e) {
    TokenWeightsd w;
    w.d = vec(d);
    w.e = vec(e);
    return w;
}

}  // namespace

TEST_SUITE("transport") {

TEST_CASE("prepare_marginals clamps to the floor and renormalizes") {
    {
        const auto [d, e] = prepare_marginals(weights({0.5, 0.5}, {1.0}), 1e-3);
        CHECK(d[0] == 0.5);
        CHECK(d[1] == 0.5);
        CHECK(e[0] == 1.0);
    }
    {
        const auto [d, e] = prepare_marginals(weights({-0.2, 0.6}, {1.0}), 1e-3);
        CHECK(d[0] == doctest::Approx(0.001 / 0.601).epsilon(1e-9));
        CHECK(d[1] == doctest::Approx(0.6 / 0.601).epsilon(1e-9));
        CHECK(d[0] == doctest::Approx(0.001664).epsilon(1e-3));
        CHECK(d[1] == doctest::Approx(0.998336).epsilon(1e-6));
        CHECK(d.sum() == doctest::Approx(1).epsilon(1e-12));
        CHECK(e.sum() == doctest::Approx(1).epsilon(1e-12));
    }
    {
        const auto [d, e] = prepare_marginals(weights({0.3, 0.3, 0.3}, {0.7, 0.7}), 1e-3);
        for (Index i = 0; i < 3; ++i) CHECK(d[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
        for (Index j = 0; j < 2; ++j) CHECK(e[j] == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("sinkhorn 1x1 returns the forced plan") {
    SimilarityMatrixd c;
    c.c = rows({{0.37}});
    const TransportPland plan = sinkhorn(c, vec({1.0}), vec({1.0}), TransportConfig{});
    CHECK(plan.t(0, 0) == doctest::Approx(1).epsilon(1e-9));
    CHECK(plan.converged);
    CHECK(plan.cost == doctest::Approx(1 - 0.37).epsilon(1e-9));
}

TEST_CASE("sinkhorn finds the diagonal plan when the diagonal is cheap") {
    // cost [[0,1],[1,0]] corresponds to c = 1 - cost.
    SimilarityMatrixd c;
    c.c = rows({{1, 0}, {0, 1}});
    TransportConfig cfg;
    cfg.epsilon = 0.01;
    cfg.max_iters = 5000;
    cfg.tol = 1e-9;
    const TransportPland plan = sinkhorn(c, vec({0.5, 0.5}), vec({0.5, 0.5}), cfg);
    CHECK(plan.t(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(plan.t(1, 1) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(plan.t(0, 1) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(plan.cost == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("sinkhorn under constant cost returns the independent coupling") {
    SimilarityMatrixd c;
    c.c = Mat<double>::Constant(3, 2, 0.25);
    const Vec<double> d = vec({0.2, 0.3, 0.5});
    const Vec<double> e = vec({0.4, 0.6});
    TransportConfig cfg;
    cfg.tol = 1e-12;
    cfg.max_iters = 2000;
    const TransportPland plan = sinkhorn(c, d, e, cfg);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 2; ++j)
            CHECK(plan.t(i, j) == doctest::Approx(d[i] * e[j]).epsilon(1e-7));
}

TEST_CASE("sinkhorn validates marginals") {
    SimilarityMatrixd c;
    c.c = rows({{0.1, 0.2}});
    CHECK_THROWS_AS(sinkhorn(c, vec({1.0}), vec({0.6, 0.6}), TransportConfig{}),
                    NonBalancedMarginals);
    CHECK_THROWS_AS(sinkhorn(c, vec({-1.0}), vec({0.5, 0.5}), TransportConfig{}),
                    NonBalancedMarginals);
}

TEST_CASE("sinkhorn residual history is monotone, sampled every 10 iterations") {
    Rng rng(21);
    for (int rep = 0; rep < 10; ++rep) {
        const Index l1 = 4, l2 = 4;
        SimilarityMatrixd c;
        c.c.resize(l1, l2);
        for (Index i = 0; i < l1; ++i)
            for (Index j = 0; j < l2; ++j) c.c(i, j) = 2 * rng.uniform01() - 1;
        TokenWeightsd w;
        w.d = rng.gaussian_vec(l1);
        w.e = rng.gaussian_vec(l2);
        const auto [d, e] = prepare_marginals(w, 1e-3);
        TransportConfig cfg;
        cfg.epsilon = 1e-3;  // slow convergence, so the history is long
        cfg.tol = 0;         // never break early
        cfg.max_iters = 300;
        const TransportPland plan = sinkhorn(c, d, e, cfg);
        REQUIRE(plan.residual_history.size() > 50);
        for (std::size_t k = 10; k < plan.residual_history.size(); k += 10)
            CHECK(plan.residual_history[k] <= plan.residual_history[k - 10] + 1e-12);
    }
}

TEST_CASE("exact_ot_small fully constrained and degenerate instances") {
    {
        const TransportPland plan =
            exact_ot_small<double>(rows({{1, 2}}), vec({1.0}), vec({0.3, 0.7}));
        CHECK(plan.t(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(plan.t(0, 1) == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(plan.cost == doctest::Approx(1.7).epsilon(1e-12));
    }
    {
        const TransportPland plan = exact_ot_small<double>(
            rows({{0, 1}, {1, 0}}), vec({0.5, 0.5}), vec({0.5, 0.5}));
        CHECK(plan.cost == doctest::Approx(0).epsilon(1e-12));
        CHECK(plan.t(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(plan.t(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
    }
    {
        const TransportPland plan = exact_ot_small<double>(Mat<double>::Zero(2, 2),
                                                            vec({0.4, 0.6}), vec({0.1, 0.9}));
        CHECK(plan.cost == doctest::Approx(0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(exact_ot_small<double>(Mat<double>::Zero(5, 4), Vec<double>::Constant(5, 0.2),
                                           Vec<double>::Constant(4, 0.25)),
                    TooLarge);
    CHECK_THROWS_AS(
        exact_ot_small<double>(Mat<double>::Zero(2, 2), vec({0.5, 0.5}), vec({0.9, 0.9})),
        NonBalancedMarginals);
}

TEST_CASE("sinkhorn dominates the oracle by at most the entropic gap") {
    Rng rng(22);
    TransportConfig cfg;
    cfg.epsilon = 0.05;
    cfg.tol = 1e-10;
    cfg.max_iters = 20000;
    for (int rep = 0; rep < 25; ++rep) {
        const Index l1 = 1 + Index(rng.uniform_index(4));
        const Index l2 = 1 + Index(rng.uniform_index(4));
        SimilarityMatrixd c;
        c.c.resize(l1, l2);
        for (Index i = 0; i < l1; ++i)
            for (Index j = 0; j < l2; ++j) c.c(i, j) = 2 * rng.uniform01() - 1;
        TokenWeightsd w;
        w.d = rng.gaussian_vec(l1);
        w.e = rng.gaussian_vec(l2);
        const auto [d, e] = prepare_marginals(w, 1e-3);
        const TransportPland plan = sinkhorn(c, d, e, cfg);
        const TransportPland exact =
            exact_ot_small<double>((1.0 - c.c.array()).matrix(), d, e);
        CHECK(plan.marginal_residual <= 1e-6);
        CHECK(plan.cost + 1e-12 >= exact.cost);
        CHECK(plan.cost - exact.cost <= cfg.epsilon * std::log(double(l1 * l2)) + 1e-6);
        CHECK(plan.t.minCoeff() >= 0);
    }
}

TEST_CASE("plans stay finite for epsilon down to 1e-3 on cosine costs") {
    Rng rng(23);
    SimilarityMatrixd c;
    c.c.resize(4, 4);
    for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 4; ++j) c.c(i, j) = 2 * rng.uniform01() - 1;
    const Vec<double> d = Vec<double>::Constant(4, 0.25);
    const Vec<double> e = Vec<double>::Constant(4, 0.25);
    TransportConfig cfg;
    cfg.epsilon = 1e-3;
    cfg.max_iters = 4000;
    const TransportPland plan = sinkhorn(c, d, e, cfg);
    CHECK(plan.t.allFinite());
    CHECK(std::isfinite(plan.cost));
}

TEST_CASE("emd_flow is shared by both directions and handles one-token pairs") {
    Rng rng(24);
    Mat<double> mu_t = rng.gaussian_mat(1, 6);
    mu_t.row(0) /= mu_t.row(0).norm();
    Mat<double> om_t = rng.gaussian_mat(1, 6);
    om_t.row(0) /= om_t.row(0).norm();
    const TokenSetd mu = TokenSetd::dense(mu_t, mu_t.row(0).transpose());
    const TokenSetd om = TokenSetd::dense(om_t, om_t.row(0).transpose());
    const MatchingFlowd flow = emd_flow(mu, om, TransportConfig{});
    REQUIRE(flow.t.rows() == 1);
    REQUIRE(flow.t.cols() == 1);
    CHECK(flow.t(0, 0) == doctest::Approx(1).epsilon(1e-9));
    const SimilarityMatrixd c = token_similarity_matrix(mu, om);
    CHECK(aggregate_similarity(c, flow) == doctest::Approx(c.c(0, 0)).epsilon(1e-9));
}

TEST_CASE("emd plans concentrate mass on strongly matching token pairs") {
    // Three visual tokens each nearly identical to one text token.
    Rng rng(25);
    Mat<double> base = rng.gaussian_mat(3, 8);
    for (Index i = 0; i < 3; ++i) base.row(i) /= base.row(i).norm();
    Mat<double> vis = base;
    Mat<double> txt = base;
    Vec<double> g = base.colwise().mean().transpose();
    g /= g.norm();
    const TokenSetd mu = TokenSetd::dense(vis, g);
    const TokenSetd om = TokenSetd::dense(txt, g);
    TransportConfig cfg;
    cfg.epsilon = 0.01;
    cfg.max_iters = 5000;
    const MatchingFlowd flow = emd_flow(mu, om, cfg);
    const auto [d, e] = prepare_marginals(token_weights(mu, om), cfg.floor);
    const TransportPland exact =
        exact_ot_small<double>((1.0 - token_similarity_matrix(mu, om).c.array()).matrix(), d, e);
    // The diagonal (self-match) carries nearly all mass in both solutions.
    for (Index i = 0; i < 3; ++i) {
        CHECK(flow.t(i, i) == doctest::Approx(d[i]).epsilon(1e-2));
        CHECK(exact.t(i, i) == doctest::Approx(d[i]).epsilon(1e-9));
    }
}

}  // TEST_SUITE
