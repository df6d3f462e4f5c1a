#include "tokalign/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "tokalign/core.hpp"
#include "tokalign/grad.hpp"
#include "tokalign/harness.hpp"
#include "tokalign/io.hpp"
#include "tokalign/loss.hpp"
#include "tokalign/metrics.hpp"
#include "tokalign/strategies.hpp"
#include "tokalign/transport.hpp"

namespace tokalign {

namespace {

struct Checker {
    bool ok = true;
    std::string first_fail;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            first_fail = what;
        }
    }
};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// Random unit-row token set; `extra_masked` adds rows that stay masked out
// and unnormalized.
TokenSetd random_token_set(Rng& rng, Index count, Index dim, Index extra_masked = 0) {
    const Index cap = count + extra_masked;
    TokenSetd ts;
    ts.tokens = rng.gaussian_mat(cap, dim);
    ts.mask = MaskVec::Constant(cap, false);
    for (Index pos : rng.sample_without_replacement(cap, count)) ts.mask[pos] = true;
    for (Index i = 0; i < cap; ++i) {
        if (!ts.mask[i]) continue;
        while (ts.tokens.row(i).norm() < 1e-6) ts.tokens.row(i) = rng.gaussian_vec(dim).transpose();
        ts.tokens.row(i) /= ts.tokens.row(i).norm();
    }
    Vec<double> mean = Vec<double>::Zero(dim);
    for (Index i = 0; i < cap; ++i)
        if (ts.mask[i]) mean += ts.tokens.row(i).transpose();
    mean /= double(count);
    if (mean.norm() < 1e-9) mean[0] = 1;  // degenerate cancellation, pick any unit global
    ts.global = mean / mean.norm();
    return ts;
}

// A1: the legacy strategies reduce to their closed forms.
CheckResult check_a1() {
    CheckResult r{"A1 subsumption-identities", false, "", 0};
    Checker ck;
    Rng rng(101);
    double worst = 0;
    for (int k = 0; k < 200 && ck.ok; ++k) {
        const Index l1 = 1 + Index(rng.uniform_index(32));
        const Index l2 = 1 + Index(rng.uniform_index(32));
        const Index d = 1 + Index(rng.uniform_index(64));
        const Index extra = Index(rng.uniform_index(3));
        const TokenSetd mu = random_token_set(rng, l1, d, extra);
        const TokenSetd om = random_token_set(rng, l2, d, extra / 2);
        const SimilarityMatrixd c = token_similarity_matrix(mu, om);

        const double s_uni = aggregate_similarity(c, uniform_flow<double>(l1, l2));
        const Vec<double> mean_mu = unmasked_rows(mu).colwise().mean().transpose();
        const Vec<double> mean_om = unmasked_rows(om).colwise().mean().transpose();
        const double d_uni = std::abs(s_uni - mean_mu.dot(mean_om));

        const double lambda = 0.5 + 7.5 * rng.uniform01();
        const double s_scan =
            aggregate_similarity(c, scan_flow(c, lambda, Direction::VisualToText));
        const double d_scan = std::abs(s_scan - scan_attended_similarity(mu, om, lambda));

        const double s_max =
            aggregate_similarity(c, max_flow(c, true, Direction::VisualToText));
        const double d_max = std::abs(s_max - c.c.rowwise().maxCoeff().mean());

        worst = std::max({worst, d_uni, d_scan, d_max});
        ck.expect(d_uni < 1e-10, "uniform identity, delta " + fmt(d_uni));
        ck.expect(d_scan < 1e-10, "scan identity, delta " + fmt(d_scan));
        ck.expect(d_max < 1e-10, "max-avg identity, delta " + fmt(d_max));
    }
    r.passed = ck.ok;
    r.detail = ck.ok ? "200 instances, max |delta| " + fmt(worst) : ck.first_fail;
    return r;
}

// A2: row/column/total mass of every strategy's flow.
CheckResult check_a2() {
    CheckResult r{"A2 flow-mass-invariants", false, "", 0};
    Checker ck;
    Rng rng(202);
    double worst = 0;
    auto note = [&](double delta, bool cond, const std::string& what) {
        worst = std::max(worst, delta);
        ck.expect(cond, what + ", delta " + fmt(delta));
    };
    for (int k = 0; k < 200 && ck.ok; ++k) {
        const Index l1 = 1 + Index(rng.uniform_index(16));
        const Index l2 = 1 + Index(rng.uniform_index(16));
        const Index d = 2 + Index(rng.uniform_index(31));
        const TokenSetd mu = random_token_set(rng, l1, d);
        const TokenSetd om = random_token_set(rng, l2, d);
        const SimilarityMatrixd c = token_similarity_matrix(mu, om);
        const TokenWeightsd w = token_weights(mu, om);
        const double lambda = 0.5 + 7.5 * rng.uniform01();

        {
            const double m = uniform_flow<double>(l1, l2).t.sum();
            note(std::abs(m - 1), std::abs(m - 1) < 1e-10, "uniform total mass");
        }
        {
            const Index side = std::max(l1, l2) + Index(rng.uniform_index(3));
            const Mat<double> params = rng.gaussian_mat(side, side);
            const double m = learnable_flow(params, l1, l2).t.sum();
            note(std::abs(m - 1), std::abs(m - 1) < 1e-10, "learnable total mass");
        }
        {
            const MatchingFlowd fv = scan_flow(c, lambda, Direction::VisualToText);
            for (Index s = 0; s < l1; ++s) {
                const double m = fv.t.row(s).sum();
                note(std::abs(m - 1.0 / double(l1)), std::abs(m - 1.0 / double(l1)) < 1e-10,
                     "scan row mass");
            }
            const MatchingFlowd ft = scan_flow(c, lambda, Direction::TextToVisual);
            for (Index t = 0; t < l2; ++t) {
                const double m = ft.t.col(t).sum();
                note(std::abs(m - 1.0 / double(l2)), std::abs(m - 1.0 / double(l2)) < 1e-10,
                     "scan column mass");
            }
        }
        {
            const double mv = max_flow(c, true, Direction::VisualToText).t.sum();
            note(std::abs(mv - 1), std::abs(mv - 1) < 1e-10, "max-avg total mass v2t");
            const double mt = max_flow(c, true, Direction::TextToVisual).t.sum();
            note(std::abs(mt - 1), std::abs(mt - 1) < 1e-10, "max-avg total mass t2v");
            const double sv = max_flow(c, false, Direction::VisualToText).t.sum();
            note(std::abs(sv - double(l1)), std::abs(sv - double(l1)) < 1e-10,
                 "max-sum total mass v2t");
            const double st = max_flow(c, false, Direction::TextToVisual).t.sum();
            note(std::abs(st - double(l2)), std::abs(st - double(l2)) < 1e-10,
                 "max-sum total mass t2v");
        }
        {
            const MatchingFlowd fv = tokenflow_flow(c, w, lambda, Direction::VisualToText);
            for (Index s = 0; s < l1; ++s) {
                const double m = fv.t.row(s).sum();
                const double want = w.d[s] / double(l1);
                note(std::abs(m - want), std::abs(m - want) < 1e-10, "tokenflow row mass");
            }
            const MatchingFlowd ft = tokenflow_flow(c, w, lambda, Direction::TextToVisual);
            for (Index t = 0; t < l2; ++t) {
                const double m = ft.t.col(t).sum();
                const double want = w.e[t] / double(l2);
                note(std::abs(m - want), std::abs(m - want) < 1e-10, "tokenflow column mass");
            }
        }
    }
    r.passed = ck.ok;
    r.detail = ck.ok ? "200 instances, max |delta| " + fmt(worst) : ck.first_fail;
    return r;
}

// A3: Sinkhorn plans are feasible and near-optimal against the exact oracle.
CheckResult check_a3() {
    CheckResult r{"A3 transport-correctness", false, "", 0};
    Checker ck;
    Rng rng(303);
    TransportConfig tc;
    tc.epsilon = 0.05;
    tc.tol = 1e-10;
    tc.max_iters = 20000;
    double worst_residual = 0, worst_gap = 0;
    for (int k = 0; k < 100 && ck.ok; ++k) {
        const Index l1 = 1 + Index(rng.uniform_index(4));
        const Index l2 = 1 + Index(rng.uniform_index(4));
        SimilarityMatrixd c;
        c.c.resize(l1, l2);
        for (Index i = 0; i < l1; ++i)
            for (Index j = 0; j < l2; ++j) c.c(i, j) = 2 * rng.uniform01() - 1;
        TokenWeightsd w;
        w.d.resize(l1);
        w.e.resize(l2);
        for (Index i = 0; i < l1; ++i) w.d[i] = 2 * rng.uniform01() - 1;
        for (Index j = 0; j < l2; ++j) w.e[j] = 2 * rng.uniform01() - 1;
        const auto [dm, em] = prepare_marginals(w, 1e-3);

        const TransportPland plan = sinkhorn(c, dm, em, tc);
        const Mat<double> cost = (1.0 - c.c.array()).matrix();
        const TransportPland exact = exact_ot_small(cost, dm, em);

        worst_residual = std::max(worst_residual, plan.marginal_residual);
        const double gap = plan.cost - exact.cost;
        worst_gap = std::max(worst_gap, gap);
        ck.expect(plan.marginal_residual <= 1e-6,
                  "marginal residual " + fmt(plan.marginal_residual));
        ck.expect(plan.cost + 1e-12 >= exact.cost,
                  "sinkhorn cost " + fmt(plan.cost) + " below exact " + fmt(exact.cost));
        ck.expect(gap <= tc.epsilon * std::log(double(l1 * l2)) + 1e-6,
                  "entropic gap " + fmt(gap) + " for " + std::to_string(l1) + "x" +
                      std::to_string(l2));
    }
    r.passed = ck.ok;
    r.detail = ck.ok ? "100 instances, max residual " + fmt(worst_residual) + ", max gap " +
                           fmt(worst_gap)
                     : ck.first_fail;
    return r;
}

// A4: analytic gradients match central finite differences.
CheckResult check_a4() {
    CheckResult r{"A4 gradient-checks", false, "", 0};
    Checker ck;
    Rng rng(404);
    const double h = 1e-5;
    const double rtol = 1e-4;
    const double atol = 1e-7;
    double worst = 0;

    auto close = [&](const Mat<double>& a, const Mat<double>& f) {
        for (Index i = 0; i < a.rows(); ++i)
            for (Index j = 0; j < a.cols(); ++j) {
                const double err = std::abs(a(i, j) - f(i, j));
                const double bound = atol + rtol * std::max(std::abs(a(i, j)), std::abs(f(i, j)));
                worst = std::max(worst, err / std::max(bound, 1e-300));
                if (err > bound) return false;
            }
        return true;
    };
    const Strategy kinds[] = {Strategy::Uniform, Strategy::Scan, Strategy::TokenFlow};
    for (int k = 0; k < 50 && ck.ok; ++k) {
        const Index l1 = 1 + Index(rng.uniform_index(8));
        const Index l2 = 1 + Index(rng.uniform_index(8));
        const Index d = 2 + Index(rng.uniform_index(15));
        const TokenSetd mu = random_token_set(rng, l1, d);
        const TokenSetd om = random_token_set(rng, l2, d);
        for (Strategy kind : kinds) {
            StrategyConfig cfg = StrategyConfig::for_kind(kind);
            cfg.global_blend_w = 0.5;
            for (Direction dir : {Direction::VisualToText, Direction::TextToVisual}) {
                const PairGradientd ga = pair_gradient(mu, om, cfg, dir);
                auto f = [&](const TokenSetd& a, const TokenSetd& b) {
                    const PairScored p = pair_similarity(a, b, cfg);
                    return dir == Direction::VisualToText ? p.s_v : p.s_t;
                };
                const PairGradientd gf = finite_diff_gradient<double>(f, mu, om, h);
                const std::string tag =
                    std::string(to_string(kind)) +
                    (dir == Direction::VisualToText ? " s_v" : " s_t") + " instance " +
                    std::to_string(k);
                ck.expect(close(ga.d_mu, gf.d_mu), tag + " d_mu");
                ck.expect(close(ga.d_omega, gf.d_omega), tag + " d_omega");
                ck.expect(close(ga.d_mu_global, gf.d_mu_global), tag + " d_mu_global");
                ck.expect(close(ga.d_omega_global, gf.d_omega_global), tag + " d_omega_global");
                if (!ck.ok) break;
            }
            if (!ck.ok) break;
        }
    }

    // Full contrastive loss on batches of 4, gradient wrt every parameter.
    for (int k = 0; k < 50 && ck.ok; ++k) {
        CorpusSpec cs;
        cs.n_pairs = 4;
        cs.tokens_per_item = 3;
        cs.dim = 8;
        cs.concept_count = 5;
        cs.noise_sigma = 0.3;
        cs.collision_mode = false;
        cs.seed = 9000 + std::uint64_t(k);
        const Corpus corpus = generate_corpus(cs);
        TrainConfig tcfg;
        tcfg.strategy = StrategyConfig::for_kind(kinds[k % 3]);
        tcfg.strategy.global_blend_w = 0.5;
        const std::vector<Index> batch{0, 1, 2, 3};
        ToyModel model = ToyModel::init(corpus, ParamMode::EmbeddingDirect);
        const BatchLoss bl = batch_loss_and_gradient(model, corpus, batch, tcfg);

        Vec<double> params = model.pack();
        Vec<double> fd(params.size());
        ToyModel probe = model;
        for (Index i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            probe.unpack(params);
            const double up = batch_loss_and_gradient(probe, corpus, batch, tcfg).value;
            params[i] = keep - h;
            probe.unpack(params);
            const double down = batch_loss_and_gradient(probe, corpus, batch, tcfg).value;
            params[i] = keep;
            fd[i] = (up - down) / (2 * h);
        }
        ck.expect(close(bl.grad, fd), "contrastive loss batch instance " + std::to_string(k));
    }

    r.passed = ck.ok;
    r.detail = ck.ok ? "50+50 instances, worst error/bound " + fmt(worst) : ck.first_fail;
    return r;
}

// A5: the mechanism demonstration on the collision corpus.
CheckResult check_a5() {
    CheckResult r{"A5 mechanism-demonstration", false, "", 0};
    CorpusSpec cs;
    cs.n_pairs = 64;
    cs.tokens_per_item = 4;
    cs.dim = 32;
    cs.concept_count = 16;
    cs.noise_sigma = 0.05;
    cs.collision_mode = true;
    cs.seed = 42;
    const Corpus corpus = generate_corpus(cs);

    TrainConfig base;
    base.steps = 400;
    base.lr = 2e-4;
    base.batch = 8;
    // Direct embedding updates leave held-out items untouched, so the
    // held-out comparison isolates the scoring mechanism. A projection
    // layer would let training skew the pooled globals of every item,
    // including held-out ones, and blur the global-vs-token contrast.
    base.param_mode = ParamMode::EmbeddingDirect;
    base.holdout_every = 2;
    base.seed = 7;

    TrainConfig tok = base;
    tok.strategy = StrategyConfig::for_kind(Strategy::TokenFlow);
    TrainConfig glob = base;
    glob.strategy = StrategyConfig::for_kind(Strategy::TokenFlow);
    glob.strategy.global_blend_w = 1.0;

    const TrainTrace t_trace = train_toy(tok, corpus);
    const TrainTrace g_trace = train_toy(glob, corpus);
    const double t_r1 = t_trace.report_v2t.r_at.at(1);
    const double g_r1 = g_trace.report_v2t.r_at.at(1);
    const double conf = g_trace.confuser_accuracy;

    Checker ck;
    ck.expect(t_r1 >= 2 * g_r1, "tokenflow R@1 " + fmt(t_r1) + " not >= 2x global-only " +
                                    fmt(g_r1));
    ck.expect(std::abs(conf - 50.0) <= 10.0,
              "global-only confuser discrimination " + fmt(conf) + " outside 50 +/- 10");
    r.passed = ck.ok;
    std::ostringstream os;
    os << "tokenflow R@1 " << t_r1 << " vs global-only " << g_r1 << ", confuser " << conf
       << "%, holdout " << t_trace.holdout.size();
    r.detail = ck.ok ? os.str() : ck.first_fail + " [" + os.str() + "]";
    return r;
}

// A6: momentum distillation mechanics.
CheckResult check_a6() {
    CheckResult r{"A6 momentum-distillation", false, "", 0};
    Checker ck;
    Rng rng(606);

    // Closed-form EMA after k updates.
    const Index dim = 10;
    const int k_updates = 12;
    const double m = 0.95;
    const Vec<double> theta0 = rng.gaussian_vec(dim);
    std::vector<Vec<double>> students;
    for (int i = 0; i < k_updates; ++i) students.push_back(rng.gaussian_vec(dim));
    TeacherStated teacher(16);
    teacher.ema_momentum = m;
    teacher.params = theta0;
    for (const auto& s : students) teacher = md_update_teacher(std::move(teacher), s);
    Vec<double> closed = std::pow(m, k_updates) * theta0;
    for (int i = 0; i < k_updates; ++i)
        closed += (1 - m) * std::pow(m, k_updates - 1 - i) * students[std::size_t(i)];
    const double ema_delta = (teacher.params - closed).cwiseAbs().maxCoeff();
    ck.expect(ema_delta <= 1e-9, "EMA closed form delta " + fmt(ema_delta));

    // Soft targets stay row-stochastic with queues in play.
    const Index n = 4, qt = 3, qv = 2;
    BatchScoresd scores;
    scores.scale = 100;
    scores.s_v = rng.gaussian_mat(n, n + qt);
    scores.s_t = rng.gaussian_mat(n + qv, n);
    const auto y_m = md_pseudo_targets(scores);
    const SoftTargetsd y = one_hot_targets<double>(n, n + qt, n + qv);
    const SoftTargetsd mixed = md_soft_targets(y_m, y, 0.4);
    double row_delta = 0;
    for (Index i = 0; i < n; ++i) {
        row_delta = std::max(row_delta, std::abs(mixed.y_hat_v.row(i).sum() - 1));
        row_delta = std::max(row_delta, std::abs(mixed.y_hat_t.row(i).sum() - 1));
    }
    ck.expect(row_delta <= 1e-9, "soft target row sum delta " + fmt(row_delta));

    // alpha = 0 reproduces the plain loss bit for bit.
    const SoftTargetsd zero_alpha = md_soft_targets(y_m, y, 0.0);
    const double with_md = contrastive_loss(scores, zero_alpha);
    const double plain = contrastive_loss(scores, y);
    ck.expect(with_md == plain, "alpha=0 loss " + fmt(with_md) + " != plain " + fmt(plain));

    r.passed = ck.ok;
    r.detail = ck.ok ? "EMA delta " + fmt(ema_delta) + ", row sum delta " + fmt(row_delta) +
                           ", alpha=0 exact"
                     : ck.first_fail;
    return r;
}

// A7: report equals an independent full-sort oracle, exactly.
CheckResult check_a7() {
    CheckResult r{"A7 metrics-oracle", false, "", 0};
    Checker ck;
    Rng rng(707);
    const std::vector<int> ks{1, 5, 10};
    for (int k = 0; k < 1000 && ck.ok; ++k) {
        const Index n = 20;
        Mat<double> scores(n, n);
        const bool tie_heavy = k % 2 == 1;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                scores(i, j) = tie_heavy ? double(rng.uniform_index(5)) : rng.uniform01();
        std::vector<Index> truth(static_cast<std::size_t>(n));
        for (auto& t : truth) t = Index(rng.uniform_index(std::uint64_t(n)));

        const RetrievalReport got = retrieval_report(scores, truth, ks);

        // Oracle: sort each row descending, rank = first position holding the
        // truth score.
        std::vector<Index> ranks(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            std::vector<double> row(static_cast<std::size_t>(n));
            for (Index j = 0; j < n; ++j) row[std::size_t(j)] = scores(i, j);
            std::sort(row.begin(), row.end(), std::greater<double>());
            const double ref = scores(i, truth[std::size_t(i)]);
            Index pos = 0;
            while (row[std::size_t(pos)] != ref) ++pos;
            ranks[std::size_t(i)] = pos + 1;
        }
        RetrievalReport want;
        want.n_queries = n;
        for (int kk : ks) {
            Index hits = 0;
            for (Index rank : ranks)
                if (rank <= kk) ++hits;
            want.r_at[kk] = 100.0 * double(hits) / double(n);
        }
        std::vector<Index> sorted = ranks;
        std::sort(sorted.begin(), sorted.end());
        want.mdr = (double(sorted[9]) + double(sorted[10])) / 2.0;
        double sum = 0;
        for (Index rank : ranks) sum += double(rank);
        want.mnr = sum / double(n);

        ck.expect(got.r_at == want.r_at && got.mdr == want.mdr && got.mnr == want.mnr,
                  "report mismatch on matrix " + std::to_string(k));
    }
    r.passed = ck.ok;
    r.detail = ck.ok ? "1000 matrices, exact match" : ck.first_fail;
    return r;
}

// A8: alignment dumps reconcile with pair scores.
CheckResult check_a8() {
    CheckResult r{"A8 dump-reconciliation", false, "", 0};
    Checker ck;
    Rng rng(808);
    const Strategy kinds[] = {Strategy::Uniform, Strategy::Learnable, Strategy::Scan,
                              Strategy::MaxAvg,  Strategy::MaxSum,    Strategy::Emd,
                              Strategy::TokenFlow};
    double worst = 0;
    for (int k = 0; k < 50 && ck.ok; ++k) {
        const Index l1 = 1 + Index(rng.uniform_index(6));
        const Index l2 = 1 + Index(rng.uniform_index(6));
        const Index d = 2 + Index(rng.uniform_index(15));
        const TokenSetd mu = random_token_set(rng, l1, d);
        const TokenSetd om = random_token_set(rng, l2, d);
        StrategyConfig cfg = StrategyConfig::for_kind(kinds[k % 7]);
        if (cfg.kind == Strategy::Learnable) {
            const Index side = std::max(l1, l2);
            cfg.learnable_params = rng.gaussian_mat(side, side);
        }
        std::ostringstream sink;
        const AlignmentDump dump = dump_alignment(mu, om, cfg, sink);

        const double dv = std::abs(dump.contrib_v.sum() / 100.0 - *dump.score.s_fine_v);
        const double dt = std::abs(dump.contrib_t.sum() / 100.0 - *dump.score.s_fine_t);
        worst = std::max({worst, dv, dt});
        ck.expect(dv <= 1e-9, "v2t contributions vs s_fine, delta " + fmt(dv));
        ck.expect(dt <= 1e-9, "t2v contributions vs s_fine, delta " + fmt(dt));

        const SimilarityMatrixd c = token_similarity_matrix(mu, om);
        const auto [fv, ft] = detail::strategy_flows(mu, om, c, cfg);
        ck.expect(dump.t_hat_v == (100.0 * fv.t).eval() && dump.t_hat_t == (100.0 * ft.t).eval(),
                  "rescale is not exactly 100x on instance " + std::to_string(k));
    }
    r.passed = ck.ok;
    r.detail = ck.ok ? "50 pairs over all strategies, max |delta| " + fmt(worst) : ck.first_fail;
    return r;
}

// A9: loss spot values.
CheckResult check_a9() {
    CheckResult r{"A9 loss-spot-values", false, "", 0};
    Checker ck;
    BatchScoresd zero;
    zero.scale = 1;
    zero.s_v = Mat<double>::Zero(2, 2);
    zero.s_t = Mat<double>::Zero(2, 2);
    const SoftTargetsd onehot = one_hot_targets<double>(2, 2, 2);
    const double l_zero = contrastive_loss(zero, onehot);
    const double d_zero = std::abs(l_zero - std::log(2.0));
    ck.expect(d_zero <= 1e-12, "all-zero loss " + fmt(l_zero) + " vs ln 2");

    BatchScoresd eye;
    eye.scale = 1;
    eye.s_v = Mat<double>::Identity(2, 2);
    eye.s_t = Mat<double>::Identity(2, 2);
    const double l_eye = contrastive_loss(eye, onehot);
    const double d_eye = std::abs(l_eye - std::log1p(std::exp(-1.0)));
    ck.expect(d_eye <= 1e-9, "identity loss " + fmt(l_eye) + " vs ln(1+e^-1)");

    r.passed = ck.ok;
    r.detail = ck.ok ? "|delta| " + fmt(d_zero) + " and " + fmt(d_eye) : ck.first_fail;
    return r;
}

// Wall-clock budgets, seconds; 0 means no stated budget.
double time_budget(const std::string& name) {
    if (name.rfind("A1", 0) == 0 || name.rfind("A2", 0) == 0 || name.rfind("A7", 0) == 0)
        return 5;
    if (name.rfind("A3", 0) == 0) return 10;
    if (name.rfind("A4", 0) == 0) return 30;
    if (name.rfind("A5", 0) == 0) return 120;
    return 0;
}

}  // namespace

std::vector<CheckResult> run_acceptance_checks() {
    std::vector<CheckResult (*)()> checks = {check_a1, check_a2, check_a3, check_a4, check_a5,
                                             check_a6, check_a7, check_a8, check_a9};
    std::vector<CheckResult> results;
    for (auto* fn : checks) {
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult res;
        try {
            res = fn();
        } catch (const std::exception& e) {
            res.passed = false;
            res.detail = std::string("exception: ") + e.what();
            if (res.name.empty()) res.name = "A? (threw before naming itself)";
        }
        res.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double budget = time_budget(res.name);
        if (res.passed && budget > 0 && res.seconds > budget) {
            res.passed = false;
            res.detail += " [over time budget " + fmt(budget) + "s]";
        }
        results.push_back(std::move(res));
    }
    return results;
}

bool print_acceptance(std::ostream& out) {
    bool all = true;
    for (const CheckResult& res : run_acceptance_checks()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2fs", res.seconds);
        out << res.name << ": " << (res.passed ? "PASS" : "FAIL") << " (" << res.detail << ", "
            << buf << ")\n";
        all &= res.passed;
    }
    return all;
}

}  // namespace tokalign
