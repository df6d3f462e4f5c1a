// The weighting strategies that instantiate the token-pair matrix T, plus
// the pair_similarity facade that blends fine and global similarities.
//
// Directionality convention: a flow always has shape l1 x l2 regardless of
// direction. VisualToText normalizes over text tokens within each visual
// row, TextToVisual over visual tokens within each text column.

#pragma once

#include <cmath>
#include <optional>

#include "tokalign/core.hpp"
#include "tokalign/transport.hpp"
#include "tokalign/types.hpp"

namespace tokalign {

struct StrategyConfig {
    Strategy kind = Strategy::TokenFlow;
    double lambda = 4.0;         // softmax inverse temperature
    double global_blend_w = 0;   // weight w_g on the global similarity
    TransportConfig transport;   // emd only
    std::optional<Mat<double>> learnable_params;  // Lmax x Lmax, learnable only

    // Defaults per strategy: the blended strategies (tokenflow, emd) start
    // at an even split, the subsumed ones use pure fine similarity.
    static StrategyConfig for_kind(Strategy kind) {
        StrategyConfig cfg;
        cfg.kind = kind;
        cfg.global_blend_w =
            (kind == Strategy::TokenFlow || kind == Strategy::Emd) ? 0.5 : 0.0;
        return cfg;
    }

    void validate() const {
        if (lambda <= 0) throw InvalidParameter("StrategyConfig: lambda must be > 0");
        if (global_blend_w < 0 || global_blend_w > 1)
            throw InvalidParameter("StrategyConfig: global_blend_w must be in [0,1]");
    }
};

template <class Scalar>
MatchingFlow<Scalar> uniform_flow(Index l1, Index l2) {
    if (l1 < 1 || l2 < 1) throw EmptySequence("uniform_flow: counts must be >= 1");
    MatchingFlow<Scalar> flow;
    flow.t = Mat<Scalar>::Constant(l1, l2, Scalar(1) / Scalar(l1 * l2));
    flow.strategy = Strategy::Uniform;
    return flow;
}

// One-hot per row (VisualToText) or per column (TextToVisual) at the largest
// similarity; ties go to the lowest index. `avg` divides by the row (column)
// count, `sum` keeps weight 1 per winner.
template <class Scalar>
MatchingFlow<Scalar> max_flow(const SimilarityMatrix<Scalar>& c, bool average,
                              Direction direction) {
    if (c.l1() < 1 || c.l2() < 1) throw EmptySequence("max_flow: empty similarity");
    MatchingFlow<Scalar> flow;
    flow.t = Mat<Scalar>::Zero(c.l1(), c.l2());
    flow.direction = direction;
    flow.strategy = average ? Strategy::MaxAvg : Strategy::MaxSum;
    if (direction == Direction::VisualToText) {
        const Scalar v = average ? Scalar(1) / Scalar(c.l1()) : Scalar(1);
        for (Index s = 0; s < c.l1(); ++s) {
            Index best = 0;
            c.c.row(s).maxCoeff(&best);
            flow.t(s, best) = v;
        }
    } else {
        const Scalar v = average ? Scalar(1) / Scalar(c.l2()) : Scalar(1);
        for (Index t = 0; t < c.l2(); ++t) {
            Index best = 0;
            c.c.col(t).maxCoeff(&best);
            flow.t(best, t) = v;
        }
    }
    return flow;
}

namespace detail {

// Stable softmax of one vector scaled by lambda.
template <class Scalar>
Vec<Scalar> softmax(const Vec<Scalar>& x, Scalar lambda) {
    const Vec<Scalar> z = lambda * x;
    const Scalar m = z.maxCoeff();
    Vec<Scalar> out = (z.array() - m).exp();
    return out / out.sum();
}

}  // namespace detail

// SCAN attention as a flow: beta = softmax(lambda c) per row (column), then
// divide by l1 (l2) so aggregation averages the attended similarities.
template <class Scalar>
MatchingFlow<Scalar> scan_flow(const SimilarityMatrix<Scalar>& c, Scalar lambda,
                               Direction direction) {
    if (lambda <= 0) throw InvalidParameter("scan_flow: lambda must be > 0");
    if (c.l1() < 1 || c.l2() < 1) throw EmptySequence("scan_flow: empty similarity");
    MatchingFlow<Scalar> flow;
    flow.t.resize(c.l1(), c.l2());
    flow.direction = direction;
    flow.strategy = Strategy::Scan;
    if (direction == Direction::VisualToText) {
        for (Index s = 0; s < c.l1(); ++s)
            flow.t.row(s) =
                detail::softmax<Scalar>(c.c.row(s).transpose(), lambda).transpose() /
                Scalar(c.l1());
    } else {
        for (Index t = 0; t < c.l2(); ++t)
            flow.t.col(t) = detail::softmax<Scalar>(c.c.col(t), lambda) / Scalar(c.l2());
    }
    return flow;
}

// Independent oracle for scan_flow: attend text tokens per visual token
// (a_s = sum_t beta_st omega_t), then average mu_s . a_s.
template <class Scalar>
Scalar scan_attended_similarity(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                Scalar lambda) {
    if (mu.dim() != omega.dim())
        throw DimMismatch("scan_attended_similarity: embedding dims differ");
    const Mat<Scalar> m = unmasked_rows(mu);
    const Mat<Scalar> o = unmasked_rows(omega);
    const Mat<Scalar> c = m * o.transpose();
    Scalar acc = 0;
    for (Index s = 0; s < m.rows(); ++s) {
        const Vec<Scalar> beta = detail::softmax<Scalar>(c.row(s).transpose(), lambda);
        const Vec<Scalar> attended = o.transpose() * beta;
        acc += (m.row(s) * attended).value();
    }
    return acc / Scalar(m.rows());
}

// Crop the parameter matrix to the pair's shape and softmax over all cells.
template <class Scalar>
MatchingFlow<Scalar> learnable_flow(const Mat<Scalar>& params, Index l1, Index l2) {
    if (params.rows() < l1 || params.cols() < l2)
        throw CropTooSmall("learnable_flow: params smaller than pair shape");
    if (l1 < 1 || l2 < 1) throw EmptySequence("learnable_flow: counts must be >= 1");
    const Mat<Scalar> crop = params.topLeftCorner(l1, l2);
    const Scalar m = crop.maxCoeff();
    Mat<Scalar> ex = (crop.array() - m).exp();
    MatchingFlow<Scalar> flow;
    flow.t = ex / ex.sum();
    flow.strategy = Strategy::Learnable;
    return flow;
}

// VisualToText row s: d_s * softmax_t(lambda e_t c_st) / l1,
// so the row mass is d_s / l1 (signed when d_s < 0). TextToVisual is the
// column analogue with e_t / l2.
template <class Scalar>
MatchingFlow<Scalar> tokenflow_flow(const SimilarityMatrix<Scalar>& c,
                                    const TokenWeights<Scalar>& w, Scalar lambda,
                                    Direction direction) {
    if (lambda < 0) throw InvalidParameter("tokenflow_flow: lambda must be >= 0");
    if (w.d.size() != c.l1() || w.e.size() != c.l2())
        throw DimMismatch("tokenflow_flow: weight sizes do not match c");
    MatchingFlow<Scalar> flow;
    flow.t.resize(c.l1(), c.l2());
    flow.direction = direction;
    flow.strategy = Strategy::TokenFlow;
    if (direction == Direction::VisualToText) {
        for (Index s = 0; s < c.l1(); ++s) {
            const Vec<Scalar> logits = w.e.cwiseProduct(c.c.row(s).transpose());
            flow.t.row(s) = w.d[s] * detail::softmax<Scalar>(logits, lambda).transpose() /
                            Scalar(c.l1());
        }
    } else {
        for (Index t = 0; t < c.l2(); ++t) {
            const Vec<Scalar> logits = w.d.cwiseProduct(c.c.col(t));
            flow.t.col(t) =
                w.e[t] * detail::softmax<Scalar>(logits, lambda) / Scalar(c.l2());
        }
    }
    return flow;
}

namespace detail {

template <class Scalar>
std::pair<MatchingFlow<Scalar>, MatchingFlow<Scalar>> strategy_flows(
    const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
    const SimilarityMatrix<Scalar>& c, const StrategyConfig& cfg) {
    const Scalar lambda = Scalar(cfg.lambda);
    switch (cfg.kind) {
        case Strategy::Uniform: {
            auto f = uniform_flow<Scalar>(c.l1(), c.l2());
            auto b = f;
            b.direction = Direction::TextToVisual;
            return {f, b};
        }
        case Strategy::Learnable: {
            if (!cfg.learnable_params)
                throw InvalidParameter("pair_similarity: learnable strategy needs params");
            auto f = learnable_flow<Scalar>(cfg.learnable_params->template cast<Scalar>(),
                                            c.l1(), c.l2());
            auto b = f;
            b.direction = Direction::TextToVisual;
            return {f, b};
        }
        case Strategy::Scan:
            return {scan_flow(c, lambda, Direction::VisualToText),
                    scan_flow(c, lambda, Direction::TextToVisual)};
        case Strategy::MaxAvg:
            return {max_flow(c, true, Direction::VisualToText),
                    max_flow(c, true, Direction::TextToVisual)};
        case Strategy::MaxSum:
            return {max_flow(c, false, Direction::VisualToText),
                    max_flow(c, false, Direction::TextToVisual)};
        case Strategy::Emd: {
            auto f = emd_flow(mu, omega, cfg.transport);
            auto b = f;
            b.direction = Direction::TextToVisual;
            return {f, b};
        }
        case Strategy::TokenFlow: {
            const TokenWeights<Scalar> w = token_weights(mu, omega);
            return {tokenflow_flow(c, w, lambda, Direction::VisualToText),
                    tokenflow_flow(c, w, lambda, Direction::TextToVisual)};
        }
    }
    throw InvalidParameter("pair_similarity: unknown strategy");
}

}  // namespace detail

// Full per-pair scoring: fine similarities from the strategy's two flows,
// global similarity from the summary vectors, and the w_g blend.
template <class Scalar>
PairScore<Scalar> pair_similarity(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                  const StrategyConfig& cfg) {
    cfg.validate();
    const SimilarityMatrix<Scalar> c = token_similarity_matrix(mu, omega);
    const auto [fv, ft] = detail::strategy_flows(mu, omega, c, cfg);
    PairScore<Scalar> score;
    score.s_fine_v = aggregate_similarity(c, fv);
    score.s_fine_t = aggregate_similarity(c, ft);
    score.s_global = global_similarity(mu, omega);
    const Scalar wg = Scalar(cfg.global_blend_w);
    score.s_v = wg * *score.s_global + (Scalar(1) - wg) * *score.s_fine_v;
    score.s_t = wg * *score.s_global + (Scalar(1) - wg) * *score.s_fine_t;
    return score;
}

}  // namespace tokalign
