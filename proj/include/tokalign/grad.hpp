// Analytic gradients of blended pair similarities plus the finite-difference
// oracle used to verify them.
//
// All pair gradients are taken with respect to the normalized token rows and
// the two global vectors treated as independent inputs. The Jacobian of the
// normalization stage is composed separately (chain_through_normalization),
// so each stage is checkable on its own.
//
// Derivative of the fine similarity through a row softmax: with
// sigma = softmax(z) and A = sum_t sigma_t c_t, any logit bump dz_t
// contributes sigma_t (c_t - A) dz_t. The per-strategy formulas below are
// this rule specialized to z = lambda*c (scan) and z = lambda*e.*c
// (tokenflow, which adds the d_s prefactor and the weight chains).

#pragma once

#include <cmath>
#include <utility>

#include "tokalign/core.hpp"
#include "tokalign/loss.hpp"
#include "tokalign/strategies.hpp"
#include "tokalign/types.hpp"

namespace tokalign {

enum class GradTarget { SV, ST, Blended };

template <class Scalar>
struct PairGradient {
    Mat<Scalar> d_mu;            // l1 x d
    Mat<Scalar> d_omega;         // l2 x d
    Vec<Scalar> d_mu_global;     // d
    Vec<Scalar> d_omega_global;  // d
    GradTarget wrt = GradTarget::SV;
};

using PairGradientd = PairGradient<double>;

namespace detail {

// Assemble a PairGradient from the gradient wrt c (shape l1 x l2) plus
// optional gradients wrt the token weights d, e. Handles every chain that is
// shared between strategies:
//   c_st = mu_s . omega_t,  d_s = mu_s . omega_bar,  e_t = mu_bar . omega_t,
//   s_global = mu_bar . omega_bar (blend weight w_g).
template <class Scalar>
PairGradient<Scalar> assemble_pair_gradient(const Mat<Scalar>& m, const Mat<Scalar>& o,
                                            const Vec<Scalar>& mu_bar,
                                            const Vec<Scalar>& omega_bar,
                                            const Mat<Scalar>& g_c, const Vec<Scalar>* g_d,
                                            const Vec<Scalar>* g_e, Scalar w_g,
                                            GradTarget wrt) {
    PairGradient<Scalar> grad;
    grad.wrt = wrt;
    grad.d_mu = g_c * o;
    grad.d_omega = g_c.transpose() * m;
    grad.d_mu_global = w_g * omega_bar;
    grad.d_omega_global = w_g * mu_bar;
    if (g_d) {
        grad.d_mu += *g_d * omega_bar.transpose();
        grad.d_omega_global += m.transpose() * *g_d;
    }
    if (g_e) {
        grad.d_omega += *g_e * mu_bar.transpose();
        grad.d_mu_global += o.transpose() * *g_e;
    }
    return grad;
}

}  // namespace detail

// Blended uniform similarity: fine part is the mean of c.
template <class Scalar>
PairGradient<Scalar> uniform_gradient(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                      const StrategyConfig& cfg,
                                      Direction direction = Direction::VisualToText) {
    const Mat<Scalar> m = unmasked_rows(mu);
    const Mat<Scalar> o = unmasked_rows(omega);
    const Scalar fine_w = Scalar(1) - Scalar(cfg.global_blend_w);
    const Mat<Scalar> g_c =
        Mat<Scalar>::Constant(m.rows(), o.rows(), fine_w / Scalar(m.rows() * o.rows()));
    return detail::assemble_pair_gradient<Scalar>(
        m, o, mu.global, omega.global, g_c, nullptr, nullptr, Scalar(cfg.global_blend_w),
        direction == Direction::VisualToText ? GradTarget::SV : GradTarget::ST);
}

// Blended SCAN similarity; the argmax-free softmax chain only.
template <class Scalar>
PairGradient<Scalar> scan_gradient(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                   const StrategyConfig& cfg,
                                   Direction direction = Direction::VisualToText) {
    const Mat<Scalar> m = unmasked_rows(mu);
    const Mat<Scalar> o = unmasked_rows(omega);
    const Mat<Scalar> c = m * o.transpose();
    const Scalar lambda = Scalar(cfg.lambda);
    const Scalar fine_w = Scalar(1) - Scalar(cfg.global_blend_w);
    Mat<Scalar> g_c(c.rows(), c.cols());
    if (direction == Direction::VisualToText) {
        for (Index s = 0; s < c.rows(); ++s) {
            const Vec<Scalar> beta = detail::softmax<Scalar>(c.row(s).transpose(), lambda);
            const Scalar a = beta.dot(c.row(s).transpose());
            for (Index t = 0; t < c.cols(); ++t)
                g_c(s, t) = fine_w * beta[t] / Scalar(c.rows()) *
                            (Scalar(1) + lambda * (c(s, t) - a));
        }
    } else {
        for (Index t = 0; t < c.cols(); ++t) {
            const Vec<Scalar> beta = detail::softmax<Scalar>(c.col(t), lambda);
            const Scalar b = beta.dot(c.col(t));
            for (Index s = 0; s < c.rows(); ++s)
                g_c(s, t) = fine_w * beta[s] / Scalar(c.cols()) *
                            (Scalar(1) + lambda * (c(s, t) - b));
        }
    }
    return detail::assemble_pair_gradient<Scalar>(
        m, o, mu.global, omega.global, g_c, nullptr, nullptr, Scalar(cfg.global_blend_w),
        direction == Direction::VisualToText ? GradTarget::SV : GradTarget::ST);
}

// Blended max similarity; the argmax pattern is locally constant, so the
// gradient wrt c is the flow matrix itself (subgradient at ties).
template <class Scalar>
PairGradient<Scalar> max_gradient(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                  const StrategyConfig& cfg,
                                  Direction direction = Direction::VisualToText) {
    const Mat<Scalar> m = unmasked_rows(mu);
    const Mat<Scalar> o = unmasked_rows(omega);
    SimilarityMatrix<Scalar> c;
    c.c = m * o.transpose();
    const bool average = cfg.kind != Strategy::MaxSum;
    const Mat<Scalar> g_c =
        (Scalar(1) - Scalar(cfg.global_blend_w)) * max_flow(c, average, direction).t;
    return detail::assemble_pair_gradient<Scalar>(
        m, o, mu.global, omega.global, g_c, nullptr, nullptr, Scalar(cfg.global_blend_w),
        direction == Direction::VisualToText ? GradTarget::SV : GradTarget::ST);
}

// Blended TokenFlow similarity, the full chain through c, d, e, the softmax
// and the blend.
template <class Scalar>
PairGradient<Scalar> tokenflow_gradient(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                        const StrategyConfig& cfg,
                                        Direction direction = Direction::VisualToText) {
    const Mat<Scalar> m = unmasked_rows(mu);
    const Mat<Scalar> o = unmasked_rows(omega);
    const Mat<Scalar> c = m * o.transpose();
    const Vec<Scalar> d = m * omega.global;
    const Vec<Scalar> e = o * mu.global;
    const Scalar lambda = Scalar(cfg.lambda);
    const Scalar fine_w = Scalar(1) - Scalar(cfg.global_blend_w);
    const Index l1 = c.rows();
    const Index l2 = c.cols();

    Mat<Scalar> g_c(l1, l2);
    Vec<Scalar> g_d(l1);
    Vec<Scalar> g_e(l2);
    if (direction == Direction::VisualToText) {
        g_e.setZero();
        for (Index s = 0; s < l1; ++s) {
            const Vec<Scalar> sigma =
                detail::softmax<Scalar>(e.cwiseProduct(c.row(s).transpose()), lambda);
            const Scalar a = sigma.dot(c.row(s).transpose());
            g_d[s] = fine_w * a / Scalar(l1);
            for (Index t = 0; t < l2; ++t) {
                const Scalar swing = sigma[t] * (c(s, t) - a);
                g_c(s, t) = fine_w * d[s] / Scalar(l1) *
                            (sigma[t] + lambda * e[t] * swing);
                g_e[t] += fine_w * lambda / Scalar(l1) * d[s] * c(s, t) * swing;
            }
        }
    } else {
        g_d.setZero();
        for (Index t = 0; t < l2; ++t) {
            const Vec<Scalar> tau = detail::softmax<Scalar>(d.cwiseProduct(c.col(t)), lambda);
            const Scalar b = tau.dot(c.col(t));
            g_e[t] = fine_w * b / Scalar(l2);
            for (Index s = 0; s < l1; ++s) {
                const Scalar swing = tau[s] * (c(s, t) - b);
                g_c(s, t) = fine_w * e[t] / Scalar(l2) *
                            (tau[s] + lambda * d[s] * swing);
                g_d[s] += fine_w * lambda / Scalar(l2) * e[t] * c(s, t) * swing;
            }
        }
    }
    return detail::assemble_pair_gradient<Scalar>(
        m, o, mu.global, omega.global, g_c, &g_d, &g_e, Scalar(cfg.global_blend_w),
        direction == Direction::VisualToText ? GradTarget::SV : GradTarget::ST);
}

// Dispatcher for the strategies with analytic gradients.
template <class Scalar>
PairGradient<Scalar> pair_gradient(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega,
                                   const StrategyConfig& cfg,
                                   Direction direction = Direction::VisualToText) {
    switch (cfg.kind) {
        case Strategy::Uniform: return uniform_gradient(mu, omega, cfg, direction);
        case Strategy::Scan: return scan_gradient(mu, omega, cfg, direction);
        case Strategy::MaxAvg:
        case Strategy::MaxSum: return max_gradient(mu, omega, cfg, direction);
        case Strategy::TokenFlow: return tokenflow_gradient(mu, omega, cfg, direction);
        case Strategy::Learnable:
        case Strategy::Emd:
            throw InvalidParameter(
                "pair_gradient: no analytic embedding gradient for this strategy");
    }
    throw InvalidParameter("pair_gradient: unknown strategy");
}

// Central differences over every token entry and both global vectors.
// f takes (mu, omega) and returns a scalar; entries are perturbed raw, with
// no renormalization, matching the staged-differentiation convention.
template <class Scalar, class F>
PairGradient<Scalar> finite_diff_gradient(F&& f, const TokenSet<Scalar>& mu,
                                          const TokenSet<Scalar>& omega, Scalar h) {
    if (h <= 0) throw InvalidParameter("finite_diff_gradient: h must be > 0");
    TokenSet<Scalar> mu_p = mu;
    TokenSet<Scalar> om_p = omega;
    auto probe = [&](Scalar& cell) {
        const Scalar keep = cell;
        cell = keep + h;
        const Scalar up = f(mu_p, om_p);
        cell = keep - h;
        const Scalar down = f(mu_p, om_p);
        cell = keep;
        if (!std::isfinite(double(up)) || !std::isfinite(double(down)))
            throw NonFinite("finite_diff_gradient: f is not finite near the point");
        return (up - down) / (2 * h);
    };
    PairGradient<Scalar> grad;
    grad.d_mu.resize(mu.capacity(), mu.dim());
    grad.d_omega.resize(omega.capacity(), omega.dim());
    grad.d_mu_global.resize(mu.global.size());
    grad.d_omega_global.resize(omega.global.size());
    for (Index i = 0; i < mu.capacity(); ++i)
        for (Index j = 0; j < mu.dim(); ++j) grad.d_mu(i, j) = probe(mu_p.tokens(i, j));
    for (Index i = 0; i < omega.capacity(); ++i)
        for (Index j = 0; j < omega.dim(); ++j) grad.d_omega(i, j) = probe(om_p.tokens(i, j));
    for (Index j = 0; j < mu.global.size(); ++j)
        grad.d_mu_global[j] = probe(mu_p.global[j]);
    for (Index j = 0; j < omega.global.size(); ++j)
        grad.d_omega_global[j] = probe(om_p.global[j]);
    return grad;
}

// dL/ds_v and dL/ds_t of contrastive_loss, shapes matching the score
// matrices: (scale / 2N) * (softmax(scale*s) - y_hat) per query.
template <class Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> loss_score_gradient(const BatchScores<Scalar>& scores,
                                                        const SoftTargets<Scalar>& targets) {
    const Index n = scores.batch();
    const Scalar factor = scores.scale / (Scalar(2) * Scalar(n));
    Mat<Scalar> g_v(scores.s_v.rows(), scores.s_v.cols());
    for (Index i = 0; i < n; ++i) {
        const Vec<Scalar> p =
            detail::log_softmax<Scalar>(scores.scale * scores.s_v.row(i).transpose())
                .array()
                .exp();
        g_v.row(i) = factor * (p.transpose() - targets.y_hat_v.row(i));
    }
    Mat<Scalar> g_t(scores.s_t.rows(), scores.s_t.cols());
    for (Index i = 0; i < n; ++i) {
        const Vec<Scalar> p =
            detail::log_softmax<Scalar>(scores.scale * scores.s_t.col(i)).array().exp();
        g_t.col(i) = factor * (p - targets.y_hat_t.row(i).transpose());
    }
    return {g_v, g_t};
}

// Gradient wrt the raw vector x of a function known through its gradient wrt
// y = x / |x|:  g_x = (g_y - (g_y . y) y) / |x|.
template <class Scalar>
Vec<Scalar> chain_through_normalization(const Vec<Scalar>& g_normalized, const Vec<Scalar>& raw) {
    const Scalar norm = raw.norm();
    if (norm <= Scalar(kZeroNormEps))
        throw ZeroVector("chain_through_normalization: raw vector has near-zero norm");
    const Vec<Scalar> y = raw / norm;
    return (g_normalized - g_normalized.dot(y) * y) / norm;
}

}  // namespace tokalign
