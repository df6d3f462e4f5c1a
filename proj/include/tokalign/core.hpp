// Basic similarity and aggregation kernels.
//
// Every kernel requires pre-normalized inputs; l2_normalize is explicit and
// never applied implicitly, so the algebraic identities of the aggregation
// scheme stay testable. Masked rows are skipped by gathering the unmasked
// rows first, which keeps l1/l2 equal to the true non-padded counts.

#pragma once

#include <vector>

#include "tokalign/types.hpp"

namespace tokalign {

inline constexpr double kZeroNormEps = 1e-12;

// Rows of `ts.tokens` with mask == true, in order.
template <class Scalar>
Mat<Scalar> unmasked_rows(const TokenSet<Scalar>& ts) {
    Mat<Scalar> out(ts.count(), ts.dim());
    Index r = 0;
    for (Index i = 0; i < ts.capacity(); ++i)
        if (ts.mask[i]) out.row(r++) = ts.tokens.row(i);
    return out;
}

// Drop masked rows entirely; the result has an all-true mask.
template <class Scalar>
TokenSet<Scalar> compact(const TokenSet<Scalar>& ts) {
    return TokenSet<Scalar>::dense(unmasked_rows(ts), ts.global);
}

// Scale every unmasked row and the global vector to unit Euclidean norm.
// Masked rows are left untouched.
template <class Scalar>
TokenSet<Scalar> l2_normalize(const TokenSet<Scalar>& ts) {
    TokenSet<Scalar> out = ts;
    for (Index i = 0; i < out.capacity(); ++i) {
        if (!out.mask[i]) continue;
        const Scalar n = out.tokens.row(i).norm();
        if (n <= kZeroNormEps)
            throw ZeroVector("l2_normalize: token row " + std::to_string(i) +
                             " has near-zero norm");
        out.tokens.row(i) /= n;
    }
    const Scalar gn = out.global.norm();
    if (gn <= kZeroNormEps)
        throw ZeroVector("l2_normalize: global vector has near-zero norm");
    out.global /= gn;
    return out;
}

// c[s][t] = mu_s . omega_t over unmasked rows, shape l1 x l2.
template <class Scalar>
SimilarityMatrix<Scalar> token_similarity_matrix(const TokenSet<Scalar>& mu,
                                                 const TokenSet<Scalar>& omega) {
    if (mu.dim() != omega.dim())
        throw DimMismatch("token_similarity_matrix: embedding dims differ (" +
                          std::to_string(mu.dim()) + " vs " +
                          std::to_string(omega.dim()) + ")");
    SimilarityMatrix<Scalar> sim;
    sim.c = unmasked_rows(mu) * unmasked_rows(omega).transpose();
    return sim;
}

// Dot product of the two global vectors.
template <class Scalar>
Scalar global_similarity(const TokenSet<Scalar>& mu, const TokenSet<Scalar>& omega) {
    if (mu.global.size() != omega.global.size())
        throw DimMismatch("global_similarity: global dims differ");
    return mu.global.dot(omega.global);
}

// sum_{s,t} c[s][t] * t[s][t]; bilinear in both arguments.
template <class Scalar>
Scalar aggregate_similarity(const SimilarityMatrix<Scalar>& c,
                            const MatchingFlow<Scalar>& flow) {
    if (c.c.rows() != flow.t.rows() || c.c.cols() != flow.t.cols())
        throw DimMismatch("aggregate_similarity: shape mismatch");
    return c.c.cwiseProduct(flow.t).sum();
}

// d_s = mu_s . omega_bar, e_t = mu_bar . omega_t over unmasked rows.
template <class Scalar>
TokenWeights<Scalar> token_weights(const TokenSet<Scalar>& mu,
                                   const TokenSet<Scalar>& omega) {
    if (mu.dim() != omega.dim())
        throw DimMismatch("token_weights: embedding dims differ");
    TokenWeights<Scalar> w;
    w.d = unmasked_rows(mu) * omega.global;
    w.e = unmasked_rows(omega) * mu.global;
    return w;
}

// Elementwise arithmetic mean of frame features; the result is not
// re-normalized (the caller decides whether a unit global is required).
template <class Scalar>
Vec<Scalar> mean_pool(const std::vector<Vec<Scalar>>& frames) {
    if (frames.empty()) throw EmptySequence("mean_pool: no frames");
    Vec<Scalar> acc = frames.front();
    for (std::size_t i = 1; i < frames.size(); ++i) {
        if (frames[i].size() != acc.size())
            throw DimMismatch("mean_pool: frame dims differ");
        acc += frames[i];
    }
    return acc / static_cast<Scalar>(frames.size());
}

}  // namespace tokalign
