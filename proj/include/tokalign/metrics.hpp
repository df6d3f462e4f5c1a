// Retrieval evaluation: recall at K, median rank, mean rank.
//
// Rank of the true item is 1 + the number of gallery items scoring strictly
// higher, so the true item wins ties (optimistic and deterministic).

#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "tokalign/types.hpp"

namespace tokalign {

struct RetrievalReport {
    std::map<int, double> r_at;  // K -> percentage
    double mdr = 0;
    double mnr = 0;
    Index n_queries = 0;
};

template <class Derived>
std::vector<Index> rank_of_truth(const Eigen::MatrixBase<Derived>& scores,
                                 const std::vector<Index>& truth) {
    if (Index(truth.size()) != scores.rows())
        throw ShapeMismatch("rank_of_truth: one truth index per query row required");
    std::vector<Index> ranks(truth.size());
    for (Index i = 0; i < scores.rows(); ++i) {
        const Index t = truth[std::size_t(i)];
        if (t < 0 || t >= scores.cols())
            throw IndexOutOfRange("rank_of_truth: truth index " + std::to_string(t) +
                                  " outside gallery");
        const auto ref = scores(i, t);
        Index above = 0;
        for (Index j = 0; j < scores.cols(); ++j)
            if (scores(i, j) > ref) ++above;
        ranks[std::size_t(i)] = 1 + above;
    }
    return ranks;
}

template <class Derived>
RetrievalReport retrieval_report(const Eigen::MatrixBase<Derived>& scores,
                                 const std::vector<Index>& truth, const std::vector<int>& ks) {
    if (ks.empty()) throw InvalidParameter("retrieval_report: at least one K required");
    if (truth.empty()) throw EmptySequence("retrieval_report: no queries");
    const std::vector<Index> ranks = rank_of_truth(scores, truth);
    RetrievalReport report;
    report.n_queries = Index(ranks.size());
    for (int k : ks) {
        Index hits = 0;
        for (Index r : ranks)
            if (r <= k) ++hits;
        report.r_at[k] = 100.0 * double(hits) / double(ranks.size());
    }
    std::vector<Index> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    report.mdr = n % 2 == 1 ? double(sorted[n / 2])
                            : (double(sorted[n / 2 - 1]) + double(sorted[n / 2])) / 2.0;
    double sum = 0;
    for (Index r : ranks) sum += double(r);
    report.mnr = sum / double(n);
    return report;
}

// Flat text form, one decimal place: `R@1=45.1 R@5=72.3 MdR=2.0 MnR=14.8`
inline std::string to_string(const RetrievalReport& report) {
    char buf[64];
    std::string out;
    for (const auto& [k, pct] : report.r_at) {
        std::snprintf(buf, sizeof buf, "R@%d=%.1f ", k, pct);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "MdR=%.1f ", report.mdr);
    out += buf;
    std::snprintf(buf, sizeof buf, "MnR=%.1f", report.mnr);
    out += buf;
    return out;
}

}  // namespace tokalign
