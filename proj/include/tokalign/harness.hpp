// Synthetic corpus generation and the desk-scale toy trainer.
//
// The collision corpus is the mechanism demonstration: confuser items are
// built from concept sums that cancel (blocks (b+p)/sqrt2 and (b-p)/sqrt2),
// so mean-pooled globals coincide up to noise while token sets stay
// distinguishable. Global-only scoring is then blind to the pairing that
// token-level flows resolve.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tokalign/loss.hpp"
#include "tokalign/metrics.hpp"
#include "tokalign/strategies.hpp"
#include "tokalign/types.hpp"

namespace tokalign {

// mt19937_64 with explicitly coded transforms (Box-Muller, Fisher-Yates),
// so streams never depend on standard-library distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    double uniform01() {  // in (0, 1]
        return double((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Vec<double> gaussian_vec(Index n) {
        Vec<double> v(n);
        for (Index i = 0; i < n; ++i) v[i] = gaussian();
        return v;
    }

    Mat<double> gaussian_mat(Index rows, Index cols) {
        Mat<double> m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = gaussian();
        return m;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {  // Fisher-Yates
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[std::size_t(uniform_index(i))]);
    }

    // k distinct values from [0, n), order randomized.
    std::vector<Index> sample_without_replacement(Index n, Index k);

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0;
};

struct CorpusSpec {
    Index n_pairs = 64;
    Index tokens_per_item = 4;
    Index dim = 32;
    Index concept_count = 16;
    double noise_sigma = 0.05;
    bool collision_mode = false;
    std::uint64_t seed = 1;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<TokenSetd> visual, textual;          // normalized, globals set
    std::vector<Mat<double>> visual_raw, textual_raw;  // pre-normalization tokens
    std::vector<Index> truth;                        // truth[i] = i

    bool collision() const { return spec.collision_mode; }
    Index confuser_of(Index i) const { return i ^ 1; }
};

Corpus generate_corpus(const CorpusSpec& spec);

enum class ParamMode { EmbeddingDirect, LinearProjection };

struct MdConfig {
    double ema_momentum = 0.95;
    double target_alpha = 0.4;
    std::size_t queue_len = 16;
};

struct TrainConfig {
    StrategyConfig strategy = StrategyConfig::for_kind(Strategy::TokenFlow);
    int steps = 200;
    double lr = 1e-3;
    Index batch = 8;
    std::optional<MdConfig> md;
    ParamMode param_mode = ParamMode::EmbeddingDirect;
    double logit_scale = 100.0;
    // Alternative reading of the blend: keep pair scores fine-only and add
    // the global contrastive term to the loss with weight global_blend_w.
    bool global_as_loss_term = false;
    // Every holdout_every-th unit (confuser pair on collision corpora, item
    // otherwise) is held out of training and used for the final report.
    Index holdout_every = 4;
    std::uint64_t seed = 0x5eed;
};

struct TrainTrace {
    std::vector<double> losses;           // one entry per step, pre-update
    RetrievalReport report_v2t, report_t2v;  // held-out retrieval, both directions
    double confuser_accuracy = -1;        // percent; -1 when not a collision corpus
    std::vector<Index> holdout;           // held-out item indices
};

// Line-delimited serialization: one `step=<k> loss=<v>` line per step, then
// the final reports.
std::string to_lines(const TrainTrace& trace);

TrainTrace train_toy(const TrainConfig& cfg, const Corpus& corpus);

// Blended score matrices s_v and s_t over all (visual, text) pairs.
// `threads` > 1 splits the visual rows across workers; every cell is written
// exactly once, so the result does not depend on the thread count.
std::pair<Mat<double>, Mat<double>> score_matrices(const std::vector<TokenSetd>& visuals,
                                                   const std::vector<TokenSetd>& texts,
                                                   const StrategyConfig& cfg, int threads = 1);

// Percent of eval items whose true caption scores strictly above the
// confuser caption under s_v; exact ties credit 0.5.
double confuser_discrimination(const std::vector<TokenSetd>& visuals,
                               const std::vector<TokenSetd>& texts,
                               const std::vector<Index>& eval_items,
                               const StrategyConfig& cfg);

// The toy model parameterizations. Exposed so the gradient acceptance checks
// can drive the exact training-time loss path end to end.
struct ToyModel {
    ParamMode mode = ParamMode::EmbeddingDirect;
    std::vector<Mat<double>> vis, txt;  // embedding-direct: raw token matrices
    Mat<double> w_v, w_t;               // linear-projection: the two maps

    static ToyModel init(const Corpus& corpus, ParamMode mode);
    Vec<double> pack() const;
    void unpack(const Vec<double>& flat);

    // Normalize rows of the (projected) raw tokens and pool the global.
    TokenSetd realize_visual(const Corpus& corpus, Index i) const;
    TokenSetd realize_textual(const Corpus& corpus, Index i) const;
};

// Loss of one batch under the trainer's scoring rules (no queues) and its
// gradient wrt the packed parameters. Drives A-level gradient checks.
struct BatchLoss {
    double value = 0;
    Vec<double> grad;
};
BatchLoss batch_loss_and_gradient(const ToyModel& model, const Corpus& corpus,
                                  const std::vector<Index>& batch_items,
                                  const TrainConfig& cfg,
                                  const SoftTargets<double>* targets_override = nullptr);

}  // namespace tokalign
