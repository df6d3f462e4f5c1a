#include "tokalign/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <thread>

#include "tokalign/core.hpp"
#include "tokalign/grad.hpp"

namespace tokalign {

std::vector<Index> Rng::sample_without_replacement(Index n, Index k) {
    if (k > n) throw InvalidParameter("sample_without_replacement: k > n");
    std::vector<Index> pool(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) pool[std::size_t(i)] = i;
    for (Index i = 0; i < k; ++i)
        std::swap(pool[std::size_t(i)],
                  pool[std::size_t(i) + std::size_t(uniform_index(std::uint64_t(n - i)))]);
    pool.resize(std::size_t(k));
    return pool;
}

namespace {

// Normalize rows and pool the global; the one realization rule shared by the
// corpus and the toy model.
TokenSetd realize_raw(const Mat<double>& raw) {
    TokenSetd ts = TokenSetd::dense(raw, Vec<double>::Ones(raw.cols()));
    ts = l2_normalize(ts);
    Vec<double> m = ts.tokens.colwise().mean().transpose();
    const double norm = m.norm();
    if (norm <= kZeroNormEps) throw ZeroVector("realize: pooled global has near-zero norm");
    ts.global = m / norm;
    return ts;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
    if (spec.n_pairs < 1 || spec.tokens_per_item < 1 || spec.dim < 1 ||
        spec.concept_count < 1)
        throw InvalidParameter("generate_corpus: counts must be >= 1");
    if (spec.noise_sigma < 0) throw InvalidParameter("generate_corpus: negative sigma");
    if (spec.concept_count > spec.dim)
        throw SpecInfeasible("generate_corpus: concept_count exceeds dim");

    Rng rng(spec.seed);
    // Orthonormal concept directions: QR of a Gaussian matrix.
    const Mat<double> gauss = rng.gaussian_mat(spec.dim, spec.concept_count);
    Eigen::HouseholderQR<Mat<double>> qr(gauss);
    const Mat<double> basis =
        qr.householderQ() * Mat<double>::Identity(spec.dim, spec.concept_count);

    Corpus corpus;
    corpus.spec = spec;
    corpus.truth.resize(std::size_t(spec.n_pairs));
    for (Index i = 0; i < spec.n_pairs; ++i) corpus.truth[std::size_t(i)] = i;

    auto noisy = [&](const Vec<double>& center) {
        return spec.noise_sigma > 0
                   ? Vec<double>(center + spec.noise_sigma * rng.gaussian_vec(spec.dim))
                   : center;
    };

    if (!spec.collision_mode) {
        for (Index i = 0; i < spec.n_pairs; ++i) {
            std::vector<Index> concepts(static_cast<std::size_t>(spec.tokens_per_item));
            for (auto& c : concepts)
                c = Index(rng.uniform_index(std::uint64_t(spec.concept_count)));
            Mat<double> vis(spec.tokens_per_item, spec.dim);
            Mat<double> txt(spec.tokens_per_item, spec.dim);
            for (Index t = 0; t < spec.tokens_per_item; ++t)
                vis.row(t) = noisy(basis.col(concepts[std::size_t(t)])).transpose();
            for (Index t = 0; t < spec.tokens_per_item; ++t)
                txt.row(t) = noisy(basis.col(concepts[std::size_t(t)])).transpose();
            corpus.visual_raw.push_back(vis);
            corpus.textual_raw.push_back(txt);
        }
    } else {
        // Confuser pairs (2k, 2k+1): tokens_per_item/2 blocks, each block
        // {(b+p)/sqrt2, (b-p)/sqrt2}. Bases b are shared by the whole corpus
        // so every mean-pooled global collapses onto the same direction;
        // partner concepts p differ per item, keeping token sets distinct.
        if (spec.n_pairs % 2 != 0)
            throw SpecInfeasible("generate_corpus: collision_mode needs an even n_pairs");
        if (spec.tokens_per_item % 2 != 0)
            throw SpecInfeasible("generate_corpus: collision_mode needs even tokens_per_item");
        const Index blocks = spec.tokens_per_item / 2;
        const Index pool = spec.concept_count - blocks;
        if (pool < 2 * blocks)
            throw SpecInfeasible("generate_corpus: need concept_count >= 3 * tokens_per_item/2");

        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        std::set<std::vector<Index>> used_signatures;
        auto draw_partners = [&](std::vector<Index>& a, std::vector<Index>& b) {
            for (int attempt = 0; attempt < 1000; ++attempt) {
                std::vector<Index> both = rng.sample_without_replacement(pool, 2 * blocks);
                a.assign(both.begin(), both.begin() + blocks);
                b.assign(both.begin() + blocks, both.end());
                if (!used_signatures.count(a) && !used_signatures.count(b)) {
                    used_signatures.insert(a);
                    used_signatures.insert(b);
                    return;
                }
            }
            throw SpecInfeasible("generate_corpus: partner pool exhausted, raise concept_count");
        };
        auto make_item = [&](const std::vector<Index>& partners) {
            Mat<double> raw(spec.tokens_per_item, spec.dim);
            for (Index j = 0; j < blocks; ++j) {
                const Vec<double> b = basis.col(j);
                const Vec<double> p = basis.col(blocks + partners[std::size_t(j)]);
                raw.row(2 * j) = noisy(inv_sqrt2 * (b + p)).transpose();
                raw.row(2 * j + 1) = noisy(inv_sqrt2 * (b - p)).transpose();
            }
            return raw;
        };
        for (Index k = 0; k < spec.n_pairs / 2; ++k) {
            std::vector<Index> partners_a, partners_b;
            draw_partners(partners_a, partners_b);
            corpus.visual_raw.push_back(make_item(partners_a));
            corpus.textual_raw.push_back(make_item(partners_a));
            corpus.visual_raw.push_back(make_item(partners_b));
            corpus.textual_raw.push_back(make_item(partners_b));
        }
    }

    for (Index i = 0; i < spec.n_pairs; ++i) {
        corpus.visual.push_back(realize_raw(corpus.visual_raw[std::size_t(i)]));
        corpus.textual.push_back(realize_raw(corpus.textual_raw[std::size_t(i)]));
    }
    return corpus;
}

std::pair<Mat<double>, Mat<double>> score_matrices(const std::vector<TokenSetd>& visuals,
                                                   const std::vector<TokenSetd>& texts,
                                                   const StrategyConfig& cfg, int threads) {
    const Index n = Index(visuals.size());
    const Index m = Index(texts.size());
    Mat<double> s_v(n, m), s_t(n, m);
    auto rows = [&](Index lo, Index hi) {
        for (Index i = lo; i < hi; ++i)
            for (Index j = 0; j < m; ++j) {
                const PairScored p =
                    pair_similarity(visuals[std::size_t(i)], texts[std::size_t(j)], cfg);
                s_v(i, j) = p.s_v;
                s_t(i, j) = p.s_t;
            }
    };
    const int workers = std::max(1, std::min<int>(threads, int(n)));
    if (workers == 1) {
        rows(0, n);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back(rows, n * w / workers, n * (w + 1) / workers);
        for (auto& th : pool) th.join();
    }
    return {s_v, s_t};
}

double confuser_discrimination(const std::vector<TokenSetd>& visuals,
                               const std::vector<TokenSetd>& texts,
                               const std::vector<Index>& eval_items,
                               const StrategyConfig& cfg) {
    if (eval_items.empty()) throw EmptySequence("confuser_discrimination: no eval items");
    double credit = 0;
    for (Index i : eval_items) {
        const Index j = i ^ 1;
        if (j >= Index(texts.size()))
            throw IndexOutOfRange("confuser_discrimination: confuser index out of range");
        const double s_true =
            pair_similarity(visuals[std::size_t(i)], texts[std::size_t(i)], cfg).s_v;
        const double s_conf =
            pair_similarity(visuals[std::size_t(i)], texts[std::size_t(j)], cfg).s_v;
        if (s_true > s_conf)
            credit += 1;
        else if (s_true == s_conf)
            credit += 0.5;
    }
    return 100.0 * credit / double(eval_items.size());
}

// ---------------------------------------------------------------------------
// Toy model

ToyModel ToyModel::init(const Corpus& corpus, ParamMode mode) {
    ToyModel model;
    model.mode = mode;
    if (mode == ParamMode::EmbeddingDirect) {
        model.vis = corpus.visual_raw;
        model.txt = corpus.textual_raw;
    } else {
        model.w_v = Mat<double>::Identity(corpus.spec.dim, corpus.spec.dim);
        model.w_t = Mat<double>::Identity(corpus.spec.dim, corpus.spec.dim);
    }
    return model;
}

Vec<double> ToyModel::pack() const {
    std::vector<const Mat<double>*> parts;
    if (mode == ParamMode::EmbeddingDirect) {
        for (const auto& m : vis) parts.push_back(&m);
        for (const auto& m : txt) parts.push_back(&m);
    } else {
        parts = {&w_v, &w_t};
    }
    Index total = 0;
    for (const auto* m : parts) total += m->size();
    Vec<double> flat(total);
    Index at = 0;
    for (const auto* m : parts) {
        flat.segment(at, m->size()) = Eigen::Map<const Vec<double>>(m->data(), m->size());
        at += m->size();
    }
    return flat;
}

void ToyModel::unpack(const Vec<double>& flat) {
    std::vector<Mat<double>*> parts;
    if (mode == ParamMode::EmbeddingDirect) {
        for (auto& m : vis) parts.push_back(&m);
        for (auto& m : txt) parts.push_back(&m);
    } else {
        parts = {&w_v, &w_t};
    }
    Index at = 0;
    for (auto* m : parts) {
        if (at + m->size() > flat.size())
            throw ShapeMismatch("ToyModel::unpack: flat vector too short");
        Eigen::Map<Vec<double>>(m->data(), m->size()) = flat.segment(at, m->size());
        at += m->size();
    }
    if (at != flat.size()) throw ShapeMismatch("ToyModel::unpack: flat vector too long");
}

TokenSetd ToyModel::realize_visual(const Corpus& corpus, Index i) const {
    return mode == ParamMode::EmbeddingDirect
               ? realize_raw(vis[std::size_t(i)])
               : realize_raw(corpus.visual_raw[std::size_t(i)] * w_v.transpose());
}

TokenSetd ToyModel::realize_textual(const Corpus& corpus, Index i) const {
    return mode == ParamMode::EmbeddingDirect
               ? realize_raw(txt[std::size_t(i)])
               : realize_raw(corpus.textual_raw[std::size_t(i)] * w_t.transpose());
}

namespace {

// Gradient wrt the normalized token rows and global of one item.
struct ItemGrad {
    Mat<double> tokens;  // l x d
    Vec<double> global;  // d

    void init(Index l, Index d) {
        tokens = Mat<double>::Zero(l, d);
        global = Vec<double>::Zero(d);
    }
    void add(double coeff, const Mat<double>& d_tokens, const Vec<double>& d_global) {
        tokens += coeff * d_tokens;
        global += coeff * d_global;
    }
};

// Chain an ItemGrad through global pooling and row normalization down to the
// raw (pre-normalization) token matrix.
Mat<double> chain_to_raw(const ItemGrad& grad, const Mat<double>& raw) {
    const Index l = raw.rows();
    Mat<double> normalized(l, raw.cols());
    for (Index s = 0; s < l; ++s) normalized.row(s) = raw.row(s) / raw.row(s).norm();
    const Vec<double> m = normalized.colwise().mean().transpose();
    const Vec<double> g_m = chain_through_normalization(grad.global, m);
    Mat<double> out(l, raw.cols());
    for (Index s = 0; s < l; ++s) {
        const Vec<double> total = grad.tokens.row(s).transpose() + g_m / double(l);
        out.row(s) =
            chain_through_normalization(total, Vec<double>(raw.row(s).transpose()))
                .transpose();
    }
    return out;
}

struct QueueContext {
    std::vector<TokenSetd> queued_texts;    // extra s_v columns
    std::vector<TokenSetd> queued_visuals;  // extra s_t rows
};

// One scoring term: a strategy configuration with a loss weight. The split
// reading of the blend uses two terms (fine-only and global-only).
struct LossTerm {
    StrategyConfig cfg;
    double weight = 1;
};

std::vector<LossTerm> loss_terms(const TrainConfig& cfg) {
    if (!cfg.global_as_loss_term) return {{cfg.strategy, 1.0}};
    LossTerm fine{cfg.strategy, 1.0 - cfg.strategy.global_blend_w};
    fine.cfg.global_blend_w = 0;
    LossTerm glob{cfg.strategy, cfg.strategy.global_blend_w};
    glob.cfg.global_blend_w = 1;
    return {fine, glob};
}

BatchLoss batch_loss_impl(const ToyModel& model, const Corpus& corpus,
                          const std::vector<Index>& batch_items, const TrainConfig& cfg,
                          const QueueContext* queues,
                          const SoftTargets<double>* targets_override) {
    const Index n = Index(batch_items.size());
    if (n < 1) throw EmptySequence("batch_loss: empty batch");
    std::vector<TokenSetd> vis, txt;
    vis.reserve(std::size_t(n));
    txt.reserve(std::size_t(n));
    for (Index i : batch_items) {
        vis.push_back(model.realize_visual(corpus, i));
        txt.push_back(model.realize_textual(corpus, i));
    }
    const Index qt = queues ? Index(queues->queued_texts.size()) : 0;
    const Index qv = queues ? Index(queues->queued_visuals.size()) : 0;

    std::vector<ItemGrad> g_vis(static_cast<std::size_t>(n)), g_txt(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        g_vis[std::size_t(i)].init(vis[std::size_t(i)].capacity(), vis[std::size_t(i)].dim());
        g_txt[std::size_t(i)].init(txt[std::size_t(i)].capacity(), txt[std::size_t(i)].dim());
    }

    double loss = 0;
    for (const LossTerm& term : loss_terms(cfg)) {
        if (term.weight == 0) continue;
        BatchScores<double> scores;
        scores.scale = cfg.logit_scale;
        scores.s_v.resize(n, n + qt);
        scores.s_t.resize(n + qv, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                const PairScored p =
                    pair_similarity(vis[std::size_t(i)], txt[std::size_t(j)], term.cfg);
                scores.s_v(i, j) = p.s_v;
                scores.s_t(i, j) = p.s_t;
            }
        for (Index i = 0; i < n; ++i)
            for (Index k = 0; k < qt; ++k)
                scores.s_v(i, n + k) =
                    pair_similarity(vis[std::size_t(i)], queues->queued_texts[std::size_t(k)],
                                    term.cfg)
                        .s_v;
        for (Index k = 0; k < qv; ++k)
            for (Index j = 0; j < n; ++j)
                scores.s_t(n + k, j) =
                    pair_similarity(queues->queued_visuals[std::size_t(k)],
                                    txt[std::size_t(j)], term.cfg)
                        .s_t;

        SoftTargets<double> targets = targets_override
                                          ? *targets_override
                                          : one_hot_targets<double>(n, n + qt, n + qv);
        loss += term.weight * contrastive_loss(scores, targets);

        const auto [g_sv, g_st] = loss_score_gradient(scores, targets);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                const double a = term.weight * g_sv(i, j);
                if (a != 0) {
                    const PairGradientd pg = pair_gradient(
                        vis[std::size_t(i)], txt[std::size_t(j)], term.cfg,
                        Direction::VisualToText);
                    g_vis[std::size_t(i)].add(a, pg.d_mu, pg.d_mu_global);
                    g_txt[std::size_t(j)].add(a, pg.d_omega, pg.d_omega_global);
                }
                const double b = term.weight * g_st(i, j);
                if (b != 0) {
                    const PairGradientd pg = pair_gradient(
                        vis[std::size_t(i)], txt[std::size_t(j)], term.cfg,
                        Direction::TextToVisual);
                    g_vis[std::size_t(i)].add(b, pg.d_mu, pg.d_mu_global);
                    g_txt[std::size_t(j)].add(b, pg.d_omega, pg.d_omega_global);
                }
            }
        for (Index i = 0; i < n; ++i)
            for (Index k = 0; k < qt; ++k) {
                const double a = term.weight * g_sv(i, n + k);
                if (a == 0) continue;
                const PairGradientd pg =
                    pair_gradient(vis[std::size_t(i)], queues->queued_texts[std::size_t(k)],
                                  term.cfg, Direction::VisualToText);
                g_vis[std::size_t(i)].add(a, pg.d_mu, pg.d_mu_global);
            }
        for (Index k = 0; k < qv; ++k)
            for (Index j = 0; j < n; ++j) {
                const double b = term.weight * g_st(n + k, j);
                if (b == 0) continue;
                const PairGradientd pg =
                    pair_gradient(queues->queued_visuals[std::size_t(k)],
                                  txt[std::size_t(j)], term.cfg, Direction::TextToVisual);
                g_txt[std::size_t(j)].add(b, pg.d_omega, pg.d_omega_global);
            }
    }

    // Chain normalized-space gradients down to the parameters.
    ToyModel grads = model;
    if (model.mode == ParamMode::EmbeddingDirect) {
        for (auto& m : grads.vis) m.setZero();
        for (auto& m : grads.txt) m.setZero();
        for (Index b = 0; b < n; ++b) {
            const Index item = batch_items[std::size_t(b)];
            grads.vis[std::size_t(item)] +=
                chain_to_raw(g_vis[std::size_t(b)], model.vis[std::size_t(item)]);
            grads.txt[std::size_t(item)] +=
                chain_to_raw(g_txt[std::size_t(b)], model.txt[std::size_t(item)]);
        }
    } else {
        grads.w_v.setZero();
        grads.w_t.setZero();
        for (Index b = 0; b < n; ++b) {
            const Index item = batch_items[std::size_t(b)];
            const Mat<double>& zv = corpus.visual_raw[std::size_t(item)];
            const Mat<double>& zt = corpus.textual_raw[std::size_t(item)];
            const Mat<double> gx_v =
                chain_to_raw(g_vis[std::size_t(b)], zv * model.w_v.transpose());
            const Mat<double> gx_t =
                chain_to_raw(g_txt[std::size_t(b)], zt * model.w_t.transpose());
            grads.w_v += gx_v.transpose() * zv;
            grads.w_t += gx_t.transpose() * zt;
        }
    }

    BatchLoss out;
    out.value = loss;
    out.grad = grads.pack();
    return out;
}

}  // namespace

BatchLoss batch_loss_and_gradient(const ToyModel& model, const Corpus& corpus,
                                  const std::vector<Index>& batch_items,
                                  const TrainConfig& cfg,
                                  const SoftTargets<double>* targets_override) {
    return batch_loss_impl(model, corpus, batch_items, cfg, nullptr, targets_override);
}

namespace {

std::vector<Index> holdout_items(const Corpus& corpus, Index holdout_every) {
    std::vector<Index> out;
    if (holdout_every < 2) return out;
    const Index unit = corpus.collision() ? 2 : 1;
    for (Index i = 0; i < corpus.spec.n_pairs; ++i)
        if ((i / unit) % holdout_every == holdout_every - 1) out.push_back(i);
    return out;
}

}  // namespace

TrainTrace train_toy(const TrainConfig& cfg, const Corpus& corpus) {
    if (cfg.steps < 1) throw InvalidParameter("train_toy: steps must be >= 1");
    if (cfg.lr < 0) throw InvalidParameter("train_toy: negative learning rate");
    if (cfg.batch < 1) throw InvalidParameter("train_toy: batch must be >= 1");
    if (cfg.strategy.kind == Strategy::Emd || cfg.strategy.kind == Strategy::Learnable)
        throw InvalidParameter(
            "train_toy: no analytic gradient for this strategy, use tokenflow, scan, "
            "uniform, max-avg or max-sum");

    TrainTrace trace;
    trace.holdout = holdout_items(corpus, cfg.holdout_every);
    std::vector<Index> train_items;
    {
        std::set<Index> held(trace.holdout.begin(), trace.holdout.end());
        for (Index i = 0; i < corpus.spec.n_pairs; ++i)
            if (!held.count(i)) train_items.push_back(i);
    }
    if (train_items.empty()) throw SpecInfeasible("train_toy: empty training split");

    ToyModel model = ToyModel::init(corpus, cfg.param_mode);
    Rng rng(cfg.seed);

    TeacherState<double> teacher(cfg.md ? cfg.md->queue_len : 0);
    if (cfg.md) {
        if (cfg.md->target_alpha < 0 || cfg.md->target_alpha > 1)
            throw AlphaOutOfRange("train_toy: target_alpha must be in [0,1]");
        teacher.ema_momentum = cfg.md->ema_momentum;
        teacher.params = model.pack();
    }

    const Index batch_size = std::min<Index>(cfg.batch, Index(train_items.size()));
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Index> batch;
        for (Index pos : rng.sample_without_replacement(Index(train_items.size()), batch_size))
            batch.push_back(train_items[std::size_t(pos)]);

        BatchLoss bl;
        if (!cfg.md) {
            bl = batch_loss_impl(model, corpus, batch, cfg, nullptr, nullptr);
        } else {
            ToyModel teacher_model = model;
            teacher_model.unpack(teacher.params);
            std::vector<TokenSetd> t_vis, t_txt;
            for (Index i : batch) {
                t_vis.push_back(teacher_model.realize_visual(corpus, i));
                t_txt.push_back(teacher_model.realize_textual(corpus, i));
            }
            QueueContext queues;
            for (std::size_t k = 0; k < teacher.fine_textual.size(); ++k)
                queues.queued_texts.push_back(TokenSetd::dense(teacher.fine_textual[k],
                                                               teacher.global_textual[k]));
            for (std::size_t k = 0; k < teacher.fine_visual.size(); ++k)
                queues.queued_visuals.push_back(TokenSetd::dense(teacher.fine_visual[k],
                                                                 teacher.global_visual[k]));
            const Index n = Index(batch.size());
            const Index qt = Index(queues.queued_texts.size());
            const Index qv = Index(queues.queued_visuals.size());

            // Teacher scores over batch plus queues feed the pseudo-targets.
            BatchScores<double> t_scores;
            t_scores.scale = cfg.logit_scale;
            t_scores.s_v.resize(n, n + qt);
            t_scores.s_t.resize(n + qv, n);
            const StrategyConfig& sc = cfg.strategy;
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j) {
                    const PairScored p =
                        pair_similarity(t_vis[std::size_t(i)], t_txt[std::size_t(j)], sc);
                    t_scores.s_v(i, j) = p.s_v;
                    t_scores.s_t(i, j) = p.s_t;
                }
            for (Index i = 0; i < n; ++i)
                for (Index k = 0; k < qt; ++k)
                    t_scores.s_v(i, n + k) =
                        pair_similarity(t_vis[std::size_t(i)],
                                        queues.queued_texts[std::size_t(k)], sc)
                            .s_v;
            for (Index k = 0; k < qv; ++k)
                for (Index j = 0; j < n; ++j)
                    t_scores.s_t(n + k, j) =
                        pair_similarity(queues.queued_visuals[std::size_t(k)],
                                        t_txt[std::size_t(j)], sc)
                            .s_t;
            const auto y_m = md_pseudo_targets(t_scores);
            const SoftTargets<double> y = one_hot_targets<double>(n, n + qt, n + qv);
            const SoftTargets<double> targets =
                md_soft_targets(y_m, y, cfg.md->target_alpha);

            bl = batch_loss_impl(model, corpus, batch, cfg, &queues, &targets);

            teacher = enqueue_features(std::move(teacher),
                                       [&] {
                                           std::vector<Mat<double>> f;
                                           for (auto& ts : t_vis) f.push_back(ts.tokens);
                                           return f;
                                       }(),
                                       [&] {
                                           std::vector<Vec<double>> g;
                                           for (auto& ts : t_vis) g.push_back(ts.global);
                                           return g;
                                       }(),
                                       [&] {
                                           std::vector<Mat<double>> f;
                                           for (auto& ts : t_txt) f.push_back(ts.tokens);
                                           return f;
                                       }(),
                                       [&] {
                                           std::vector<Vec<double>> g;
                                           for (auto& ts : t_txt) g.push_back(ts.global);
                                           return g;
                                       }());
        }

        if (!std::isfinite(bl.value)) throw DivergedLoss("train_toy: loss is not finite");
        trace.losses.push_back(bl.value);

        if (cfg.lr > 0) {
            Vec<double> params = model.pack();
            params -= cfg.lr * bl.grad;
            model.unpack(params);
        }
        if (cfg.md) teacher = md_update_teacher(std::move(teacher), model.pack());
    }

    // Held-out evaluation with the trained parameters.
    const std::vector<Index>& eval_items =
        trace.holdout.empty() ? corpus.truth : trace.holdout;
    std::vector<TokenSetd> eval_vis, eval_txt;
    for (Index i : eval_items) {
        eval_vis.push_back(model.realize_visual(corpus, i));
        eval_txt.push_back(model.realize_textual(corpus, i));
    }
    const auto [s_v, s_t] = score_matrices(eval_vis, eval_txt, cfg.strategy, 1);
    std::vector<Index> truth(eval_items.size());
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = Index(i);
    const std::vector<int> ks{1, 5, 10};
    trace.report_v2t = retrieval_report(s_v, truth, ks);
    trace.report_t2v = retrieval_report(Mat<double>(s_t.transpose()), truth, ks);
    if (corpus.collision()) {
        // Re-realize by absolute item index for the confuser lookup.
        std::vector<TokenSetd> all_vis, all_txt;
        for (Index i = 0; i < corpus.spec.n_pairs; ++i) {
            all_vis.push_back(model.realize_visual(corpus, i));
            all_txt.push_back(model.realize_textual(corpus, i));
        }
        trace.confuser_accuracy =
            confuser_discrimination(all_vis, all_txt, eval_items, cfg.strategy);
    }
    return trace;
}

std::string to_lines(const TrainTrace& trace) {
    std::string out;
    char buf[96];
    for (std::size_t i = 0; i < trace.losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "step=%zu loss=%.9f\n", i, trace.losses[i]);
        out += buf;
    }
    out += "v2t " + to_string(trace.report_v2t) + "\n";
    out += "t2v " + to_string(trace.report_t2v) + "\n";
    if (trace.confuser_accuracy >= 0) {
        std::snprintf(buf, sizeof buf, "confuser_accuracy=%.1f\n", trace.confuser_accuracy);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "holdout_size=%zu\n", trace.holdout.size());
    out += buf;
    return out;
}

}  // namespace tokalign
