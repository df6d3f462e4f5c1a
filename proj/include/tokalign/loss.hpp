// Symmetric contrastive objective and momentum distillation.
//
// Shape convention with queues: for batch size N, s_v is N x Mv (visual
// queries against text batch plus queued text, Mv >= N) and s_t is Mt x N
// (visual batch plus queued visual against text queries). Targets are always
// row-stochastic with one row per query, so y_hat_v is N x Mv and y_hat_t is
// N x Mt (the transpose orientation of s_t).

#pragma once

#include <cmath>
#include <deque>
#include <utility>
#include <vector>

#include "tokalign/types.hpp"

namespace tokalign {

template <class Scalar>
struct BatchScores {
    Mat<Scalar> s_v;       // N x Mv
    Mat<Scalar> s_t;       // Mt x N
    Scalar scale = Scalar(100);  // logit scale

    Index batch() const { return s_v.rows(); }
};

template <class Scalar>
struct SoftTargets {
    Mat<Scalar> y_hat_v;  // N x Mv, rows sum to 1
    Mat<Scalar> y_hat_t;  // N x Mt, rows sum to 1
    Scalar alpha = 0;
};

using BatchScoresd = BatchScores<double>;
using SoftTargetsd = SoftTargets<double>;

// Ground truth for positional pairing, zero-padded over queue columns.
template <class Scalar>
SoftTargets<Scalar> one_hot_targets(Index n, Index mv, Index mt) {
    SoftTargets<Scalar> t;
    t.y_hat_v = Mat<Scalar>::Zero(n, mv);
    t.y_hat_t = Mat<Scalar>::Zero(n, mt);
    for (Index i = 0; i < n; ++i) {
        t.y_hat_v(i, i) = 1;
        t.y_hat_t(i, i) = 1;
    }
    return t;
}

namespace detail {

template <class Scalar>
Vec<Scalar> log_softmax(const Vec<Scalar>& z) {
    const Scalar m = z.maxCoeff();
    const Scalar lse = m + std::log((z.array() - m).exp().sum());
    return z.array() - lse;
}

template <class Scalar>
void require_row_stochastic(const Mat<Scalar>& y, const char* what) {
    for (Index i = 0; i < y.rows(); ++i)
        if (std::abs(double(y.row(i).sum()) - 1.0) > 1e-9)
            throw NonStochasticTargets(std::string(what) + ": row " + std::to_string(i) +
                                       " does not sum to 1");
}

}  // namespace detail

// L = (L_V + L_T) / 2 with L_V the mean cross-entropy of the row softmax of
// scale*s_v against y_hat_v, and L_T the mean cross-entropy of the column
// softmax of scale*s_t against y_hat_t.
template <class Scalar>
Scalar contrastive_loss(const BatchScores<Scalar>& scores, const SoftTargets<Scalar>& targets) {
    const Index n = scores.batch();
    if (scores.s_t.cols() != n)
        throw ShapeMismatch("contrastive_loss: s_t column count must equal batch");
    if (targets.y_hat_v.rows() != n || targets.y_hat_v.cols() != scores.s_v.cols())
        throw ShapeMismatch("contrastive_loss: y_hat_v shape mismatch");
    if (targets.y_hat_t.rows() != n || targets.y_hat_t.cols() != scores.s_t.rows())
        throw ShapeMismatch("contrastive_loss: y_hat_t shape mismatch");
    if (scores.scale <= 0) throw InvalidParameter("contrastive_loss: scale must be > 0");
    if (!scores.s_v.allFinite() || !scores.s_t.allFinite())
        throw NonFinite("contrastive_loss: non-finite scores");
    detail::require_row_stochastic(targets.y_hat_v, "contrastive_loss: y_hat_v");
    detail::require_row_stochastic(targets.y_hat_t, "contrastive_loss: y_hat_t");

    Scalar loss_v = 0;
    for (Index i = 0; i < n; ++i) {
        const Vec<Scalar> logp =
            detail::log_softmax<Scalar>(scores.scale * scores.s_v.row(i).transpose());
        loss_v -= targets.y_hat_v.row(i).dot(logp.transpose());
    }
    Scalar loss_t = 0;
    for (Index i = 0; i < n; ++i) {
        const Vec<Scalar> logp = detail::log_softmax<Scalar>(scores.scale * scores.s_t.col(i));
        loss_t -= targets.y_hat_t.row(i).dot(logp.transpose());
    }
    return (loss_v / Scalar(n) + loss_t / Scalar(n)) / Scalar(2);
}

// FIFO buffer with eviction at capacity; index 0 is the oldest entry.
template <class T>
class BoundedQueue {
  public:
    explicit BoundedQueue(std::size_t capacity = 16) : capacity_(capacity) {}

    void push(T item) {
        items_.push_back(std::move(item));
        while (items_.size() > capacity_) items_.pop_front();
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    const T& operator[](std::size_t i) const { return items_[i]; }

  private:
    std::size_t capacity_;
    std::deque<T> items_;
};

// EMA snapshot of the student parameter vector plus the four feature queues.
// Fine queues hold full token matrices; global queues hold summary vectors.
// The fine and global queues of one modality advance in lockstep.
template <class Scalar>
struct TeacherState {
    Vec<Scalar> params;
    double ema_momentum = 0.95;
    BoundedQueue<Mat<Scalar>> fine_visual;
    BoundedQueue<Vec<Scalar>> global_visual;
    BoundedQueue<Mat<Scalar>> fine_textual;
    BoundedQueue<Vec<Scalar>> global_textual;

    explicit TeacherState(std::size_t queue_capacity = 16)
        : fine_visual(queue_capacity),
          global_visual(queue_capacity),
          fine_textual(queue_capacity),
          global_textual(queue_capacity) {}
};

using TeacherStated = TeacherState<double>;

// params <- m * params + (1 - m) * student
template <class Scalar>
TeacherState<Scalar> md_update_teacher(TeacherState<Scalar> teacher,
                                       const Vec<Scalar>& student_params) {
    if (teacher.params.size() != student_params.size())
        throw ShapeMismatch("md_update_teacher: parameter sizes differ");
    const Scalar m = Scalar(teacher.ema_momentum);
    teacher.params = m * teacher.params + (Scalar(1) - m) * student_params;
    return teacher;
}

// Append one batch of realized teacher features per modality.
template <class Scalar>
TeacherState<Scalar> enqueue_features(TeacherState<Scalar> teacher,
                                      const std::vector<Mat<Scalar>>& fine_v,
                                      const std::vector<Vec<Scalar>>& global_v,
                                      const std::vector<Mat<Scalar>>& fine_t,
                                      const std::vector<Vec<Scalar>>& global_t) {
    auto check_dim = [](auto& queue, const auto& item, const char* what) {
        if (queue.size() > 0 && queue[0].cols() != item.cols())
            throw DimMismatch(std::string("enqueue_features: ") + what + " dim differs");
    };
    for (const auto& m : fine_v) {
        check_dim(teacher.fine_visual, m, "fine visual");
        teacher.fine_visual.push(m);
    }
    for (const auto& v : global_v) {
        if (teacher.global_visual.size() > 0 && teacher.global_visual[0].size() != v.size())
            throw DimMismatch("enqueue_features: global visual dim differs");
        teacher.global_visual.push(v);
    }
    for (const auto& m : fine_t) {
        check_dim(teacher.fine_textual, m, "fine textual");
        teacher.fine_textual.push(m);
    }
    for (const auto& v : global_t) {
        if (teacher.global_textual.size() > 0 && teacher.global_textual[0].size() != v.size())
            throw DimMismatch("enqueue_features: global textual dim differs");
        teacher.global_textual.push(v);
    }
    return teacher;
}

// Pseudo-targets: softmax of the teacher's queue-extended similarities at the
// same logit scale, one row-stochastic row per query.
template <class Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> md_pseudo_targets(const BatchScores<Scalar>& teacher_scores) {
    const Index n = teacher_scores.batch();
    Mat<Scalar> y_m_v(n, teacher_scores.s_v.cols());
    for (Index i = 0; i < n; ++i)
        y_m_v.row(i) = detail::log_softmax<Scalar>(
                           teacher_scores.scale * teacher_scores.s_v.row(i).transpose())
                           .array()
                           .exp()
                           .transpose();
    Mat<Scalar> y_m_t(n, teacher_scores.s_t.rows());
    for (Index i = 0; i < n; ++i)
        y_m_t.row(i) =
            detail::log_softmax<Scalar>(teacher_scores.scale * teacher_scores.s_t.col(i))
                .array()
                .exp()
                .transpose();
    return {y_m_v, y_m_t};
}

// y_hat = alpha * y_m + (1 - alpha) * y, both directions.
template <class Scalar>
SoftTargets<Scalar> md_soft_targets(const std::pair<Mat<Scalar>, Mat<Scalar>>& y_m,
                                    const SoftTargets<Scalar>& y_onehot, Scalar alpha) {
    if (alpha < 0 || alpha > 1)
        throw AlphaOutOfRange("md_soft_targets: alpha must be in [0,1]");
    const auto& [y_m_v, y_m_t] = y_m;
    if (y_m_v.rows() != y_onehot.y_hat_v.rows() || y_m_v.cols() != y_onehot.y_hat_v.cols() ||
        y_m_t.rows() != y_onehot.y_hat_t.rows() || y_m_t.cols() != y_onehot.y_hat_t.cols())
        throw ShapeMismatch("md_soft_targets: pseudo-target shape mismatch");
    detail::require_row_stochastic(y_m_v, "md_soft_targets: y_m_v");
    detail::require_row_stochastic(y_m_t, "md_soft_targets: y_m_t");
    detail::require_row_stochastic(y_onehot.y_hat_v, "md_soft_targets: y_v");
    detail::require_row_stochastic(y_onehot.y_hat_t, "md_soft_targets: y_t");
    SoftTargets<Scalar> out;
    out.alpha = alpha;
    out.y_hat_v = alpha * y_m_v + (Scalar(1) - alpha) * y_onehot.y_hat_v;
    out.y_hat_t = alpha * y_m_t + (Scalar(1) - alpha) * y_onehot.y_hat_t;
    return out;
}

}  // namespace tokalign
