#include <doctest.h>

#include <cmath>
#include <vector>

#include "tokalign/harness.hpp"
#include "tokalign/loss.hpp"

using namespace tokalign;

namespace {

BatchScoresd square_scores(Mat<double> s_v, Mat<double> s_t, double scale) {
    BatchScoresd b;
    b.s_v = std::move(s_v);
    b.s_t = std::move(s_t);
    b.scale = scale;
    return b;
}

// Direct evaluation of the symmetric cross-entropy with explicit loops and
// naive exponentials; valid while scale * |score| stays small.
double naive_loss(const BatchScoresd& b, const SoftTargetsd& y) {
    const Index n = b.batch();
    double loss_v = 0;
    for (Index i = 0; i < n; ++i) {
        double z = 0;
        for (Index j = 0; j < b.s_v.cols(); ++j) z += std::exp(b.scale * b.s_v(i, j));
        for (Index j = 0; j < b.s_v.cols(); ++j)
            loss_v -= y.y_hat_v(i, j) * std::log(std::exp(b.scale * b.s_v(i, j)) / z);
    }
    double loss_t = 0;
    for (Index i = 0; i < n; ++i) {
        double z = 0;
        for (Index j = 0; j < b.s_t.rows(); ++j) z += std::exp(b.scale * b.s_t(j, i));
        for (Index j = 0; j < b.s_t.rows(); ++j)
            loss_t -= y.y_hat_t(i, j) * std::log(std::exp(b.scale * b.s_t(j, i)) / z);
    }
    return (loss_v / double(n) + loss_t / double(n)) / 2;
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("contrastive_loss spot values") {
    const SoftTargetsd onehot = one_hot_targets<double>(2, 2, 2);
    CHECK(contrastive_loss(square_scores(Mat<double>::Zero(2, 2), Mat<double>::Zero(2, 2), 1),
                           onehot) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(contrastive_loss(square_scores(Mat<double>::Identity(2, 2),
                                         Mat<double>::Identity(2, 2), 1),
                           onehot) ==
          doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));

    const double saturated = contrastive_loss(
        square_scores(1000 * Mat<double>::Identity(2, 2), 1000 * Mat<double>::Identity(2, 2), 1),
        onehot);
    CHECK(saturated >= 0);
    CHECK(saturated < 1e-9);
}

TEST_CASE("contrastive_loss equals a scalar-loop oracle on random batches") {
    Rng rng(41);
    for (int rep = 0; rep < 20; ++rep) {
        const Index n = 2 + Index(rng.uniform_index(4));
        Mat<double> s_v(n, n), s_t(n, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                s_v(i, j) = 2 * rng.uniform01() - 1;
                s_t(i, j) = 2 * rng.uniform01() - 1;
            }
        const BatchScoresd b = square_scores(s_v, s_t, 2.5);
        const SoftTargetsd y = one_hot_targets<double>(n, n, n);
        const double got = contrastive_loss(b, y);
        CHECK(std::abs(got - naive_loss(b, y)) < 1e-10);
        CHECK(got >= 0);
    }
}

TEST_CASE("loss is shift invariant: probabilities exactly, value to rounding") {
    Rng rng(42);
    Mat<double> s_v(3, 3), s_t(3, 3);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) {
            s_v(i, j) = double(rng.uniform_index(7));
            s_t(i, j) = double(rng.uniform_index(7));
        }

    // Ratio-form softmax. Integer logits make z - max exact, so a constant
    // shift cancels bitwise at the probability level.
    const auto probs = [](const Vec<double>& z) {
        const Vec<double> e = (z.array() - z.maxCoeff()).exp();
        return Vec<double>(e / e.sum());
    };
    for (Index i = 0; i < 3; ++i) {
        const Vec<double> row = s_v.row(i).transpose();
        const Vec<double> row_shifted = (row.array() + 3.0).matrix();
        CHECK((probs(row) - probs(row_shifted)).norm() == 0.0);
        const Vec<double> col = s_t.col(i);
        const Vec<double> col_shifted = (col.array() + 3.0).matrix();
        CHECK((probs(col) - probs(col_shifted)).norm() == 0.0);
    }

    // The scalar loss goes through log(sum exp(z - m)) + m, where the final
    // add rounds once per row; the shift moves that rounding, so the value
    // matches only to a few ulps.
    const SoftTargetsd y = one_hot_targets<double>(3, 3, 3);
    const double base =
        contrastive_loss(square_scores(s_v, s_t, 1), y);
    const double shifted = contrastive_loss(
        square_scores((s_v.array() + 3.0).matrix(), (s_t.array() + 3.0).matrix(), 1), y);
    CHECK(std::abs(base - shifted) < 1e-12);
}

TEST_CASE("contrastive_loss validates shapes, targets and finiteness") {
    const SoftTargetsd y = one_hot_targets<double>(2, 2, 2);
    BatchScoresd bad = square_scores(Mat<double>::Zero(2, 3), Mat<double>::Zero(2, 2), 1);
    CHECK_THROWS_AS(contrastive_loss(bad, y), ShapeMismatch);

    SoftTargetsd skew = y;
    skew.y_hat_v(0, 0) = 0.9;  // row no longer sums to 1
    CHECK_THROWS_AS(
        contrastive_loss(square_scores(Mat<double>::Zero(2, 2), Mat<double>::Zero(2, 2), 1),
                         skew),
        NonStochasticTargets);

    Mat<double> inf = Mat<double>::Zero(2, 2);
    inf(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(contrastive_loss(square_scores(inf, Mat<double>::Zero(2, 2), 1), y),
                    NonFinite);
    CHECK_THROWS_AS(
        contrastive_loss(square_scores(Mat<double>::Zero(2, 2), Mat<double>::Zero(2, 2), 0), y),
        InvalidParameter);
}

TEST_CASE("md_update_teacher follows the EMA recurrence") {
    TeacherStated teacher(4);
    teacher.params = Vec<double>::Zero(3);
    teacher.ema_momentum = 0.95;
    const TeacherStated next = md_update_teacher(teacher, Vec<double>(Vec<double>::Ones(3)));
    for (Index i = 0; i < 3; ++i) CHECK(next.params[i] == doctest::Approx(0.05).epsilon(1e-12));

    teacher.ema_momentum = 1.0;
    CHECK((md_update_teacher(teacher, Vec<double>(Vec<double>::Ones(3))).params -
           Vec<double>::Zero(3))
              .norm() == 0.0);
    teacher.ema_momentum = 0.0;
    CHECK((md_update_teacher(teacher, Vec<double>(Vec<double>::Ones(3))).params -
           Vec<double>::Ones(3))
              .norm() == 0.0);

    // contraction toward the student
    Rng rng(43);
    teacher.params = rng.gaussian_vec(3);
    teacher.ema_momentum = 0.6;
    const Vec<double> student = rng.gaussian_vec(3);
    const Vec<double> before = teacher.params - student;
    const Vec<double> after = md_update_teacher(teacher, student).params - student;
    for (Index i = 0; i < 3; ++i)
        CHECK(after[i] == doctest::Approx(0.6 * before[i]).epsilon(1e-12));

    teacher.params = Vec<double>::Zero(5);
    CHECK_THROWS_AS(md_update_teacher(teacher, Vec<double>(Vec<double>::Ones(3))),
                    ShapeMismatch);
}

TEST_CASE("feature queues are FIFO with eviction at capacity") {
    TeacherStated teacher(16);
    teacher.params = Vec<double>::Zero(1);
    for (int batch = 0; batch < 5; ++batch) {
        std::vector<Mat<double>> fine;
        std::vector<Vec<double>> glob;
        for (int k = 0; k < 4; ++k) {
            const double tag = batch * 4 + k;
            fine.push_back(Mat<double>::Constant(2, 3, tag));
            glob.push_back(Vec<double>::Constant(3, tag));
        }
        teacher = enqueue_features(teacher, fine, glob, fine, glob);
    }
    CHECK(teacher.fine_visual.size() == 16);   // 20 pushed, 16 kept
    CHECK(teacher.global_textual.size() == 16);
    CHECK(teacher.fine_visual[0](0, 0) == 4.0);   // oldest retained is push #5
    CHECK(teacher.fine_visual[15](0, 0) == 19.0);  // newest is push #20

    TeacherStated tiny(0);
    tiny.params = Vec<double>::Zero(1);
    tiny = enqueue_features(tiny, {Mat<double>::Zero(1, 1)}, {Vec<double>::Zero(1)},
                            {Mat<double>::Zero(1, 1)}, {Vec<double>::Zero(1)});
    CHECK(tiny.fine_visual.size() == 0);  // capacity zero stays empty

    CHECK_THROWS_AS(enqueue_features(teacher, {Mat<double>::Zero(2, 9)}, {}, {}, {}),
                    DimMismatch);
}

TEST_CASE("md_pseudo_targets are row-stochastic softmaxes of teacher scores") {
    Rng rng(44);
    BatchScoresd scores;
    scores.scale = 100;
    scores.s_v = rng.gaussian_mat(3, 5);  // two queued text columns
    scores.s_t = rng.gaussian_mat(4, 3);  // one queued visual row
    const auto [y_m_v, y_m_t] = md_pseudo_targets(scores);
    REQUIRE(y_m_v.rows() == 3);
    REQUIRE(y_m_v.cols() == 5);
    REQUIRE(y_m_t.rows() == 3);
    REQUIRE(y_m_t.cols() == 4);
    for (Index i = 0; i < 3; ++i) {
        CHECK(y_m_v.row(i).sum() == doctest::Approx(1).epsilon(1e-12));
        CHECK(y_m_t.row(i).sum() == doctest::Approx(1).epsilon(1e-12));
        CHECK(y_m_v.row(i).minCoeff() >= 0);
        CHECK(y_m_t.row(i).minCoeff() >= 0);
    }

    // saturated teacher scores give near one-hot pseudo-targets
    BatchScoresd hot;
    hot.scale = 1;
    hot.s_v = 1000 * Mat<double>::Identity(2, 2);
    hot.s_t = 1000 * Mat<double>::Identity(2, 2);
    const auto [hv, ht] = md_pseudo_targets(hot);
    CHECK(hv(0, 0) == doctest::Approx(1).epsilon(1e-9));
    CHECK(ht(1, 1) == doctest::Approx(1).epsilon(1e-9));

    // all-equal scores with two queue columns: uniform over 4
    BatchScoresd flat;
    flat.scale = 100;
    flat.s_v = Mat<double>::Constant(2, 4, 0.3);
    flat.s_t = Mat<double>::Constant(4, 2, 0.3);
    const auto [fv, ft] = md_pseudo_targets(flat);
    for (Index j = 0; j < 4; ++j) CHECK(fv(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("md_soft_targets endpoints and the uniform-mix value") {
    const Index n = 2;
    const SoftTargetsd y = one_hot_targets<double>(n, n, n);
    const std::pair<Mat<double>, Mat<double>> y_m{Mat<double>::Constant(n, n, 0.5),
                                                  Mat<double>::Constant(n, n, 0.5)};

    const SoftTargetsd zero = md_soft_targets(y_m, y, 0.0);
    CHECK((zero.y_hat_v - y.y_hat_v).norm() == 0.0);
    const SoftTargetsd one = md_soft_targets(y_m, y, 1.0);
    CHECK((one.y_hat_v - y_m.first).norm() == 0.0);

    // alpha = 0.4 on a uniform pseudo-target and one-hot truth:
    // 0.4 * 0.5 + 0.6 * {1,0} = {0.8, 0.2}
    const SoftTargetsd mixed = md_soft_targets(y_m, y, 0.4);
    CHECK(mixed.y_hat_v(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(mixed.y_hat_v(0, 1) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(mixed.y_hat_v.row(0).sum() == doctest::Approx(1).epsilon(1e-12));

    CHECK_THROWS_AS(md_soft_targets(y_m, y, -0.1), AlphaOutOfRange);
    CHECK_THROWS_AS(md_soft_targets(y_m, y, 1.1), AlphaOutOfRange);
}

TEST_CASE("queue-extended one-hot targets zero the queue columns") {
    const SoftTargetsd y = one_hot_targets<double>(2, 5, 4);
    REQUIRE(y.y_hat_v.rows() == 2);
    REQUIRE(y.y_hat_v.cols() == 5);
    REQUIRE(y.y_hat_t.cols() == 4);
    for (Index i = 0; i < 2; ++i) {
        CHECK(y.y_hat_v(i, i) == 1.0);
        CHECK(y.y_hat_v.row(i).sum() == 1.0);
        CHECK(y.y_hat_t.row(i).sum() == 1.0);
    }
    CHECK(y.y_hat_v.col(3).sum() == 0.0);
    CHECK(y.y_hat_v.col(4).sum() == 0.0);
}

}  // TEST_SUITE
