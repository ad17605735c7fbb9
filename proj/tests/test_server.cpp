#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedkd/rng.hpp"
#include "fedkd/server.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace fedkd;
using namespace fedkd::server;

namespace {

LogitMatrix logits(const Matrix& values, std::uint32_t round, std::uint32_t source = 0) {
    LogitMatrix m;
    m.values = values;
    m.round = round;
    m.source = source;
    return m;
}

DistillTarget target_at(const Matrix& values, std::uint32_t round) {
    DistillTarget t;
    t.smoothed = logits(values, round);
    t.raw = t.smoothed;
    t.round = round;
    return t;
}

Matrix random_matrix(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = rng.uniform(lo, hi);
    }
    return m;
}

}  // namespace

TEST_CASE("pretrain_teacher: zero epochs sit near chance, training separates") {
    const data::Dataset ds = data::generate_synthetic(300, 4, 6, 0.4, 2);
    const auto [rest, test] = data::stratified_split(ds, 0.2, 2);
    const data::PublicSet pub = data::make_public_reference(ds, rest, 120, 2);
    const auto arch = ArchitectureSpec::make({16, 16}, 6, 4);

    const TeacherModel raw = pretrain_teacher(pub, arch, 0, 0.1, 16, 3);
    int correct_raw = 0;
    const TeacherModel trained = pretrain_teacher(pub, arch, 20, 0.1, 16, 3);
    int correct_trained = 0;
    for (Eigen::Index i = 0; i < pub.inputs.rows(); ++i) {
        Eigen::Index guess = 0;
        raw.cached.values.row(i).maxCoeff(&guess);
        correct_raw += static_cast<int>(guess) == pub.labels[static_cast<std::size_t>(i)];
        trained.cached.values.row(i).maxCoeff(&guess);
        correct_trained += static_cast<int>(guess) == pub.labels[static_cast<std::size_t>(i)];
    }
    const double acc_raw = correct_raw / 120.0;
    const double acc_trained = correct_trained / 120.0;
    CHECK(acc_raw <= 0.6);  // chance is 0.25
    CHECK(acc_trained >= 0.95);
}

TEST_CASE("pretrain_teacher: cache equals a fresh forward pass bitwise") {
    const data::Dataset ds = data::generate_synthetic(200, 3, 5, 0.6, 4);
    const auto [rest, test] = data::stratified_split(ds, 0.2, 4);
    const data::PublicSet pub = data::make_public_reference(ds, rest, 80, 4);
    const TeacherModel teacher =
        pretrain_teacher(pub, ArchitectureSpec::make({8}, 5, 3), 5, 0.05, 16, 5);
    CHECK(teacher.cached.values == nn::forward(teacher.model, pub.inputs));
    CHECK(teacher.cached.round == 0);
    CHECK(teacher.cached.source == kTeacherSource);
}

TEST_CASE("aggregate_predictions: single input is the identity") {
    Rng rng(6);
    const Matrix values = random_matrix(rng, 4, 3);
    const LogitMatrix out = aggregate_predictions({logits(values, 2)}, {});
    CHECK(out.values == values);
    CHECK(out.round == 2);
}

TEST_CASE("aggregate_predictions: opposite matrices cancel under the mean") {
    Rng rng(7);
    const Matrix values = random_matrix(rng, 5, 4);
    const LogitMatrix out =
        aggregate_predictions({logits(values, 1), logits(-values, 1)}, {});
    CHECK(out.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("aggregate_predictions: median resists an adversarial client") {
    Rng rng(8);
    std::vector<LogitMatrix> preds;
    for (int k = 0; k < 4; ++k) {
        preds.push_back(logits(random_matrix(rng, 6, 3), 1));
    }
    preds.push_back(logits(Matrix::Constant(6, 3, 1e3), 1));

    Aggregation agg;
    agg.rule = AggregationRule::kMedian;
    const LogitMatrix out = aggregate_predictions(preds, agg);

    // Exhaustive per-coordinate sort oracle.
    for (Eigen::Index r = 0; r < 6; ++r) {
        for (Eigen::Index c = 0; c < 3; ++c) {
            std::vector<double> column;
            for (const auto& p : preds) {
                column.push_back(p.values(r, c));
            }
            std::sort(column.begin(), column.end());
            CHECK(out.values(r, c) == column[2]);
            CHECK(out.values(r, c) < 1e3);
        }
    }
}

TEST_CASE("aggregate_predictions: trimmed mean drops floor(f*K) per side") {
    Rng rng(9);
    std::vector<LogitMatrix> preds;
    for (int k = 0; k < 10; ++k) {
        preds.push_back(logits(random_matrix(rng, 3, 2), 5));
    }
    Aggregation agg;
    agg.rule = AggregationRule::kTrimmed;
    agg.trim_fraction = 0.2;  // drop 2 per side of 10
    const LogitMatrix out = aggregate_predictions(preds, agg);
    for (Eigen::Index r = 0; r < 3; ++r) {
        for (Eigen::Index c = 0; c < 2; ++c) {
            std::vector<double> column;
            for (const auto& p : preds) {
                column.push_back(p.values(r, c));
            }
            std::sort(column.begin(), column.end());
            double sum = 0.0;
            for (int i = 2; i < 8; ++i) {
                sum += column[static_cast<std::size_t>(i)];
            }
            CHECK(out.values(r, c) == doctest::Approx(sum / 6.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("aggregate_predictions: shape and round mismatches are errors") {
    Rng rng(10);
    const LogitMatrix a = logits(random_matrix(rng, 3, 2), 1);
    const LogitMatrix wrong_shape = logits(random_matrix(rng, 2, 2), 1);
    const LogitMatrix wrong_round = logits(random_matrix(rng, 3, 2), 2);
    CHECK_THROWS_AS(aggregate_predictions({a, wrong_shape}, {}), AggregationError);
    CHECK_THROWS_AS(aggregate_predictions({a, wrong_round}, {}), AggregationError);
    CHECK_THROWS_AS(aggregate_predictions({}, {}), AggregationError);
}

TEST_CASE("fuse_with_teacher: boundary betas return the inputs bitwise") {
    Rng rng(11);
    const LogitMatrix agg = logits(random_matrix(rng, 4, 3), 2);
    const LogitMatrix teacher = logits(random_matrix(rng, 4, 3), 0, kTeacherSource);
    CHECK(fuse_with_teacher(agg, teacher, 1.0).values == teacher.values);
    CHECK(fuse_with_teacher(agg, teacher, 0.0).values == agg.values);

    const LogitMatrix half = fuse_with_teacher(logits(Matrix::Zero(1, 1), 1),
                                               logits(Matrix::Constant(1, 1, 2.0), 0), 0.5);
    CHECK(half.values(0, 0) == 1.0);

    CHECK_THROWS_AS(fuse_with_teacher(agg, teacher, 1.5), ParamError);
    CHECK_THROWS_AS(fuse_with_teacher(agg, teacher, -0.1), ParamError);
}

TEST_CASE("fuse_with_teacher: affine in beta") {
    Rng rng(12);
    const LogitMatrix agg = logits(random_matrix(rng, 5, 4), 3);
    const LogitMatrix teacher = logits(random_matrix(rng, 5, 4), 0, kTeacherSource);
    for (const double beta : {0.1, 0.3, 0.5, 0.77}) {
        const Matrix direct = fuse_with_teacher(agg, teacher, beta).values;
        const Matrix blended = beta * fuse_with_teacher(agg, teacher, 1.0).values +
                               (1.0 - beta) * fuse_with_teacher(agg, teacher, 0.0).values;
        CHECK((direct - blended).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("ema_update: boundary gammas and scalar arithmetic") {
    Rng rng(13);
    const Matrix prev_values = random_matrix(rng, 3, 2);
    const DistillTarget prev = target_at(prev_values, 4);
    const LogitMatrix raw = logits(random_matrix(rng, 3, 2), 5);

    CHECK(ema_update(prev, raw, 1.0).smoothed.values == prev_values);
    CHECK(ema_update(prev, raw, 0.0).smoothed.values == raw.values);

    const DistillTarget zero = target_at(Matrix::Zero(2, 2), 0);
    const DistillTarget step = ema_update(zero, logits(Matrix::Ones(2, 2), 1), 0.9);
    CHECK(step.smoothed.values(0, 0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(step.round == 1);

    const LogitMatrix skewed = logits(raw.values, 7);
    CHECK_THROWS_AS(ema_update(prev, skewed, 0.5), ProtocolError);
}

TEST_CASE("ema_update: linear in the raw targets for a zero prior") {
    Rng rng(14);
    const Matrix z1 = random_matrix(rng, 4, 3);
    const Matrix z2 = random_matrix(rng, 4, 3);
    const double a = 0.7, b = -1.3, gamma = 0.9;
    const DistillTarget zero = target_at(Matrix::Zero(4, 3), 0);
    const Matrix combined =
        ema_update(zero, logits(a * z1 + b * z2, 1), gamma).smoothed.values;
    const Matrix separate = a * ema_update(zero, logits(z1, 1), gamma).smoothed.values +
                            b * ema_update(zero, logits(z2, 1), gamma).smoothed.values;
    CHECK((combined - separate).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("ema drift: constant sequences never move") {
    Rng rng(15);
    const Matrix z = random_matrix(rng, 6, 4);
    const std::vector<Matrix> sequence(8, z);
    const EmaDriftReport report = check_ema_drift(sequence, 0.9);
    CHECK(report.pass());
    CHECK(report.max_equality_residual <= 1e-10);
    CHECK(report.min_bound_slack >= -1e-10);
}

TEST_CASE("ema drift: a single jump decays geometrically at (1-gamma)*gamma^(r-1)") {
    Rng rng(16);
    const Matrix jump = random_matrix(rng, 5, 3);
    const double jump_norm = jump.norm();
    for (const double gamma : {0.5, 0.9, 0.99}) {
        std::vector<Matrix> sequence;
        sequence.push_back(Matrix::Zero(5, 3));
        for (int r = 1; r <= 10; ++r) {
            sequence.push_back(jump);
        }
        CHECK(check_ema_drift(sequence, gamma).pass());

        // Unrolled recursion: smoothed_r = (1 - gamma^r) * jump.
        Matrix smoothed = sequence.front();
        for (int r = 1; r <= 10; ++r) {
            const Matrix next = gamma * smoothed + (1.0 - gamma) * sequence[static_cast<std::size_t>(r)];
            const double drift = (next - smoothed).norm();
            const double expected = (1.0 - gamma) * std::pow(gamma, r - 1) * jump_norm;
            CHECK(drift == doctest::Approx(expected).epsilon(1e-9));
            smoothed = next;
        }
    }
}

TEST_CASE("ema drift: random sequences satisfy equality and bound for all gammas") {
    for (const double gamma : {0.5, 0.9, 0.99}) {
        const EmaDriftReport report = verify_ema_drift_bound(100, 10, 20, 5, gamma, 99);
        CHECK(report.sequences == 100);
        CHECK(report.equality_violations == 0);
        CHECK(report.bound_violations == 0);
    }
}

TEST_CASE("aggregation variance: noiseless bias equals the analytic term exactly") {
    const AggregationVarianceReport report =
        verify_aggregation_variance({1, 2, 4}, 50, 0.0, 0.5, 6, 4, 3);
    for (const double mse : report.mse) {
        CHECK(mse == doctest::Approx(report.analytic_bias).epsilon(1e-9));
    }
}

TEST_CASE("aggregation variance: K=1 reproduces the undivided variance term") {
    const AggregationVarianceReport report =
        verify_aggregation_variance({1}, 4000, 1.0, 0.0, 10, 5, 7);
    CHECK(report.mse.front() ==
          doctest::Approx(report.analytic_variance).epsilon(0.1));
}

TEST_CASE("aggregation variance: MSE scales as 1/K") {
    const AggregationVarianceReport report =
        verify_aggregation_variance({1, 2, 4, 8, 16, 32}, 2000, 1.0, 0.0, 20, 5, 11);
    CHECK(report.slope == doctest::Approx(-1.0).epsilon(0.05));
    CHECK(report.variance_coeff ==
          doctest::Approx(report.analytic_variance).epsilon(0.1));
    CHECK(std::abs(report.intercept) <= 3.0 * report.intercept_stderr + 1e-9);
}

TEST_CASE("aggregation variance: injected bias lands in the intercept") {
    const AggregationVarianceReport report =
        verify_aggregation_variance({1, 2, 4, 8, 16, 32}, 3000, 1.0, 0.4, 20, 5, 13);
    CHECK(report.intercept ==
          doctest::Approx(report.analytic_bias).epsilon(0.1));
}

TEST_CASE("aggregation variance: distinct offsets respect the lemma inequality") {
    // With per-client (rather than shared) fixed offsets the bias term
    // kappa^2 = mean ||offset_k||^2 only upper-bounds the empirical error.
    Rng rng(17);
    const int rows = 8, cols = 4, trials = 2000;
    const Matrix truth = random_matrix(rng, rows, cols);
    for (const int k : {2, 4, 8}) {
        std::vector<Matrix> offsets;
        double kappa2 = 0.0;
        for (int i = 0; i < k; ++i) {
            offsets.push_back(random_matrix(rng, rows, cols, -0.5, 0.5));
            kappa2 += offsets.back().squaredNorm();
        }
        kappa2 /= k;
        const double sigma = 0.7;
        double mse = 0.0;
        for (int t = 0; t < trials; ++t) {
            Matrix mean = Matrix::Zero(rows, cols);
            for (int i = 0; i < k; ++i) {
                Matrix z = truth + offsets[static_cast<std::size_t>(i)];
                for (Eigen::Index j = 0; j < z.size(); ++j) {
                    z(j) += sigma * rng.normal();
                }
                mean += z;
            }
            mean /= k;
            mse += (mean - truth).squaredNorm();
        }
        mse /= trials;
        const double bound = sigma * sigma * rows * cols / k + kappa2;
        CHECK(mse <= bound * 1.05);
    }
}
