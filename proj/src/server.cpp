#include "fedkd/server.hpp"

#include "fedkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedkd::server {

TeacherModel pretrain_teacher(const data::PublicSet& pub, const ArchitectureSpec& arch,
                              int epochs, double lr, int batch, std::uint64_t seed) {
    if (pub.labels.empty() ||
        static_cast<Eigen::Index>(pub.labels.size()) != pub.inputs.rows()) {
        throw ParamError("pretrain_teacher: public set must carry labels");
    }
    TeacherModel teacher{nn::Model::init(arch, derive_seed(seed, {stream_tag("teacher_init")})),
                         {}};
    nn::OptimizerState opt = nn::OptimizerState::sgd(lr);
    const nn::Hyper hyper{0.0, 1.0};
    Rng rng(derive_seed(seed, {stream_tag("teacher_batches")}));
    std::vector<int> order(pub.labels.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(batch)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(batch));
            nn::Batch mini;
            mini.inputs.resize(static_cast<Eigen::Index>(stop - start), pub.inputs.cols());
            std::vector<int> labels;
            for (std::size_t i = start; i < stop; ++i) {
                mini.inputs.row(static_cast<Eigen::Index>(i - start)) =
                    pub.inputs.row(order[i]);
                labels.push_back(pub.labels[static_cast<std::size_t>(order[i])]);
            }
            mini.labels = std::move(labels);
            nn::train_step(teacher.model, mini, nullptr, hyper, opt);
        }
    }
    teacher.cached.values = nn::forward(teacher.model, pub.inputs);
    teacher.cached.round = 0;
    teacher.cached.source = kTeacherSource;
    return teacher;
}

LogitMatrix aggregate_predictions(const std::vector<LogitMatrix>& preds,
                                  const Aggregation& agg) {
    if (preds.empty()) {
        throw AggregationError("aggregate_predictions: no inputs");
    }
    const Eigen::Index rows = preds.front().values.rows();
    const Eigen::Index cols = preds.front().values.cols();
    const std::uint32_t round = preds.front().round;
    for (const LogitMatrix& p : preds) {
        if (p.values.rows() != rows || p.values.cols() != cols) {
            throw AggregationError("aggregate_predictions: shape mismatch");
        }
        if (p.round != round) {
            throw AggregationError("aggregate_predictions: round mismatch");
        }
    }

    LogitMatrix out;
    out.round = round;
    out.source = kAggregateSource;
    if (agg.rule == AggregationRule::kMean) {
        out.values = Matrix::Zero(rows, cols);
        for (const LogitMatrix& p : preds) {
            out.values += p.values;
        }
        out.values /= static_cast<double>(preds.size());
        return out;
    }

    const std::size_t count = preds.size();
    std::size_t drop = 0;
    if (agg.rule == AggregationRule::kTrimmed) {
        if (agg.trim_fraction < 0.0 || agg.trim_fraction >= 0.5) {
            throw ParamError("aggregate_predictions: trim fraction must be in [0, 0.5)");
        }
        drop = static_cast<std::size_t>(std::floor(agg.trim_fraction *
                                                   static_cast<double>(count)));
        if (2 * drop >= count) {
            throw AggregationError("aggregate_predictions: trimming removes every value");
        }
    }

    out.values.resize(rows, cols);
    std::vector<double> column(count);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (std::size_t k = 0; k < count; ++k) {
                column[k] = preds[k].values(r, c);
            }
            std::sort(column.begin(), column.end());
            if (agg.rule == AggregationRule::kMedian) {
                out.values(r, c) = (count % 2 == 1)
                                       ? column[count / 2]
                                       : 0.5 * (column[count / 2 - 1] + column[count / 2]);
            } else {
                const double sum = std::accumulate(column.begin() + static_cast<std::ptrdiff_t>(drop),
                                                   column.end() - static_cast<std::ptrdiff_t>(drop),
                                                   0.0);
                out.values(r, c) = sum / static_cast<double>(count - 2 * drop);
            }
        }
    }
    return out;
}

LogitMatrix fuse_with_teacher(const LogitMatrix& aggregate, const LogitMatrix& teacher,
                              double beta) {
    if (beta < 0.0 || beta > 1.0) {
        throw ParamError("fuse_with_teacher: beta must lie in [0, 1]");
    }
    if (aggregate.values.rows() != teacher.values.rows() ||
        aggregate.values.cols() != teacher.values.cols()) {
        throw ShapeError("fuse_with_teacher: shape mismatch");
    }
    LogitMatrix out;
    out.round = aggregate.round;
    out.source = kAggregateSource;
    if (beta == 0.0) {
        out.values = aggregate.values;
    } else if (beta == 1.0) {
        out.values = teacher.values;
    } else {
        out.values = beta * teacher.values + (1.0 - beta) * aggregate.values;
    }
    return out;
}

DistillTarget ema_update(const DistillTarget& prev, const LogitMatrix& raw, double gamma) {
    if (gamma < 0.0 || gamma > 1.0) {
        throw ParamError("ema_update: gamma must lie in [0, 1]");
    }
    if (raw.round != prev.round + 1) {
        throw ProtocolError("ema_update: raw target round " + std::to_string(raw.round) +
                            " does not follow round " + std::to_string(prev.round));
    }
    DistillTarget next;
    next.round = raw.round;
    next.raw = raw;
    next.gamma_used = gamma;
    next.beta_used = prev.beta_used;
    next.smoothed.round = raw.round;
    next.smoothed.source = kAggregateSource;
    if (gamma == 1.0) {
        next.smoothed.values = prev.smoothed.values;
    } else if (gamma == 0.0) {
        next.smoothed.values = raw.values;
    } else {
        next.smoothed.values = gamma * prev.smoothed.values + (1.0 - gamma) * raw.values;
    }
    return next;
}

double target_drift(const DistillTarget& before, const DistillTarget& after) {
    return (after.smoothed.values - before.smoothed.values).norm();
}

EmaDriftReport check_ema_drift(const std::vector<Matrix>& raw_sequence, double gamma) {
    if (raw_sequence.size() < 2) {
        throw ParamError("check_ema_drift: need at least two targets");
    }
    constexpr double kTolerance = 1e-10;
    EmaDriftReport report;
    report.sequences = 1;

    Matrix smoothed = raw_sequence.front();  // smoothed_0 = raw_0
    std::vector<double> raw_drifts;          // ||Z^(r) - Z^(r-1)||_F, r >= 1
    for (std::size_t r = 1; r < raw_sequence.size(); ++r) {
        raw_drifts.push_back((raw_sequence[r] - raw_sequence[r - 1]).norm());
        const double predicted = (1.0 - gamma) * (raw_sequence[r] - smoothed).norm();
        const Matrix next = gamma * smoothed + (1.0 - gamma) * raw_sequence[r];
        const double drift = (next - smoothed).norm();

        const double residual =
            std::abs(drift - predicted) / std::max({drift, predicted, 1.0});
        report.max_equality_residual = std::max(report.max_equality_residual, residual);
        if (residual > kTolerance) {
            report.equality_violations += 1;
        }

        double bound = 0.0;
        double decay = 1.0 - gamma;
        for (std::size_t k = 0; k < raw_drifts.size(); ++k) {
            bound += decay * raw_drifts[raw_drifts.size() - 1 - k];
            decay *= gamma;
        }
        const double slack = bound - drift;
        report.min_bound_slack = std::min(report.min_bound_slack, slack);
        if (slack < -kTolerance) {
            report.bound_violations += 1;
        }
        report.rounds_checked += 1;
        smoothed = next;
    }
    return report;
}

EmaDriftReport verify_ema_drift_bound(int trials, int sequence_length, int rows, int cols,
                                      double gamma, std::uint64_t seed) {
    if (trials < 1 || sequence_length < 2) {
        throw ParamError("verify_ema_drift_bound: need trials >= 1, length >= 2");
    }
    Rng rng(derive_seed(seed, {stream_tag("ema_verify")}));
    EmaDriftReport total;
    for (int t = 0; t < trials; ++t) {
        std::vector<Matrix> sequence;
        sequence.reserve(static_cast<std::size_t>(sequence_length));
        for (int r = 0; r < sequence_length; ++r) {
            Matrix z(rows, cols);
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                z(i) = rng.uniform(-1.0, 1.0);
            }
            sequence.push_back(std::move(z));
        }
        const EmaDriftReport one = check_ema_drift(sequence, gamma);
        total.sequences += one.sequences;
        total.rounds_checked += one.rounds_checked;
        total.equality_violations += one.equality_violations;
        total.bound_violations += one.bound_violations;
        total.max_equality_residual =
            std::max(total.max_equality_residual, one.max_equality_residual);
        total.min_bound_slack = std::min(total.min_bound_slack, one.min_bound_slack);
    }
    return total;
}

AggregationVarianceReport verify_aggregation_variance(const std::vector<int>& client_counts,
                                                      int trials, double sigma,
                                                      double bias_scale, int rows, int cols,
                                                      std::uint64_t seed) {
    if (client_counts.empty() || trials < 1) {
        throw ParamError("verify_aggregation_variance: need clients and trials");
    }
    Rng rng(derive_seed(seed, {stream_tag("agg_verify")}));

    Matrix truth(rows, cols);
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        truth(i) = rng.uniform(-1.0, 1.0);
    }
    // Systematic inter-client bias: the same offset for every client, so the
    // analytic bias term equals the fit intercept exactly.
    Matrix offset = Matrix::Zero(rows, cols);
    if (bias_scale != 0.0) {
        for (Eigen::Index i = 0; i < offset.size(); ++i) {
            offset(i) = bias_scale * rng.uniform(-1.0, 1.0);
        }
    }

    AggregationVarianceReport report;
    report.client_counts = client_counts;
    report.analytic_variance = sigma * sigma * static_cast<double>(rows) * cols;
    report.analytic_bias = offset.squaredNorm();

    for (const int k : client_counts) {
        if (k < 1) {
            throw ParamError("verify_aggregation_variance: client count must be >= 1");
        }
        double mse_sum = 0.0;
        for (int t = 0; t < trials; ++t) {
            Matrix mean = Matrix::Zero(rows, cols);
            for (int c = 0; c < k; ++c) {
                Matrix z = truth + offset;
                if (sigma != 0.0) {
                    for (Eigen::Index i = 0; i < z.size(); ++i) {
                        z(i) += sigma * rng.normal();
                    }
                }
                mean += z;
            }
            mean /= static_cast<double>(k);
            mse_sum += (mean - truth).squaredNorm();
        }
        report.mse.push_back(mse_sum / static_cast<double>(trials));
    }

    // Least squares of mse against 1/K: mse ~ a * (1/K) + b.
    const std::size_t n = client_counts.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 1.0 / static_cast<double>(client_counts[i]);
        sx += x;
        sy += report.mse[i];
        sxx += x * x;
        sxy += x * report.mse[i];
    }
    const double denom = static_cast<double>(n) * sxx - sx * sx;
    if (denom != 0.0) {
        report.variance_coeff = (static_cast<double>(n) * sxy - sx * sy) / denom;
        report.intercept = (sy - report.variance_coeff * sx) / static_cast<double>(n);
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = 1.0 / static_cast<double>(client_counts[i]);
            const double fit = report.variance_coeff * x + report.intercept;
            rss += (report.mse[i] - fit) * (report.mse[i] - fit);
        }
        if (n > 2) {
            const double sigma2 = rss / static_cast<double>(n - 2);
            report.intercept_stderr =
                std::sqrt(sigma2 * sxx / denom);
        }
    }

    // log-log slope of the bias-free MSE against K.
    double lx = 0.0, ly = 0.0, lxx = 0.0, lxy = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double value = report.mse[i] - report.analytic_bias;
        if (value <= 0.0) {
            continue;
        }
        const double x = std::log(static_cast<double>(client_counts[i]));
        const double y = std::log(value);
        lx += x;
        ly += y;
        lxx += x * x;
        lxy += x * y;
        ++used;
    }
    const double ldenom = static_cast<double>(used) * lxx - lx * lx;
    if (used >= 2 && ldenom != 0.0) {
        report.slope = (static_cast<double>(used) * lxy - lx * ly) / ldenom;
    }
    return report;
}

}  // namespace fedkd::server
