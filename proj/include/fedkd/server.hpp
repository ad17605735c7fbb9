#pragma once

#include "fedkd/arch.hpp"
#include "fedkd/data.hpp"
#include "fedkd/logits.hpp"
#include "fedkd/nn.hpp"

#include <cstdint>
#include <vector>

namespace fedkd::server {

/// Frozen teacher: model plus its cached public-set predictions. The cache
/// is fixed for the whole run.
struct TeacherModel {
    nn::Model model;
    LogitMatrix cached;  // round 0, source kTeacherSource
};

/// Supervised pretraining on the labeled public set; caches predictions on
/// all rows. Deterministic per seed.
TeacherModel pretrain_teacher(const data::PublicSet& pub, const ArchitectureSpec& arch,
                              int epochs, double lr, int batch, std::uint64_t seed);

enum class AggregationRule { kMean, kMedian, kTrimmed };

struct Aggregation {
    AggregationRule rule = AggregationRule::kMean;
    double trim_fraction = 0.1;  // trimmed rule: drop floor(f*K) per side
};

/// Elementwise mean, coordinate-wise median, or trimmed mean of the client
/// prediction matrices. All inputs must share shape and round.
LogitMatrix aggregate_predictions(const std::vector<LogitMatrix>& preds,
                                  const Aggregation& agg);

/// beta * teacher + (1 - beta) * aggregate; beta in [0, 1]. The boundary
/// values return the corresponding input bitwise.
LogitMatrix fuse_with_teacher(const LogitMatrix& aggregate, const LogitMatrix& teacher,
                              double beta);

/// gamma * prev.smoothed + (1 - gamma) * raw, advancing the round by one.
/// The boundary values keep/replace the smoothed target bitwise.
DistillTarget ema_update(const DistillTarget& prev, const LogitMatrix& raw, double gamma);

/// Frobenius distance of consecutive smoothed targets.
double target_drift(const DistillTarget& before, const DistillTarget& after);

// --- numerical verification of the smoothing/aggregation properties ---

struct EmaDriftReport {
    int sequences = 0;
    int rounds_checked = 0;
    int equality_violations = 0;  // drift != (1-gamma)*||Z_r - smoothed_{r-1}||
    int bound_violations = 0;     // drift > (1-gamma) * sum gamma^k * raw drift
    double max_equality_residual = 0.0;  // relative
    double min_bound_slack = 0.0;

    bool pass() const { return equality_violations == 0 && bound_violations == 0; }
};

/// Checks, for one raw-target sequence with smoothed_0 = raw_0, that the
/// per-round smoothed drift equals (1-gamma)*||Z^(r) - smoothed^(r-1)||_F
/// (relative residual <= 1e-10) and respects the geometric upper bound
/// (slack >= -1e-10).
EmaDriftReport check_ema_drift(const std::vector<Matrix>& raw_sequence, double gamma);

/// Runs check_ema_drift over `trials` random sequences (entries U[-1,1]).
EmaDriftReport verify_ema_drift_bound(int trials, int sequence_length, int rows, int cols,
                                      double gamma, std::uint64_t seed);

struct AggregationVarianceReport {
    std::vector<int> client_counts;
    std::vector<double> mse;     // empirical E||mean - truth||_F^2 per K
    double slope = 0.0;          // log-log slope of (mse - intercept) vs K
    double variance_coeff = 0.0; // fitted a in a/K + b
    double intercept = 0.0;      // fitted b
    double intercept_stderr = 0.0;
    double analytic_variance = 0.0;  // sigma^2 * M * C
    double analytic_bias = 0.0;      // kappa^2 = ||offset||_F^2
};

/// Monte-Carlo check of the aggregation-error decomposition: per-client
/// logits are truth + shared systematic offset (scaled by bias_scale) + iid
/// N(0, sigma^2) noise; the empirical MSE against the noise-free truth is
/// fitted to a/K + b by least squares over 1/K.
AggregationVarianceReport verify_aggregation_variance(const std::vector<int>& client_counts,
                                                      int trials, double sigma,
                                                      double bias_scale, int rows, int cols,
                                                      std::uint64_t seed);

}  // namespace fedkd::server
