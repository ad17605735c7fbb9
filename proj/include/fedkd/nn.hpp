#pragma once

#include "fedkd/arch.hpp"
#include "fedkd/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace fedkd::nn {

enum class Activation { kRelu, kIdentity };

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::kIdentity;
};

/// Dense network with ReLU hidden layers and a linear output layer.
/// Layer dimensions chain; the final output dimension is the class count.
struct Model {
    std::vector<Layer> layers;
    ArchitectureSpec arch;

    int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
    int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
    long long param_count() const;

    /// Deterministic He-style initialization from the architecture spec.
    static Model init(const ArchitectureSpec& arch, std::uint64_t seed);

    /// Builds a model from explicit layers, checking the dimension chain.
    static Model from_layers(std::vector<Layer> layers, ArchitectureSpec arch);
};

struct Batch {
    Matrix inputs;                          // B x d
    std::optional<std::vector<int>> labels; // absent for public-set rows
};

struct Hyper {
    double alpha = 0.5;       // distillation weight
    double temperature = 4.0; // softening temperature
};

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::kSgd;
    double lr = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long long step = 0;
    std::vector<Matrix> weight_m, weight_v;
    std::vector<Vector> bias_m, bias_v;

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr);
};

/// Per-layer parameter gradients, same shapes as the model.
struct Gradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;
};

/// Raw (pre-softmax) logits, B x C. Deterministic for fixed model and inputs.
Matrix forward(const Model& model, const MatrixRef& inputs);

/// Temperature-scaled softmax of a single logit row, max-subtracted for
/// stability. T must be positive and inputs finite.
Vector softmax_temp(const VectorRef& logits, double temperature);

/// Row-wise temperature softmax.
Matrix softmax_temp_rows(const MatrixRef& logits, double temperature);

/// Mean over the batch of -log softmax(logits)[label].
double cross_entropy_loss(const MatrixRef& logits, const std::vector<int>& labels);

/// Mean over rows of KL(softmax(target/T) || softmax(student/T)).
/// The target side is a constant: no gradient flows to it.
double kd_loss(const MatrixRef& target_logits, const MatrixRef& student_logits,
               double temperature);

/// cross_entropy + alpha * kd; with alpha = 0 this is exactly the CE loss.
double hybrid_loss(const MatrixRef& student_logits, const std::vector<int>& labels,
                   const MatrixRef& target_logits, double alpha, double temperature);

/// Analytic gradients of the step loss
///   (labels present ? CE : 0) + (target present ? alpha * KD : 0)
/// evaluated on the batch inputs. Returns the loss value.
double loss_and_gradients(const Model& model, const Batch& batch, const Matrix* target_slice,
                          const Hyper& hyper, Gradients& grads);

/// One optimizer step on the hybrid step loss; CE-only when no target is
/// given, KD-only when the batch carries no labels. Returns the loss.
double train_step(Model& model, const Batch& batch, const Matrix* target_slice,
                  const Hyper& hyper, OptimizerState& opt);

/// Central-difference check of the analytic gradient over every parameter.
/// Returns max |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
double finite_diff_gradcheck(const Model& model, const Batch& batch, const Matrix* target_slice,
                             const Hyper& hyper, double eps);

}  // namespace fedkd::nn
