#include "fedkd/nn.hpp"

#include "fedkd/rng.hpp"

#include <cmath>
#include <string>

namespace fedkd::nn {

namespace {

void check_labels(const std::vector<int>& labels, Eigen::Index batch, Eigen::Index classes) {
    if (static_cast<Eigen::Index>(labels.size()) != batch) {
        throw ShapeError("labels size " + std::to_string(labels.size()) +
                         " does not match batch " + std::to_string(batch));
    }
    for (const int y : labels) {
        if (y < 0 || y >= classes) {
            throw ParamError("label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(classes) + ")");
        }
    }
}

// Row-wise log-sum-exp of logits/T with max subtraction.
Vector row_logsumexp(const MatrixRef& scaled) {
    Vector maxes = scaled.rowwise().maxCoeff();
    return maxes.array() +
           (scaled.colwise() - maxes).array().exp().rowwise().sum().log().matrix().array();
}

}  // namespace

long long Model::param_count() const {
    long long count = 0;
    for (const Layer& layer : layers) {
        count += static_cast<long long>(layer.weight.size()) + layer.bias.size();
    }
    return count;
}

Model Model::init(const ArchitectureSpec& arch, std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<int> dims = layer_dims(arch);
    std::vector<Layer> layers;
    layers.reserve(dims.size() - 1);
    for (std::size_t l = 1; l < dims.size(); ++l) {
        Layer layer;
        const int fan_in = dims[l - 1];
        const int fan_out = dims[l];
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        layer.weight.resize(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) {
                layer.weight(r, c) = scale * rng.normal();
            }
        }
        layer.bias = Vector::Zero(fan_out);
        layer.activation =
            (l + 1 < dims.size()) ? Activation::kRelu : Activation::kIdentity;
        layers.push_back(std::move(layer));
    }
    return from_layers(std::move(layers), arch);
}

Model Model::from_layers(std::vector<Layer> layers, ArchitectureSpec arch) {
    if (layers.empty()) {
        throw ShapeError("Model: no layers");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].bias.size() != layers[l].weight.rows()) {
            throw ShapeError("Model: bias/weight mismatch at layer " + std::to_string(l));
        }
        if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
            throw ShapeError("Model: dimension chain broken at layer " + std::to_string(l));
        }
    }
    if (layers.back().weight.rows() != arch.num_classes) {
        throw ShapeError("Model: output dimension does not equal class count");
    }
    Model model;
    model.layers = std::move(layers);
    model.arch = std::move(arch);
    return model;
}

namespace {

struct ForwardTrace {
    std::vector<Matrix> pre_activations;  // per layer, B x out
    std::vector<Matrix> activations;      // activations[0] = inputs
};

ForwardTrace forward_trace(const Model& model, const MatrixRef& inputs) {
    if (inputs.cols() != model.input_dim()) {
        throw ShapeError("forward: input width " + std::to_string(inputs.cols()) +
                         " does not match model input dim " +
                         std::to_string(model.input_dim()));
    }
    ForwardTrace trace;
    trace.activations.reserve(model.layers.size() + 1);
    trace.pre_activations.reserve(model.layers.size());
    trace.activations.push_back(inputs);
    for (const Layer& layer : model.layers) {
        Matrix pre = trace.activations.back() * layer.weight.transpose();
        pre.rowwise() += layer.bias.transpose();
        Matrix act = (layer.activation == Activation::kRelu) ? pre.cwiseMax(0.0) : pre;
        trace.pre_activations.push_back(std::move(pre));
        trace.activations.push_back(std::move(act));
    }
    return trace;
}

}  // namespace

Matrix forward(const Model& model, const MatrixRef& inputs) {
    return forward_trace(model, inputs).activations.back();
}

Vector softmax_temp(const VectorRef& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw ParamError("softmax_temp: temperature must be positive");
    }
    if (!logits.allFinite()) {
        throw NumericError("softmax_temp: non-finite logit");
    }
    Vector scaled = logits / temperature;
    Vector shifted = scaled.array() - scaled.maxCoeff();
    Vector expd = shifted.array().exp();
    return expd / expd.sum();
}

Matrix softmax_temp_rows(const MatrixRef& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw ParamError("softmax_temp_rows: temperature must be positive");
    }
    if (!logits.allFinite()) {
        throw NumericError("softmax_temp_rows: non-finite logit");
    }
    Matrix scaled = logits / temperature;
    Vector maxes = scaled.rowwise().maxCoeff();
    Matrix expd = (scaled.colwise() - maxes).array().exp();
    Vector sums = expd.rowwise().sum();
    return expd.array().colwise() / sums.array();
}

double cross_entropy_loss(const MatrixRef& logits, const std::vector<int>& labels) {
    if (logits.rows() < 1) {
        throw ShapeError("cross_entropy_loss: empty batch");
    }
    check_labels(labels, logits.rows(), logits.cols());
    const Vector lse = row_logsumexp(logits);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        total += lse(i) - logits(i, labels[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(logits.rows());
}

double kd_loss(const MatrixRef& target_logits, const MatrixRef& student_logits,
               double temperature) {
    if (target_logits.rows() != student_logits.rows() ||
        target_logits.cols() != student_logits.cols()) {
        throw ShapeError("kd_loss: target/student shape mismatch");
    }
    if (!(temperature > 0.0)) {
        throw ParamError("kd_loss: temperature must be positive");
    }
    // KL(p || q) = sum p (log p - log q) with p the softened target,
    // accumulated in log space so zero-probability terms vanish exactly.
    const Matrix target_scaled = target_logits / temperature;
    const Matrix student_scaled = student_logits / temperature;
    const Vector target_lse = row_logsumexp(target_scaled);
    const Vector student_lse = row_logsumexp(student_scaled);
    double total = 0.0;
    for (Eigen::Index i = 0; i < target_logits.rows(); ++i) {
        for (Eigen::Index j = 0; j < target_logits.cols(); ++j) {
            const double log_p = target_scaled(i, j) - target_lse(i);
            const double log_q = student_scaled(i, j) - student_lse(i);
            total += std::exp(log_p) * (log_p - log_q);
        }
    }
    const double mean = total / static_cast<double>(target_logits.rows());
    // Rounding can push an exact zero infinitesimally negative.
    return mean < 0.0 && mean > -1e-15 ? 0.0 : mean;
}

double hybrid_loss(const MatrixRef& student_logits, const std::vector<int>& labels,
                   const MatrixRef& target_logits, double alpha, double temperature) {
    if (alpha < 0.0) {
        throw ParamError("hybrid_loss: alpha must be >= 0");
    }
    const double ce = cross_entropy_loss(student_logits, labels);
    if (alpha == 0.0) {
        return ce;
    }
    return ce + alpha * kd_loss(target_logits, student_logits, temperature);
}

double loss_and_gradients(const Model& model, const Batch& batch, const Matrix* target_slice,
                          const Hyper& hyper, Gradients& grads) {
    const Eigen::Index batch_size = batch.inputs.rows();
    if (batch_size < 1) {
        throw ShapeError("loss_and_gradients: empty batch");
    }
    const ForwardTrace trace = forward_trace(model, batch.inputs);
    const Matrix& logits = trace.activations.back();
    const Eigen::Index classes = logits.cols();
    const double inv_b = 1.0 / static_cast<double>(batch_size);

    double loss = 0.0;
    Matrix grad_logits = Matrix::Zero(batch_size, classes);

    if (batch.labels) {
        check_labels(*batch.labels, batch_size, classes);
        const Matrix probs = softmax_temp_rows(logits, 1.0);
        const Vector lse = row_logsumexp(logits);
        for (Eigen::Index i = 0; i < batch_size; ++i) {
            loss += (lse(i) - logits(i, (*batch.labels)[static_cast<std::size_t>(i)])) * inv_b;
        }
        grad_logits += probs * inv_b;
        for (Eigen::Index i = 0; i < batch_size; ++i) {
            grad_logits(i, (*batch.labels)[static_cast<std::size_t>(i)]) -= inv_b;
        }
    }

    if (target_slice != nullptr && hyper.alpha != 0.0) {
        if (target_slice->rows() != batch_size || target_slice->cols() != classes) {
            throw ShapeError("loss_and_gradients: target slice shape mismatch");
        }
        const double t = hyper.temperature;
        loss += hyper.alpha * kd_loss(*target_slice, logits, t);
        const Matrix soft_target = softmax_temp_rows(*target_slice, t);
        const Matrix soft_student = softmax_temp_rows(logits, t);
        grad_logits += (hyper.alpha * inv_b / t) * (soft_student - soft_target);
    }

    grads.weight.resize(model.layers.size());
    grads.bias.resize(model.layers.size());
    Matrix delta = std::move(grad_logits);
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const Layer& layer = model.layers[l];
        if (layer.activation == Activation::kRelu) {
            delta.array() *= (trace.pre_activations[l].array() > 0.0).cast<double>();
        }
        grads.weight[l].noalias() = delta.transpose() * trace.activations[l];
        grads.bias[l] = delta.colwise().sum();
        if (l > 0) {
            delta = delta * layer.weight;
        }
    }
    return loss;
}

OptimizerState OptimizerState::sgd(double lr) {
    if (lr < 0.0) {
        throw ParamError("OptimizerState: learning rate must be >= 0");
    }
    OptimizerState state;
    state.kind = OptimizerKind::kSgd;
    state.lr = lr;
    return state;
}

OptimizerState OptimizerState::adam(double lr) {
    OptimizerState state = sgd(lr);
    state.kind = OptimizerKind::kAdam;
    return state;
}

namespace {

void apply_update(Model& model, const Gradients& grads, OptimizerState& opt) {
    if (opt.kind == OptimizerKind::kSgd) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            model.layers[l].weight -= opt.lr * grads.weight[l];
            model.layers[l].bias -= opt.lr * grads.bias[l];
        }
        return;
    }
    if (opt.weight_m.empty()) {
        for (const Layer& layer : model.layers) {
            opt.weight_m.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
            opt.weight_v.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
            opt.bias_m.push_back(Vector::Zero(layer.bias.size()));
            opt.bias_v.push_back(Vector::Zero(layer.bias.size()));
        }
    }
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& mw = opt.weight_m[l];
        auto& vw = opt.weight_v[l];
        mw = opt.beta1 * mw + (1.0 - opt.beta1) * grads.weight[l];
        vw = opt.beta2 * vw + (1.0 - opt.beta2) * grads.weight[l].array().square().matrix();
        model.layers[l].weight.array() -=
            opt.lr * (mw.array() / bc1) / ((vw.array() / bc2).sqrt() + opt.epsilon);

        auto& mb = opt.bias_m[l];
        auto& vb = opt.bias_v[l];
        mb = opt.beta1 * mb + (1.0 - opt.beta1) * grads.bias[l];
        vb = opt.beta2 * vb + (1.0 - opt.beta2) * grads.bias[l].array().square().matrix();
        model.layers[l].bias.array() -=
            opt.lr * (mb.array() / bc1) / ((vb.array() / bc2).sqrt() + opt.epsilon);
    }
}

}  // namespace

double train_step(Model& model, const Batch& batch, const Matrix* target_slice,
                  const Hyper& hyper, OptimizerState& opt) {
    Gradients grads;
    const double loss = loss_and_gradients(model, batch, target_slice, hyper, grads);
    if (!std::isfinite(loss)) {
        throw NumericError("train_step: non-finite loss");
    }
    apply_update(model, grads, opt);
    return loss;
}

double finite_diff_gradcheck(const Model& model, const Batch& batch, const Matrix* target_slice,
                             const Hyper& hyper, double eps) {
    if (eps < 1e-7 || eps > 1e-3) {
        throw ParamError("finite_diff_gradcheck: eps outside [1e-7, 1e-3]");
    }
    Gradients analytic;
    loss_and_gradients(model, batch, target_slice, hyper, analytic);

    Model probe = model;
    const auto loss_at = [&]() {
        Gradients scratch;
        return loss_and_gradients(probe, batch, target_slice, hyper, scratch);
    };

    double worst = 0.0;
    const auto compare = [&](double* param, double analytic_grad) {
        const double saved = *param;
        *param = saved + eps;
        const double plus = loss_at();
        *param = saved - eps;
        const double minus = loss_at();
        *param = saved;
        const double fd = (plus - minus) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic_grad), std::abs(fd), 1e-8});
        worst = std::max(worst, std::abs(analytic_grad - fd) / denom);
    };

    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        Matrix& weight = probe.layers[l].weight;
        for (Eigen::Index idx = 0; idx < weight.size(); ++idx) {
            compare(weight.data() + idx, analytic.weight[l](idx));
        }
        Vector& bias = probe.layers[l].bias;
        for (Eigen::Index idx = 0; idx < bias.size(); ++idx) {
            compare(bias.data() + idx, analytic.bias[l](idx));
        }
    }
    return worst;
}

}  // namespace fedkd::nn
