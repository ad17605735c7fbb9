#include "fedkd/client.hpp"

#include "fedkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedkd::client {

namespace {

nn::OptimizerState make_optimizer(const HyperParams& hyper) {
    return hyper.optimizer == nn::OptimizerKind::kAdam
               ? nn::OptimizerState::adam(hyper.lr)
               : nn::OptimizerState::sgd(hyper.lr);
}

std::vector<std::vector<int>> epoch_batches(std::vector<int>& order, int batch, Rng& rng) {
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return batches;
}

}  // namespace

TrainStats train_epochs(nn::Model& model, nn::OptimizerState& opt, const data::Dataset& local,
                        const DistillTarget* target, const data::PublicSet* pub,
                        const HyperParams& hyper, std::uint64_t round_seed) {
    if (hyper.epochs < 0) {
        throw ParamError("train_epochs: epochs must be >= 0");
    }
    const bool distill = target != nullptr && pub != nullptr && hyper.alpha > 0.0;
    const nn::Hyper loss_hyper{hyper.alpha, hyper.temperature};
    const long long step_flops = cost_profile(model.arch, 1).flops_per_sample;
    Rng priv_rng(derive_seed(round_seed, {stream_tag("private_batches")}));
    Rng pub_rng(derive_seed(round_seed, {stream_tag("public_batches")}));

    std::vector<int> priv_order(static_cast<std::size_t>(local.size()));
    std::iota(priv_order.begin(), priv_order.end(), 0);
    std::vector<int> pub_order;
    if (distill) {
        pub_order.resize(static_cast<std::size_t>(pub->inputs.rows()));
        std::iota(pub_order.begin(), pub_order.end(), 0);
    }

    TrainStats stats;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto priv_batches = epoch_batches(priv_order, hyper.batch, priv_rng);
        std::vector<std::vector<int>> pub_batches;
        std::size_t pub_cursor = 0;
        if (distill) {
            pub_batches = epoch_batches(pub_order, hyper.batch, pub_rng);
        }
        for (const auto& rows : priv_batches) {
            nn::Batch batch;
            const data::Dataset view = data::subset(local, rows);
            batch.inputs = view.inputs;
            batch.labels = view.labels;
            stats.loss_sum += nn::train_step(model, batch, nullptr, loss_hyper, opt);
            stats.train_flops += 3 * step_flops * static_cast<long long>(rows.size());
            stats.steps += 1;

            if (!distill) {
                continue;
            }
            const auto& pub_rows = pub_batches[pub_cursor];
            pub_cursor = (pub_cursor + 1) % pub_batches.size();
            nn::Batch kd_batch;
            kd_batch.inputs.resize(static_cast<Eigen::Index>(pub_rows.size()),
                                   pub->inputs.cols());
            Matrix target_slice(static_cast<Eigen::Index>(pub_rows.size()),
                                target->smoothed.values.cols());
            for (std::size_t i = 0; i < pub_rows.size(); ++i) {
                kd_batch.inputs.row(static_cast<Eigen::Index>(i)) =
                    pub->inputs.row(pub_rows[i]);
                target_slice.row(static_cast<Eigen::Index>(i)) =
                    target->smoothed.values.row(pub_rows[i]);
            }
            stats.loss_sum +=
                nn::train_step(model, kd_batch, &target_slice, loss_hyper, opt);
            stats.train_flops += 3 * step_flops * static_cast<long long>(pub_rows.size());
            stats.steps += 1;
        }
    }
    return stats;
}

RoundOutput client_round(ClientState& state, const DistillTarget& target,
                         const data::PublicSet& pub, const HyperParams& hyper,
                         const NasInputs& nas_inputs, std::uint32_t round) {
    if (target.round + 1 != round) {
        throw ProtocolError("client " + std::to_string(state.id) + ": target round " +
                            std::to_string(target.round) + " does not precede round " +
                            std::to_string(round));
    }
    const std::uint64_t round_seed = derive_seed(state.base_seed, {round});
    RoundOutput out;

    // C1: architecture selection over this round's sampled subset.
    ArchitectureSpec chosen = state.arch;
    if (nas_inputs.space != nullptr) {
        nas::SelectionTrace trace;
        const ArchitectureSpec* prev = state.model ? &state.arch : nullptr;
        chosen = nas::select_architecture(*nas_inputs.space, state.local, nas_inputs.lambda,
                                          nas_inputs.budget,
                                          derive_seed(round_seed, {stream_tag("nas")}), prev,
                                          &trace);
        for (const auto& eval : trace.evaluated) {
            out.delta.nas_flops += eval.flops_spent;
            out.delta.peak_mem_bytes = std::max(out.delta.peak_mem_bytes, eval.mem_bytes);
        }
    } else if (chosen.hidden_widths.empty()) {
        throw ParamError("client_round: no search space and no architecture set");
    }

    // Re-initialize only on an architecture change; otherwise continue from
    // the previous round's weights.
    out.arch_switched = !state.model || chosen.id != state.arch.id;
    if (out.arch_switched) {
        state.arch = chosen;
        state.model = nn::Model::init(chosen, derive_seed(round_seed, {stream_tag("init")}));
        state.opt = make_optimizer(hyper);
    }
    out.arch_id = state.arch.id;
    out.delta.peak_mem_bytes = std::max(out.delta.peak_mem_bytes,
                                        cost_profile(state.arch, hyper.batch).mem_bytes);

    // C2: E local epochs of hybrid training.
    try {
        const TrainStats stats = train_epochs(*state.model, state.opt, state.local, &target,
                                              &pub, hyper, round_seed);
        out.delta.train_flops = stats.train_flops;
        out.mean_train_loss =
            stats.steps > 0 ? stats.loss_sum / static_cast<double>(stats.steps) : 0.0;
    } catch (const NumericError& err) {
        throw RoundError(static_cast<int>(round), state.id, err.what());
    }

    // C3: predictions on the full public set, clipped to the norm bound.
    out.uplink.values = nn::forward(*state.model, pub.inputs);
    out.uplink.round = round;
    out.uplink.source = static_cast<std::uint32_t>(state.id);
    out.delta.infer_flops +=
        cost_profile(state.arch, 1).flops_per_sample * pub.inputs.rows();
    if (clip_to_frobenius(out.uplink, hyper.clip_norm)) {
        out.delta.clip_events += 1;
    }

    state.totals.train_flops += out.delta.train_flops;
    state.totals.nas_flops += out.delta.nas_flops;
    state.totals.infer_flops += out.delta.infer_flops;
    state.totals.peak_mem_bytes =
        std::max(state.totals.peak_mem_bytes, out.delta.peak_mem_bytes);
    state.totals.clip_events += out.delta.clip_events;
    return out;
}

}  // namespace fedkd::client
