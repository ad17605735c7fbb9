#pragma once

#include "fedkd/data.hpp"
#include "fedkd/logits.hpp"
#include "fedkd/nas.hpp"
#include "fedkd/nn.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace fedkd::client {

/// Monotone per-client resource counters (analytic, deterministic).
struct ResourceCounters {
    long long train_flops = 0;   // hybrid-loss steps (CE and KD minibatches)
    long long nas_flops = 0;     // proxy training/evaluation inside selection
    long long infer_flops = 0;   // public-set prediction passes
    long long peak_mem_bytes = 0;
    long long clip_events = 0;
};

struct ClientState {
    int id = 0;
    data::Dataset local;
    ArchitectureSpec arch;
    std::optional<nn::Model> model;
    nn::OptimizerState opt;
    std::uint64_t base_seed = 0;
    ResourceCounters totals;
};

struct HyperParams {
    double alpha = 0.5;
    double temperature = 4.0;
    double lambda = 0.3;
    double lr = 0.05;
    int epochs = 1;  // E
    int batch = 16;
    nn::OptimizerKind optimizer = nn::OptimizerKind::kSgd;
    double clip_norm = 1e3;  // Frobenius bound on the uplink
};

struct NasInputs {
    const nas::SearchSpace* space = nullptr;
    nas::ProxyBudget budget;
    double lambda = 0.3;
};

struct RoundOutput {
    LogitMatrix uplink;
    double mean_train_loss = 0.0;
    ResourceCounters delta;      // this round's increments
    bool arch_switched = false;
    std::string arch_id;
};

struct TrainStats {
    double loss_sum = 0.0;
    long long steps = 0;
    long long train_flops = 0;
};

/// Runs hyper.epochs passes of minibatch training: CE minibatches over the
/// private data, interleaved 1:1 with KD minibatches over the public rows
/// (paired with the matching target rows) when a target is given and
/// alpha > 0. Batch orders are drawn from two independent streams derived
/// from round_seed, so the supervised trajectory is unchanged by alpha = 0.
TrainStats train_epochs(nn::Model& model, nn::OptimizerState& opt,
                        const data::Dataset& local, const DistillTarget* target,
                        const data::PublicSet* pub, const HyperParams& hyper,
                        std::uint64_t round_seed);

/// One protocol round on a client: architecture selection (skipped when
/// nas_inputs.space is null — the current arch is kept), E local epochs of
/// hybrid training against the broadcast target, then prediction on the
/// full public set. The target must carry round - 1. Bitwise deterministic
/// for fixed seeds.
RoundOutput client_round(ClientState& state, const DistillTarget& target,
                         const data::PublicSet& pub, const HyperParams& hyper,
                         const NasInputs& nas_inputs, std::uint32_t round);

}  // namespace fedkd::client
