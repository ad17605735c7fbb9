#pragma once

#include "fedkd/arch.hpp"
#include "fedkd/data.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace fedkd::nas {

struct SearchSpace {
    std::vector<ArchitectureSpec> candidates;
    int subset_size = 4;
    int refine_radius = 1;
};

/// Grid of uniform-width architectures over the given depths and widths.
SearchSpace make_grid_space(const std::vector<int>& depths, const std::vector<int>& widths,
                            int input_dim, int num_classes, int subset_size, int refine_radius);

struct ProxyBudget {
    int epochs = 1;
    double lr = 0.05;
    int batch = 16;
};

struct ProxyResult {
    double accuracy = 0.0;
    bool used_train_fallback = false;  // too few samples for a held-out split
    long long train_flops = 0;
    long long eval_flops = 0;
};

/// Trains a fresh model on an 80/20 split of the local data for
/// budget.epochs and returns held-out accuracy. Deterministic per seed.
ProxyResult proxy_performance(const ArchitectureSpec& arch, const data::Dataset& local_data,
                              const ProxyBudget& budget, std::uint64_t seed);

struct CandidateEvaluation {
    ArchitectureSpec arch;
    double proxy_accuracy = 0.0;
    double cost = 0.0;   // subset-normalized, in [0, 1]
    double score = 0.0;  // proxy_accuracy - lambda * cost
    long long flops_spent = 0;
    long long mem_bytes = 0;
};

struct SelectionTrace {
    std::vector<CandidateEvaluation> evaluated;  // sorted by candidate id
};

/// Deterministic argmax + tie-break over already-scored candidates:
/// `prev_index` (when >= 0 and its score ties the maximum) wins, otherwise
/// ties break by lower params then lower id.
std::size_t select_from_scored(const std::vector<CandidateEvaluation>& evaluated,
                               int prev_index);

/// Samples subset_size candidates (always including `prev` when given,
/// biased toward its grid neighborhood), evaluates proxy accuracy and
/// min-max-normalized cost over the subset, and returns the argmax of
/// score = accuracy - lambda * cost.
ArchitectureSpec select_architecture(const SearchSpace& space, const data::Dataset& local_data,
                                     double lambda, const ProxyBudget& budget,
                                     std::uint64_t seed, const ArchitectureSpec* prev,
                                     SelectionTrace* trace = nullptr);

}  // namespace fedkd::nas
