#include "fedkd/nas.hpp"

#include "fedkd/nn.hpp"
#include "fedkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace fedkd::nas {

SearchSpace make_grid_space(const std::vector<int>& depths, const std::vector<int>& widths,
                            int input_dim, int num_classes, int subset_size,
                            int refine_radius) {
    if (depths.empty() || widths.empty()) {
        throw ParamError("make_grid_space: depths and widths must be nonempty");
    }
    SearchSpace space;
    for (const int depth : depths) {
        if (depth < 1) {
            throw ParamError("make_grid_space: depth must be >= 1");
        }
        for (const int width : widths) {
            space.candidates.push_back(ArchitectureSpec::make(
                std::vector<int>(static_cast<std::size_t>(depth), width), input_dim,
                num_classes));
        }
    }
    space.subset_size = std::min<int>(subset_size, static_cast<int>(space.candidates.size()));
    space.refine_radius = refine_radius;
    if (space.subset_size < 1) {
        throw ParamError("make_grid_space: subset size must be >= 1");
    }
    return space;
}

namespace {

// Minibatch supervised training used for proxy evaluation; returns flops.
long long brief_train(nn::Model& model, const data::Dataset& train, const ProxyBudget& budget,
                      Rng& rng) {
    nn::OptimizerState opt = nn::OptimizerState::sgd(budget.lr);
    const nn::Hyper hyper{0.0, 1.0};
    const long long forward_flops = cost_profile(model.arch, 1).flops_per_sample;
    std::vector<int> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    long long flops = 0;
    for (int epoch = 0; epoch < budget.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(budget.batch)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(budget.batch));
            std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(stop));
            nn::Batch batch;
            const data::Dataset view = data::subset(train, rows);
            batch.inputs = view.inputs;
            batch.labels = view.labels;
            nn::train_step(model, batch, nullptr, hyper, opt);
            flops += 3 * forward_flops * static_cast<long long>(rows.size());
        }
    }
    return flops;
}

double accuracy_on(const nn::Model& model, const data::Dataset& ds) {
    const Matrix logits = nn::forward(model, ds.inputs);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);
        if (static_cast<int>(best) == ds.labels[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace

ProxyResult proxy_performance(const ArchitectureSpec& arch, const data::Dataset& local_data,
                              const ProxyBudget& budget, std::uint64_t seed) {
    if (budget.epochs < 0 || budget.batch < 1) {
        throw ParamError("proxy_performance: invalid budget");
    }
    Rng rng(derive_seed(seed, {stream_tag("proxy")}));
    nn::Model model = nn::Model::init(arch, derive_seed(seed, {stream_tag("proxy_init")}));

    ProxyResult result;
    const long long forward_flops = cost_profile(arch, 1).flops_per_sample;
    const Eigen::Index n = local_data.size();
    if (n < 10) {
        result.used_train_fallback = true;
        result.train_flops = brief_train(model, local_data, budget, rng);
        result.accuracy = accuracy_on(model, local_data);
        result.eval_flops = forward_flops * n;
        return result;
    }

    // 80/20 train/held-out split, seeded.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t val_count = std::max<std::size_t>(1, order.size() / 5);
    const std::vector<int> val_rows(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(val_count));
    const std::vector<int> train_rows(order.begin() + static_cast<std::ptrdiff_t>(val_count),
                                      order.end());
    const data::Dataset train = data::subset(local_data, train_rows);
    const data::Dataset val = data::subset(local_data, val_rows);

    result.train_flops = brief_train(model, train, budget, rng);
    result.accuracy = accuracy_on(model, val);
    result.eval_flops = forward_flops * val.size();
    return result;
}

std::size_t select_from_scored(const std::vector<CandidateEvaluation>& evaluated,
                               int prev_index) {
    if (evaluated.empty()) {
        throw ParamError("select_from_scored: nothing evaluated");
    }
    double best_score = evaluated.front().score;
    for (const auto& eval : evaluated) {
        best_score = std::max(best_score, eval.score);
    }
    // Retain the previous architecture unless something strictly beats it.
    if (prev_index >= 0 &&
        evaluated[static_cast<std::size_t>(prev_index)].score == best_score) {
        return static_cast<std::size_t>(prev_index);
    }
    std::size_t winner = evaluated.size();
    for (std::size_t i = 0; i < evaluated.size(); ++i) {
        if (evaluated[i].score != best_score) {
            continue;
        }
        if (winner == evaluated.size()) {
            winner = i;
            continue;
        }
        const long long params_i = cost_profile(evaluated[i].arch, 1).params;
        const long long params_w = cost_profile(evaluated[winner].arch, 1).params;
        if (params_i < params_w ||
            (params_i == params_w && evaluated[i].arch.id < evaluated[winner].arch.id)) {
            winner = i;
        }
    }
    return winner;
}

namespace {

// Grid coordinates used for neighborhood refinement: depth plus the rank of
// the leading width among the space's distinct leading widths.
std::pair<int, int> grid_coords(const SearchSpace& space, const ArchitectureSpec& arch) {
    std::set<int> widths;
    for (const auto& cand : space.candidates) {
        widths.insert(cand.hidden_widths.front());
    }
    int rank = 0;
    for (const int w : widths) {
        if (w >= arch.hidden_widths.front()) {
            break;
        }
        ++rank;
    }
    return {arch.depth(), rank};
}

}  // namespace

ArchitectureSpec select_architecture(const SearchSpace& space, const data::Dataset& local_data,
                                     double lambda, const ProxyBudget& budget,
                                     std::uint64_t seed, const ArchitectureSpec* prev,
                                     SelectionTrace* trace) {
    if (space.candidates.empty()) {
        throw ParamError("select_architecture: empty search space");
    }
    if (lambda < 0.0) {
        throw ParamError("select_architecture: lambda must be >= 0");
    }
    const int k = std::min<int>(space.subset_size, static_cast<int>(space.candidates.size()));

    // Sample the round subset: `prev` always enters; half of the remaining
    // slots prefer its grid neighborhood, the rest draw uniformly.
    Rng rng(derive_seed(seed, {stream_tag("nas_subset")}));
    std::vector<std::size_t> chosen;
    std::vector<bool> taken(space.candidates.size(), false);
    int prev_slot = -1;
    if (prev != nullptr) {
        for (std::size_t i = 0; i < space.candidates.size(); ++i) {
            if (space.candidates[i].id == prev->id) {
                taken[i] = true;
                chosen.push_back(i);
                prev_slot = 0;
                break;
            }
        }
    }
    if (prev_slot >= 0 && static_cast<int>(chosen.size()) < k) {
        const auto [prev_depth, prev_rank] = grid_coords(space, *prev);
        std::vector<std::size_t> neighborhood;
        for (std::size_t i = 0; i < space.candidates.size(); ++i) {
            if (taken[i]) {
                continue;
            }
            const auto [depth, rank] = grid_coords(space, space.candidates[i]);
            if (std::abs(depth - prev_depth) <= space.refine_radius &&
                std::abs(rank - prev_rank) <= space.refine_radius) {
                neighborhood.push_back(i);
            }
        }
        rng.shuffle(neighborhood);
        const int near_slots = std::min<int>((k - 1 + 1) / 2, static_cast<int>(neighborhood.size()));
        for (int s = 0; s < near_slots && static_cast<int>(chosen.size()) < k; ++s) {
            taken[neighborhood[static_cast<std::size_t>(s)]] = true;
            chosen.push_back(neighborhood[static_cast<std::size_t>(s)]);
        }
    }
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < space.candidates.size(); ++i) {
        if (!taken[i]) {
            rest.push_back(i);
        }
    }
    rng.shuffle(rest);
    for (std::size_t i = 0; static_cast<int>(chosen.size()) < k && i < rest.size(); ++i) {
        chosen.push_back(rest[i]);
    }

    // Evaluations are independent; reduce in candidate-id order so any
    // execution schedule yields the same argmax input.
    std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
        return space.candidates[a].id < space.candidates[b].id;
    });

    std::vector<CandidateEvaluation> evaluated;
    evaluated.reserve(chosen.size());
    for (const std::size_t idx : chosen) {
        const ArchitectureSpec& cand = space.candidates[idx];
        const std::uint64_t cand_seed = derive_seed(seed, {stream_tag(cand.id)});
        const ProxyResult proxy = proxy_performance(cand, local_data, budget, cand_seed);
        CandidateEvaluation eval;
        eval.arch = cand;
        eval.proxy_accuracy = proxy.accuracy;
        eval.flops_spent = proxy.train_flops + proxy.eval_flops;
        eval.mem_bytes = cost_profile(cand, budget.batch).mem_bytes;
        evaluated.push_back(std::move(eval));
    }

    // Min-max normalize each cost axis over the subset; cost scalar is the
    // mean of the normalized flops/params/mem.
    const auto axis = [&](auto getter) {
        std::vector<double> values;
        values.reserve(evaluated.size());
        for (const auto& eval : evaluated) {
            values.push_back(static_cast<double>(getter(cost_profile(eval.arch, budget.batch))));
        }
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        const double span = *hi - *lo;
        if (span <= 0.0) {
            std::fill(values.begin(), values.end(), 0.0);
        } else {
            for (auto& v : values) {
                v = (v - *lo) / span;
            }
        }
        return values;
    };
    const std::vector<double> flops_norm =
        axis([](const CostProfile& c) { return c.flops_per_sample; });
    const std::vector<double> params_norm = axis([](const CostProfile& c) { return c.params; });
    const std::vector<double> mem_norm = axis([](const CostProfile& c) { return c.mem_bytes; });

    int prev_index = -1;
    for (std::size_t i = 0; i < evaluated.size(); ++i) {
        evaluated[i].cost = (flops_norm[i] + params_norm[i] + mem_norm[i]) / 3.0;
        evaluated[i].score = evaluated[i].proxy_accuracy - lambda * evaluated[i].cost;
        if (prev != nullptr && evaluated[i].arch.id == prev->id) {
            prev_index = static_cast<int>(i);
        }
    }

    const std::size_t winner = select_from_scored(evaluated, prev_index);
    ArchitectureSpec result = evaluated[winner].arch;
    if (trace != nullptr) {
        trace->evaluated = std::move(evaluated);
    }
    return result;
}

}  // namespace fedkd::nas
