#include "fedkd/arch.hpp"

#include "fedkd/types.hpp"

#include <algorithm>

namespace fedkd {

ArchitectureSpec ArchitectureSpec::make(std::vector<int> hidden_widths, int input_dim,
                                        int num_classes) {
    if (input_dim < 1 || num_classes < 2) {
        throw ParamError("ArchitectureSpec: need input_dim >= 1 and num_classes >= 2");
    }
    if (hidden_widths.empty()) {
        throw ParamError("ArchitectureSpec: at least one hidden layer");
    }
    if (std::any_of(hidden_widths.begin(), hidden_widths.end(), [](int w) { return w < 1; })) {
        throw ParamError("ArchitectureSpec: widths must be positive");
    }
    ArchitectureSpec spec;
    spec.hidden_widths = std::move(hidden_widths);
    spec.input_dim = input_dim;
    spec.num_classes = num_classes;
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
        if (i > 0) {
            spec.id += '-';
        }
        spec.id += std::to_string(spec.hidden_widths[i]);
    }
    return spec;
}

std::vector<int> layer_dims(const ArchitectureSpec& arch) {
    std::vector<int> dims;
    dims.reserve(arch.hidden_widths.size() + 2);
    dims.push_back(arch.input_dim);
    dims.insert(dims.end(), arch.hidden_widths.begin(), arch.hidden_widths.end());
    dims.push_back(arch.num_classes);
    return dims;
}

CostProfile cost_profile(const ArchitectureSpec& arch, int batch_size) {
    if (batch_size < 1) {
        throw ParamError("cost_profile: batch_size must be >= 1");
    }
    const std::vector<int> dims = layer_dims(arch);
    CostProfile profile;
    long long peak_act = 0;
    for (std::size_t l = 1; l < dims.size(); ++l) {
        const long long fan_in = dims[l - 1];
        const long long fan_out = dims[l];
        profile.flops_per_sample += 2 * fan_out * fan_in;
        profile.params += fan_out * fan_in + fan_out;
        peak_act = std::max(peak_act, static_cast<long long>(batch_size) * (fan_in + fan_out));
    }
    profile.mem_bytes = 8 * (profile.params + peak_act);
    return profile;
}

}  // namespace fedkd
