#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedkd {

/// A candidate dense-network shape: hidden widths plus fixed input/output
/// dimensions. The id is the canonical "w0-w1-..." string and doubles as
/// the deterministic tie-break key.
struct ArchitectureSpec {
    std::vector<int> hidden_widths;
    int input_dim = 0;
    int num_classes = 0;
    std::string id;

    int depth() const { return static_cast<int>(hidden_widths.size()); }

    static ArchitectureSpec make(std::vector<int> hidden_widths, int input_dim, int num_classes);
};

/// Deterministic analytic resource profile of an architecture.
/// flops counts multiply-accumulates of all affine layers (2·out·in each);
/// mem counts parameters plus peak simultaneous activations at batch size B,
/// 8 bytes per value.
struct CostProfile {
    long long flops_per_sample = 0;
    long long params = 0;
    long long mem_bytes = 0;
};

CostProfile cost_profile(const ArchitectureSpec& arch, int batch_size);

/// Layer dimension chain (input_dim, w0, w1, ..., num_classes).
std::vector<int> layer_dims(const ArchitectureSpec& arch);

}  // namespace fedkd
