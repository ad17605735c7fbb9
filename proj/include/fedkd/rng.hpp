#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace fedkd {

/// splitmix64 step; the reference generator used for seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

/// FNV-1a hash of a string tag, used to label derived RNG streams.
std::uint64_t stream_tag(std::string_view name);

/// Deterministically combines a base seed with a list of components
/// (client ids, round indices, stream tags). Equal inputs give equal
/// seeds on every platform.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

/// Deterministic pseudo-random stream (xoshiro256++ seeded via splitmix64).
/// All distributions are hand-rolled on top of next_u64 so sequences are
/// identical across standard libraries and platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (consumes two uniforms).
    double normal();

    /// Gamma(alpha, 1) via Marsaglia-Tsang; alpha > 0.
    double gamma(double alpha);

    /// Symmetric Dirichlet(alpha * 1_k) sample; sums to 1.
    std::vector<double> dirichlet(double alpha, int k);

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t s_[4];
};

}  // namespace fedkd
