#include "fedkd/rng.hpp"

#include "fedkd/types.hpp"

#include <cmath>
#include <numbers>

namespace fedkd {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t stream_tag(std::string_view name) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t state = base;
    std::uint64_t out = splitmix64(state);
    for (const std::uint64_t p : parts) {
        state ^= p;
        out = splitmix64(state);
    }
    return out;
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t state = seed;
    for (auto& word : s_) {
        word = splitmix64(state);
    }
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) {
        throw ParamError("Rng::below: n must be positive");
    }
    // Lemire multiply-shift reduction; deterministic and unbiased enough
    // for simulation use without a rejection loop.
    const unsigned __int128 product =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    return static_cast<std::uint64_t>(product >> 64);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    // Box-Muller; u1 shifted away from zero so log stays finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double alpha) {
    if (alpha <= 0.0) {
        throw ParamError("Rng::gamma: alpha must be positive");
    }
    if (alpha < 1.0) {
        // Boost with Gamma(alpha + 1) and a uniform power.
        const double u = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) {
            continue;
        }
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) {
            return d * v;
        }
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return d * v;
        }
    }
}

std::vector<double> Rng::dirichlet(double alpha, int k) {
    if (k < 1) {
        throw ParamError("Rng::dirichlet: k must be >= 1");
    }
    std::vector<double> draws(static_cast<std::size_t>(k));
    double total = 0.0;
    for (auto& value : draws) {
        value = gamma(alpha);
        total += value;
    }
    if (total <= 0.0) {
        // All-zero draws can only happen by underflow at tiny alpha;
        // fall back to a one-hot at a uniformly chosen coordinate.
        const std::size_t hot = static_cast<std::size_t>(below(static_cast<std::uint64_t>(k)));
        for (std::size_t i = 0; i < draws.size(); ++i) {
            draws[i] = (i == hot) ? 1.0 : 0.0;
        }
        return draws;
    }
    for (auto& value : draws) {
        value /= total;
    }
    return draws;
}

}  // namespace fedkd
