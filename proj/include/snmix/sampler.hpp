#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "snmix/sn_core.hpp"

namespace snmix {

/// Owned random stream. Same seed, same build => identical draws.
class RngHandle {
public:
    explicit RngHandle(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }

    double gaussian();
    double uniform();
    std::uint64_t next_u64() { return engine_(); }
    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

/// Order-independent child seed for stream `index` under `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept;

double sample_half_normal(double sigma, RngHandle& rng);
double sample_sn(const SnComponent& theta, RngHandle& rng);
std::vector<double> sample_mixture(const SnMixture& psi, std::size_t n, RngHandle& rng);

/// As sample_mixture, also returning the component index drawn for each value.
std::vector<double> sample_mixture(const SnMixture& psi, std::size_t n, RngHandle& rng,
                                   std::vector<std::size_t>* labels);

}  // namespace snmix
