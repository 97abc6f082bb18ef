#include "snmix/sampler.hpp"

#include <cmath>

namespace snmix {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

RngHandle::RngHandle(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

double RngHandle::gaussian() { return normal_(engine_); }

double RngHandle::uniform() { return unit_(engine_); }

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

double sample_half_normal(double sigma, RngHandle& rng) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("half-normal scale must be positive");
    return sigma * std::abs(rng.gaussian());
}

double sample_sn(const SnComponent& theta, RngHandle& rng) {
    theta.validate();
    const double sigma = std::sqrt(theta.sigma2);
    const double delta = delta_of_lambda(theta.lambda);
    const double tau = sample_half_normal(sigma, rng);
    const double cond_sd = sigma * std::sqrt(one_minus_delta_sq(theta.lambda));
    return theta.mu + delta * tau + cond_sd * rng.gaussian();
}

std::vector<double> sample_mixture(const SnMixture& psi, std::size_t n, RngHandle& rng,
                                   std::vector<std::size_t>* labels) {
    psi.validate();
    if (n == 0) throw DomainError("sample size must be positive");
    std::vector<double> out;
    out.reserve(n);
    if (labels) labels->assign(n, 0);
    const std::size_t last = psi.order() - 1;
    for (std::size_t i = 0; i < n; ++i) {
        // Single categorical draw by inverse CDF over the weights.
        const double u = rng.uniform();
        std::size_t k = 0;
        double cum = psi.weights[0];
        while (k < last && u >= cum) cum += psi.weights[++k];
        while (k > 0 && psi.weights[k] == 0.0) --k;
        if (labels) (*labels)[i] = k;
        out.push_back(sample_sn(psi.components[k], rng));
    }
    return out;
}

std::vector<double> sample_mixture(const SnMixture& psi, std::size_t n, RngHandle& rng) {
    return sample_mixture(psi, n, rng, nullptr);
}

}  // namespace snmix
