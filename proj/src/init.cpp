#include "snmix/init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "snmix/estimator.hpp"
#include "snmix/sampler.hpp"

namespace snmix {

namespace {

constexpr int kLloydIterations = 100;
constexpr int kReseedAttempts = 10;

std::vector<double> kmeanspp_centers(std::span<const double> data, std::size_t k, RngHandle& rng) {
    const std::size_t n = data.size();
    std::vector<double> centers;
    centers.reserve(k);
    centers.push_back(data[rng.next_u64() % n]);
    std::vector<double> d2(n);
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (data[j] - c) * (data[j] - c));
            d2[j] = best;
            total += best;
        }
        if (!(total > 0.0)) {
            centers.push_back(data[rng.next_u64() % n]);
            continue;
        }
        const double u = rng.uniform() * total;
        double cum = 0.0;
        std::size_t pick = n - 1;
        for (std::size_t j = 0; j < n; ++j) {
            cum += d2[j];
            if (u < cum) {
                pick = j;
                break;
            }
        }
        centers.push_back(data[pick]);
    }
    return centers;
}

std::vector<std::size_t> assign(std::span<const double> data, const std::vector<double>& centers) {
    std::vector<std::size_t> label(data.size());
    for (std::size_t j = 0; j < data.size(); ++j) {
        std::size_t best = 0;
        double bd = std::abs(data[j] - centers[0]);
        for (std::size_t c = 1; c < centers.size(); ++c) {
            const double d = std::abs(data[j] - centers[c]);
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        label[j] = best;
    }
    return label;
}

// Lloyd iterations; returns false if a cluster ends up empty.
bool lloyd(std::span<const double> data, std::vector<double>& centers, std::vector<std::size_t>& label) {
    const std::size_t k = centers.size();
    for (int it = 0; it < kLloydIterations; ++it) {
        label = assign(data, centers);
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t j = 0; j < data.size(); ++j) {
            sum[label[j]] += data[j];
            ++count[label[j]];
        }
        if (std::any_of(count.begin(), count.end(), [](std::size_t c) { return c == 0; })) return false;
        bool moved = false;
        for (std::size_t c = 0; c < k; ++c) {
            const double next = sum[c] / static_cast<double>(count[c]);
            moved = moved || next != centers[c];
            centers[c] = next;
        }
        if (!moved) break;
    }
    label = assign(data, centers);
    std::vector<std::size_t> count(k, 0);
    for (auto l : label) ++count[l];
    return std::none_of(count.begin(), count.end(), [](std::size_t c) { return c == 0; });
}

// Fills empty clusters by splitting the largest cluster at its median.
void split_largest(std::span<const double> data, std::size_t k, std::vector<std::size_t>& label) {
    for (;;) {
        std::vector<std::vector<std::size_t>> members(k);
        for (std::size_t j = 0; j < label.size(); ++j) members[label[j]].push_back(j);
        const auto empty = std::find_if(members.begin(), members.end(), [](const auto& m) { return m.empty(); });
        if (empty == members.end()) return;
        auto largest = std::max_element(members.begin(), members.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        auto& big = *largest;
        std::sort(big.begin(), big.end(), [&](std::size_t a, std::size_t b) { return data[a] < data[b]; });
        const std::size_t target = static_cast<std::size_t>(empty - members.begin());
        for (std::size_t m = big.size() / 2; m < big.size(); ++m) label[big[m]] = target;
    }
}

SnComponent clamp_start(SnComponent c) {
    c.sigma2 = std::max(c.sigma2, kInitMinSigma2);
    c.lambda = std::clamp(c.lambda, -kInitMaxAbsLambda, kInitMaxAbsLambda);
    return c;
}

}  // namespace

SnComponent sn_from_moments(double mean, double variance, double skewness) {
    const double b = std::sqrt(2.0 / std::numbers::pi);
    const double g = std::clamp(skewness, -0.99 * kSnMaxSkewness, 0.99 * kSnMaxSkewness);
    double lambda = 0.0;
    if (g != 0.0) {
        const double r = std::cbrt(2.0 * std::abs(g) / (4.0 - std::numbers::pi));
        const double delta = std::copysign(r / (b * std::sqrt(1.0 + r * r)), g);
        lambda = lambda_of_delta(std::clamp(delta, -1.0 + 1e-12, 1.0 - 1e-12));
    }
    lambda = std::clamp(lambda, -kInitMaxAbsLambda, kInitMaxAbsLambda);
    const double delta = delta_of_lambda(lambda);
    SnComponent c;
    c.lambda = lambda;
    c.sigma2 = std::max(variance / (1.0 - b * b * delta * delta), kInitMinSigma2);
    c.mu = mean - std::sqrt(c.sigma2) * delta * b;
    return c;
}

InitReport kmeans_moments_init(std::span<const double> data, std::size_t p, std::uint64_t seed) {
    if (p == 0) throw DomainError("number of clusters must be positive");
    if (data.size() < 3 * p) throw DomainError("K-means start needs at least 3 observations per component");
    RngHandle rng(seed);

    std::vector<std::size_t> label;
    bool ok = false;
    for (int attempt = 0; attempt < kReseedAttempts && !ok; ++attempt) {
        auto centers = kmeanspp_centers(data, p, rng);
        ok = lloyd(data, centers, label);
    }
    if (!ok) split_largest(data, p, label);

    const double n = static_cast<double>(data.size());
    SnMixture psi;
    for (std::size_t c = 0; c < p; ++c) {
        double cnt = 0.0, sum = 0.0;
        for (std::size_t j = 0; j < data.size(); ++j)
            if (label[j] == c) {
                cnt += 1.0;
                sum += data[j];
            }
        const double mean = sum / cnt;
        double m2 = 0.0, m3 = 0.0;
        for (std::size_t j = 0; j < data.size(); ++j)
            if (label[j] == c) {
                const double d = data[j] - mean;
                m2 += d * d;
                m3 += d * d * d;
            }
        const double var = cnt > 1.0 ? m2 / (cnt - 1.0) : 0.0;
        m2 /= cnt;
        m3 /= cnt;
        const double skew = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
        psi.weights.push_back(cnt / n);
        psi.components.push_back(clamp_start(sn_from_moments(mean, var, skew)));
    }
    return {label_sort(psi), InitKind::KMeansMoments, seed};
}

InitReport true_value_init(const SnMixture& psi_true) {
    SnMixture psi = psi_true;
    const double total = std::accumulate(psi.weights.begin(), psi.weights.end(), 0.0);
    if (std::abs(total - 1.0) <= 1e-9 && total > 0.0)
        for (double& w : psi.weights) w /= total;
    psi.validate();
    return {label_sort(psi), InitKind::TrueValue, 0};
}

InitReport perturbed_init(const SnMixture& psi_true, std::size_t p, std::uint64_t seed) {
    psi_true.validate();
    const SnMixture truth = label_sort(psi_true);
    const std::size_t p0 = truth.order();
    if (p < p0) throw DomainError("perturbed start needs p >= number of true components");
    RngHandle rng(seed);

    std::vector<std::size_t> omega(p0, 0);
    for (std::size_t i = 0; i < p; ++i) ++omega[i % p0];

    SnMixture psi;
    for (std::size_t i = 0; i < p; ++i) {
        const std::size_t j = i % p0;
        SnComponent c = truth.components[j];
        c.mu += 0.1 * rng.gaussian();
        psi.components.push_back(clamp_start(c));
        psi.weights.push_back(truth.weights[j] / static_cast<double>(omega[j]));
    }
    const double total = std::accumulate(psi.weights.begin(), psi.weights.end(), 0.0);
    for (double& w : psi.weights) w /= total;
    return {label_sort(psi), InitKind::Perturbed, seed};
}

}  // namespace snmix
