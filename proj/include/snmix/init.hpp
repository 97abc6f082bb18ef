#pragma once

#include <cstdint>
#include <span>

#include "snmix/sn_core.hpp"

namespace snmix {

enum class InitKind { KMeansMoments, TrueValue, Perturbed };

struct InitReport {
    SnMixture psi0;
    InitKind scheme = InitKind::KMeansMoments;
    std::uint64_t seed = 0;
};

inline constexpr double kInitMinSigma2 = 1e-6;
inline constexpr double kInitMaxAbsLambda = 50.0;
/// Largest |skewness| a skew-normal law can reach.
inline constexpr double kSnMaxSkewness = 0.9952717464311565;

/// Method-of-moments skew-normal fit to (mean, variance, skewness); the
/// skewness is clamped to 0.99 of the attainable range.
SnComponent sn_from_moments(double mean, double variance, double skewness);

/// K-means (k-means++ seeding) partition followed by moment matching per cluster.
InitReport kmeans_moments_init(std::span<const double> data, std::size_t p, std::uint64_t seed);

InitReport true_value_init(const SnMixture& psi_true);

/// p starting components spread round-robin over the sorted true components,
/// locations jittered by N(0, 0.1^2) and parent weights split evenly.
InitReport perturbed_init(const SnMixture& psi_true, std::size_t p, std::uint64_t seed);

}  // namespace snmix
