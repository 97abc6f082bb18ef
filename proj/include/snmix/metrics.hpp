#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "snmix/sn_core.hpp"

namespace snmix {

/// A point (mu, sigma2, lambda) of the component parameter space.
struct ThetaPoint {
    double mu = 0.0;
    double sigma2 = 0.0;
    double lambda = 0.0;
};

/// Box over the transformed parameter space (mu, log(sigma2)/5, T(lambda)/2),
/// T(lambda) = sign(lambda) log(1 + |lambda|).
struct BoxRegion {
    std::array<double, 3> lower{-5.0, -15.0, -10.0};
    std::array<double, 3> upper{10.0, 1.0, 5.0};
    int resolution = 64;

    void validate() const;
};

struct DstarValue {
    double value = 0.0;
    bool clamped = false;  // some atom fell outside the region and was moved to its boundary
};

struct DegeneracyFlags {
    bool sigma_degenerate = false;
    bool lambda_divergent = false;
    double min_sigma2 = 0.0;
    double max_abs_lambda = 0.0;
};

struct ParamError {
    std::string name;
    double bias = 0.0;
    double rmse = 0.0;
};

/// Psi(theta) = sum of weights of atoms componentwise <= theta.
double mixing_cdf(const SnMixture& psi, ThetaPoint theta);

/// Integral of |Psi_a - Psi_b| exp(-|mu| - sigma2 - |lambda|) over R x R+ x R.
double distance_D(const SnMixture& a, const SnMixture& b, int grid_resolution = 64);

/// Integral of |Psi_a - Psi_b| over the region in transformed coordinates.
DstarValue distance_Dstar(const SnMixture& a, const SnMixture& b, const BoxRegion& region = {});

ThetaPoint dstar_transform(ThetaPoint theta) noexcept;

DegeneracyFlags degeneracy_flags(const SnMixture& psi);

/// Bias and RMSE per coordinate, ordered (mu_k, sigma2_k, lambda_k, pi_k) for
/// k = 1..p. With log_sigma the scale coordinates are compared as log(sigma2).
std::vector<ParamError> bias_rmse(std::span<const SnMixture> estimates, const SnMixture& truth, bool log_sigma);

}  // namespace snmix
