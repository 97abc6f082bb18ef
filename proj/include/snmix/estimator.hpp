#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "snmix/sn_core.hpp"

namespace snmix {

/// A component carries (numerically) no responsibility, so its CM updates are undefined.
class DegenerateComponentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The modified estimator cannot be computed for this fit.
class ValidityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-observation, per-component conditional expectations from the E-step.
/// Row-major n x p storage; row j is observation j.
struct EStepCache {
    std::size_t n = 0;
    std::size_t p = 0;
    std::vector<double> alpha;  // P(Z_ij = 1 | x_j)
    std::vector<double> beta;   // E[tau_j | x_j, Z_ij = 1]
    std::vector<double> gamma;  // E[tau_j^2 | x_j, Z_ij = 1]

    double a(std::size_t j, std::size_t i) const { return alpha[j * p + i]; }
    double b(std::size_t j, std::size_t i) const { return beta[j * p + i]; }
    double g(std::size_t j, std::size_t i) const { return gamma[j * p + i]; }
};

enum class Algorithm { ECM, ECME };

struct KMeansMomentsInit {
    std::uint64_t seed = 0;
};
struct TrueValueInit {
    SnMixture psi;
};
struct ExplicitInit {
    SnMixture psi;
};
struct PerturbedInit {
    SnMixture psi;
    std::uint64_t seed = 0;
};
using InitScheme = std::variant<KMeansMomentsInit, TrueValueInit, ExplicitInit, PerturbedInit>;

struct FitConfig {
    Algorithm algorithm = Algorithm::ECM;
    PenaltySpec penalty;
    int max_iter = 2000;
    double rel_tol = 1e-6;
    InitScheme init = KMeansMomentsInit{};
    /// Per starting component: a fixed shape value, or nullopt to estimate it.
    /// Empty means every shape is estimated. A component frozen at exactly 0 is
    /// a plain normal component.
    std::vector<std::optional<double>> frozen_lambda;
    /// Evaluate q_function around every CM-step and count decreases.
    bool check_q_ascent = false;

    void validate() const;
};

struct FitResult {
    SnMixture psi;  // label-sorted
    std::vector<double> objective_trace;
    int iterations = 0;
    bool converged = false;
    bool degenerate_sigma = false;   // some sigma2 < 1e-10
    bool divergent_lambda = false;   // some |lambda| > 100
    bool stopped_at_singularity = false;
    bool held_component = false;     // some component had negligible responsibility
    int lambda_fallbacks = 0;        // CM-step 4 found no interior root
    int q_ascent_violations = 0;

    double objective() const { return objective_trace.back(); }
};

inline constexpr double kSigma2DegenerateThreshold = 1e-10;
inline constexpr double kLambdaDivergentThreshold = 100.0;
inline constexpr double kSingularSigma2 = 1e-12;
inline constexpr double kSingularLambda = 1e6;
inline constexpr double kHoldResponsibility = 1e-8;

EStepCache e_step(std::span<const double> data, const SnMixture& psi);

/// Penalized expected complete-data log-likelihood Q(psi | psi_t), with the
/// cache computed at psi_t.
double q_function(const SnMixture& psi, std::span<const double> data, const EStepCache& cache,
                  const PenaltySpec& pen);

std::vector<double> cm_step_pi(const EStepCache& cache);
std::vector<double> cm_step_mu(std::span<const double> data, const EStepCache& cache,
                               std::span<const double> lambda_current);
std::vector<double> cm_step_sigma2(std::span<const double> data, const EStepCache& cache,
                                   std::span<const double> mu_new, std::span<const double> lambda_current,
                                   const PenaltySpec& pen);

struct LambdaStep {
    std::vector<double> lambda;
    std::vector<bool> fallback;  // no root in (-1, 1): endpoint scan used
};

/// Shape update through the cubic in delta; pen's lambda penalty must be Proposed or None.
LambdaStep cm_step_lambda(std::span<const double> data, const EStepCache& cache, std::span<const double> mu_new,
                          std::span<const double> sigma2_new, const PenaltySpec& pen);
LambdaStep cm_step_lambda_azzalini(std::span<const double> data, const EStepCache& cache,
                                   std::span<const double> mu_new, std::span<const double> sigma2_new, double c1,
                                   double c2);

/// Jointly maximizes the penalized observed-data log-likelihood over the shape
/// parameters, holding weights, locations and scales at psi_partial's values.
/// Components flagged in `fixed` keep their shape. A local bracket search is
/// always run; `global_scan` adds a coarse grid over the whole shape range.
std::vector<double> cml_step(std::span<const double> data, const SnMixture& psi_partial, const PenaltySpec& pen,
                             double rel_tol = 1e-6, std::span<const bool> fixed = {}, bool global_scan = true);

/// Components ordered by ascending location.
SnMixture label_sort(const SnMixture& psi);

FitResult fit(std::span<const double> data, std::size_t p, const FitConfig& cfg);

/// Runs `starts` fits, replacing the seed of a KMeans or Perturbed init by a
/// seed derived from (seed, start index), and returns the best final objective.
FitResult fit_best_of(std::span<const double> data, std::size_t p, const FitConfig& cfg, int starts,
                      std::uint64_t seed);

struct MeResult {
    std::vector<double> lambda;  // ME shape vector in psi's order
    SnMixture psi;               // profile fit at the accepted shapes
    int nu = 0;                  // number of |lambda| >= 30
    double shrink = 1.0;         // common proportional factor applied to flagged shapes
    double statistic = 0.0;      // 2 (l(mle) - l(profile))
    double critical = 0.0;       // chi-square quantile
};

inline constexpr double kMeShapeThreshold = 30.0;

/// Modified estimator: shrinks shapes with |lambda| >= 30 toward zero as far as
/// a profile likelihood-ratio test at `level` does not reject.
MeResult profile_lrt_me(std::span<const double> data, const FitResult& mle_fit, double level = 0.05);

}  // namespace snmix
