#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace snmix {

/// Raised when a parameter or input lies outside the domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// One skew-normal component SN(mu, sigma2, lambda).
struct SnComponent {
    double mu = 0.0;
    double sigma2 = 1.0;
    double lambda = 0.0;

    bool valid() const noexcept;
    /// Throws DomainError unless valid().
    void validate() const;
};

/// Finite mixture of skew-normal components. Also serves as the discrete
/// mixing distribution placing mass weights[k] on components[k].
struct SnMixture {
    std::vector<double> weights;
    std::vector<SnComponent> components;

    SnMixture() = default;
    SnMixture(std::vector<double> w, std::vector<SnComponent> c);

    std::size_t order() const noexcept { return components.size(); }
    bool valid() const noexcept;
    void validate() const;
};

struct NoSigmaPenalty {};

/// -a_n (s_n2 / sigma^2 + log(sigma^2 / s_n2) - 1)
struct ProposedSigmaPenalty {
    double a_n = 0.0;
    double s_n2 = 1.0;
};

struct NoLambdaPenalty {};

/// -b_n (lambda^2 - log(1 + lambda^2))
struct ProposedLambdaPenalty {
    double b_n = 0.0;
};

/// -c1 log(1 + c2 lambda^2)
struct AzzaliniLambdaPenalty {
    double c1 = 0.876;
    double c2 = 0.856;
};

using SigmaPenalty = std::variant<NoSigmaPenalty, ProposedSigmaPenalty>;
using LambdaPenalty = std::variant<NoLambdaPenalty, ProposedLambdaPenalty, AzzaliniLambdaPenalty>;

struct PenaltySpec {
    SigmaPenalty sigma_penalty = NoSigmaPenalty{};
    LambdaPenalty lambda_penalty = NoLambdaPenalty{};

    void validate() const;

    /// Penalty contribution of a single component.
    double sigma_term(double sigma2) const;
    double lambda_term(double lambda) const;
    double total(const SnMixture& psi) const;

    bool is_none() const noexcept;

    static PenaltySpec none() { return {}; }
    /// Both recommended penalties with a_n = c_a/n, b_n = c_b/log n and
    /// s_n2 the sample variance of data.
    static PenaltySpec proposed(std::span<const double> data, double c_a = 1.0, double c_b = 0.05);
    static PenaltySpec azzalini(double c1 = 0.876, double c2 = 0.856);
    /// Proposed scale penalty combined with the Azzalini shape penalty.
    static PenaltySpec mple(std::span<const double> data, double c_a = 1.0, double c1 = 0.876, double c2 = 0.856);
};

struct Tuning {
    double a_n;
    double b_n;
};

inline constexpr double kDefaultCa = 1.0;
inline constexpr double kDefaultCb = 0.05;
inline constexpr double kAzzaliniC1 = 0.876;
inline constexpr double kAzzaliniC2 = 0.856;

// Normal building blocks.
double log_norm_pdf(double z) noexcept;
double norm_cdf(double z) noexcept;
/// log Phi(z), finite for every finite z.
double log_norm_cdf(double z) noexcept;
/// phi(t)/Phi(t).
double inverse_mills(double t) noexcept;

double delta_of_lambda(double lambda) noexcept;
/// 1 - delta(lambda)^2 = 1/(1 + lambda^2), without cancellation.
double one_minus_delta_sq(double lambda) noexcept;
double lambda_of_delta(double delta) noexcept;

double sn_logpdf(double x, const SnComponent& theta);
double mixture_logpdf(double x, const SnMixture& psi);
double loglik(std::span<const double> data, const SnMixture& psi);

double penalty_sigma(double sigma2, double a_n, double s_n2);
double penalty_lambda(double lambda, double b_n) noexcept;
double penalty_lambda_azzalini(double lambda, double c1, double c2);

double penalized_loglik(std::span<const double> data, const SnMixture& psi, const PenaltySpec& pen);

Tuning tuning(long long n, double c_a = kDefaultCa, double c_b = kDefaultCb);

/// Sample variance with divisor n - 1.
double sample_variance(std::span<const double> data);

namespace detail {
/// sn_logpdf without parameter validation, for inner loops over checked inputs.
double sn_logpdf_unchecked(double x, const SnComponent& theta) noexcept;
double mixture_logpdf_unchecked(double x, const SnMixture& psi) noexcept;
}  // namespace detail

/// log(sum exp(v)) with the maximum shifted out; -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> v) noexcept;

}  // namespace snmix
