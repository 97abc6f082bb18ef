#include "snmix/sn_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace snmix {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 log(2 pi)
constexpr double kLog2 = std::numbers::ln2;

// Laplace continued fraction for the Mills ratio Q(x)/phi(x), x > 0:
// 1/(x + 1/(x + 2/(x + 3/(x + ...)))). Evaluated backwards; for x >= 5 the
// tail beyond 120 levels is below double precision.
double mills_ratio_cf(double x) noexcept {
    double acc = x;
    for (int k = 120; k >= 1; --k) acc = x + k / acc;
    return 1.0 / acc;
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

bool SnComponent::valid() const noexcept {
    return std::isfinite(mu) && std::isfinite(lambda) && std::isfinite(sigma2) && sigma2 > 0.0;
}

void SnComponent::validate() const {
    if (!valid()) throw DomainError("skew-normal component requires finite mu, lambda and sigma2 > 0");
}

SnMixture::SnMixture(std::vector<double> w, std::vector<SnComponent> c)
    : weights(std::move(w)), components(std::move(c)) {}

bool SnMixture::valid() const noexcept {
    if (components.empty() || weights.size() != components.size()) return false;
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) return false;
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) return false;
    return std::all_of(components.begin(), components.end(), [](const SnComponent& c) { return c.valid(); });
}

void SnMixture::validate() const {
    if (components.empty()) throw DomainError("mixture needs at least one component");
    if (weights.size() != components.size()) throw DomainError("mixture weights and components differ in length");
    if (!valid()) throw DomainError("mixture weights must be non-negative and sum to 1 with valid components");
}

void PenaltySpec::validate() const {
    std::visit(overloaded{[](const NoSigmaPenalty&) {},
                          [](const ProposedSigmaPenalty& p) {
                              if (!std::isfinite(p.a_n) || p.a_n < 0.0 || !std::isfinite(p.s_n2) || p.s_n2 <= 0.0)
                                  throw DomainError("sigma penalty needs a_n >= 0 and s_n2 > 0");
                          }},
               sigma_penalty);
    std::visit(overloaded{[](const NoLambdaPenalty&) {},
                          [](const ProposedLambdaPenalty& p) {
                              if (!std::isfinite(p.b_n) || p.b_n < 0.0)
                                  throw DomainError("lambda penalty needs b_n >= 0");
                          },
                          [](const AzzaliniLambdaPenalty& p) {
                              if (!std::isfinite(p.c1) || !std::isfinite(p.c2) || p.c1 < 0.0 || p.c2 <= 0.0)
                                  throw DomainError("Azzalini penalty needs c1 >= 0 and c2 > 0");
                          }},
               lambda_penalty);
}

double PenaltySpec::sigma_term(double sigma2) const {
    if (const auto* p = std::get_if<ProposedSigmaPenalty>(&sigma_penalty)) return penalty_sigma(sigma2, p->a_n, p->s_n2);
    return 0.0;
}

double PenaltySpec::lambda_term(double lambda) const {
    return std::visit(overloaded{[](const NoLambdaPenalty&) { return 0.0; },
                                 [&](const ProposedLambdaPenalty& p) { return penalty_lambda(lambda, p.b_n); },
                                 [&](const AzzaliniLambdaPenalty& p) {
                                     return p.c1 == 0.0 ? 0.0 : penalty_lambda_azzalini(lambda, p.c1, p.c2);
                                 }},
                      lambda_penalty);
}

double PenaltySpec::total(const SnMixture& psi) const {
    double sum = 0.0;
    for (const auto& c : psi.components) sum += sigma_term(c.sigma2) + lambda_term(c.lambda);
    return sum;
}

bool PenaltySpec::is_none() const noexcept {
    return std::holds_alternative<NoSigmaPenalty>(sigma_penalty) &&
           std::holds_alternative<NoLambdaPenalty>(lambda_penalty);
}

PenaltySpec PenaltySpec::proposed(std::span<const double> data, double c_a, double c_b) {
    const auto t = tuning(static_cast<long long>(data.size()), c_a, c_b);
    return {ProposedSigmaPenalty{t.a_n, sample_variance(data)}, ProposedLambdaPenalty{t.b_n}};
}

PenaltySpec PenaltySpec::azzalini(double c1, double c2) {
    return {NoSigmaPenalty{}, AzzaliniLambdaPenalty{c1, c2}};
}

PenaltySpec PenaltySpec::mple(std::span<const double> data, double c_a, double c1, double c2) {
    const auto t = tuning(static_cast<long long>(data.size()), c_a);
    return {ProposedSigmaPenalty{t.a_n, sample_variance(data)}, AzzaliniLambdaPenalty{c1, c2}};
}

double log_norm_pdf(double z) noexcept { return -kLogSqrt2Pi - 0.5 * z * z; }

double norm_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double log_norm_cdf(double z) noexcept {
    if (z >= 0.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
    if (z >= -20.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
    return log_norm_pdf(z) + std::log(mills_ratio_cf(-z));
}

double inverse_mills(double t) noexcept {
    if (t >= -5.0) {
        if (t > 40.0) return 0.0;
        return std::exp(log_norm_pdf(t)) / norm_cdf(t);
    }
    return 1.0 / mills_ratio_cf(-t);
}

double delta_of_lambda(double lambda) noexcept { return lambda / std::sqrt(1.0 + lambda * lambda); }

double one_minus_delta_sq(double lambda) noexcept { return 1.0 / (1.0 + lambda * lambda); }

double lambda_of_delta(double delta) noexcept { return delta / std::sqrt((1.0 - delta) * (1.0 + delta)); }

namespace detail {

double sn_logpdf_unchecked(double x, const SnComponent& theta) noexcept {
    const double sigma = std::sqrt(theta.sigma2);
    const double z = (x - theta.mu) / sigma;
    return kLog2 - 0.5 * std::log(theta.sigma2) + log_norm_pdf(z) + log_norm_cdf(theta.lambda * z);
}

double mixture_logpdf_unchecked(double x, const SnMixture& psi) noexcept {
    // Zero-weight components are dropped before the shifted-maximum sum.
    double m = -std::numeric_limits<double>::infinity();
    double terms[16];
    const std::size_t p = psi.order();
    if (p > 16) {
        std::vector<double> v;
        v.reserve(p);
        for (std::size_t k = 0; k < p; ++k)
            if (psi.weights[k] > 0.0) v.push_back(std::log(psi.weights[k]) + sn_logpdf_unchecked(x, psi.components[k]));
        return log_sum_exp(v);
    }
    std::size_t used = 0;
    for (std::size_t k = 0; k < p; ++k) {
        if (psi.weights[k] == 0.0) continue;
        terms[used] = std::log(psi.weights[k]) + sn_logpdf_unchecked(x, psi.components[k]);
        m = std::max(m, terms[used]);
        ++used;
    }
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < used; ++k) s += std::exp(terms[k] - m);
    return m + std::log(s);
}

}  // namespace detail

double sn_logpdf(double x, const SnComponent& theta) {
    theta.validate();
    return detail::sn_logpdf_unchecked(x, theta);
}

double log_sum_exp(std::span<const double> v) noexcept {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double mixture_logpdf(double x, const SnMixture& psi) {
    psi.validate();
    return detail::mixture_logpdf_unchecked(x, psi);
}

double loglik(std::span<const double> data, const SnMixture& psi) {
    if (data.empty()) throw DomainError("log-likelihood of empty data");
    psi.validate();
    double sum = 0.0;
    for (double x : data) sum += detail::mixture_logpdf_unchecked(x, psi);
    return sum;
}

double penalty_sigma(double sigma2, double a_n, double s_n2) {
    if (!(sigma2 > 0.0)) throw DomainError("penalty_sigma requires sigma2 > 0");
    if (!(s_n2 > 0.0) || !(a_n >= 0.0)) throw DomainError("penalty_sigma requires s_n2 > 0 and a_n >= 0");
    if (a_n == 0.0) return 0.0;
    const double r = s_n2 / sigma2;
    return -a_n * (r - std::log(r) - 1.0);
}

double penalty_lambda(double lambda, double b_n) noexcept {
    const double l2 = lambda * lambda;
    return -b_n * (l2 - std::log1p(l2));
}

double penalty_lambda_azzalini(double lambda, double c1, double c2) {
    if (!(c1 > 0.0) || !(c2 > 0.0)) throw DomainError("Azzalini penalty requires c1, c2 > 0");
    return -c1 * std::log1p(c2 * lambda * lambda);
}

double penalized_loglik(std::span<const double> data, const SnMixture& psi, const PenaltySpec& pen) {
    const double ll = loglik(data, psi);
    if (pen.is_none()) return ll;
    return ll + pen.total(psi);
}

Tuning tuning(long long n, double c_a, double c_b) {
    if (n < 2) throw DomainError("tuning requires n >= 2");
    const double nd = static_cast<double>(n);
    return {c_a / nd, c_b / std::log(nd)};
}

double sample_variance(std::span<const double> data) {
    if (data.size() < 2) throw DomainError("sample variance needs at least two observations");
    const double n = static_cast<double>(data.size());
    const double mean = std::accumulate(data.begin(), data.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : data) ss += (x - mean) * (x - mean);
    return ss / (n - 1.0);
}

}  // namespace snmix
