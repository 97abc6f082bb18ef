#include "snmix/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "snmix/init.hpp"
#include "snmix/sampler.hpp"

namespace snmix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEndpointDelta = 1.0 - 1e-9;

// Weighted sums for one component with the location fixed at mu.
struct ShapeStats {
    double n = 0.0;   // sum alpha
    double s0 = 0.0;  // sum alpha gamma
    double s1 = 0.0;  // sum alpha beta (x - mu)
    double s2 = 0.0;  // sum alpha (x - mu)^2
};

ShapeStats shape_stats(std::span<const double> data, const EStepCache& cache, std::size_t i, double mu) {
    ShapeStats s;
    for (std::size_t j = 0; j < cache.n; ++j) {
        const double a = cache.a(j, i);
        if (a == 0.0) continue;
        const double r = data[j] - mu;
        s.n += a;
        s.s0 += a * cache.g(j, i);
        s.s1 += a * cache.b(j, i) * r;
        s.s2 += a * r * r;
    }
    return s;
}

std::vector<double> responsibilities(const EStepCache& cache) {
    std::vector<double> resp(cache.p, 0.0);
    for (std::size_t j = 0; j < cache.n; ++j)
        for (std::size_t i = 0; i < cache.p; ++i) resp[i] += cache.a(j, i);
    return resp;
}

void check_cache(std::span<const double> data, const EStepCache& cache) {
    if (cache.n != data.size() || cache.alpha.size() != cache.n * cache.p || cache.beta.size() != cache.alpha.size() ||
        cache.gamma.size() != cache.alpha.size())
        throw DomainError("E-step cache does not match the data");
}

template <class Vec>
void check_len(const Vec& v, std::size_t p, const char* what) {
    if (v.size() != p) throw DomainError(std::string(what) + " has the wrong number of components");
}

double lambda_penalty_of_delta(double delta, const LambdaPenalty& pen) {
    const double u = (1.0 - delta) * (1.0 + delta);
    if (const auto* p = std::get_if<ProposedLambdaPenalty>(&pen)) {
        // lambda^2 - log(1 + lambda^2) with 1 + lambda^2 = 1/u
        return -p->b_n * ((1.0 / u - 1.0) + std::log(u));
    }
    if (const auto* p = std::get_if<AzzaliniLambdaPenalty>(&pen)) {
        if (p->c1 == 0.0) return 0.0;
        return -p->c1 * std::log1p(p->c2 * delta * delta / u);
    }
    return 0.0;
}

// Shape-dependent part of Q for one component, as a function of delta.
double q_shape(double delta, const ShapeStats& s, double sigma2, const LambdaPenalty& pen) {
    const double u = (1.0 - delta) * (1.0 + delta);
    if (!(u > 0.0)) return -kInf;
    return -0.5 * s.n * std::log(u) - (s.s0 - 2.0 * delta * s.s1 + s.s2) / (2.0 * sigma2 * u) +
           lambda_penalty_of_delta(delta, pen);
}

// Real roots of c3 x^3 + c2 x^2 + c1 x + c0 (c3 != 0), polished by Newton steps.
std::vector<double> cubic_roots(double c3, double c2, double c1, double c0) {
    const double a = c2 / c3, b = c1 / c3, c = c0 / c3;
    const double q = (a * a - 3.0 * b) / 9.0;
    const double r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
    std::vector<double> roots;
    const double q3 = q * q * q;
    if (r * r < q3) {
        const double theta = std::acos(std::clamp(r / std::sqrt(q3), -1.0, 1.0));
        const double m = -2.0 * std::sqrt(q);
        roots = {m * std::cos(theta / 3.0) - a / 3.0, m * std::cos((theta + 2.0 * std::numbers::pi) / 3.0) - a / 3.0,
                 m * std::cos((theta - 2.0 * std::numbers::pi) / 3.0) - a / 3.0};
    } else {
        const double big = -std::copysign(std::cbrt(std::abs(r) + std::sqrt(r * r - q3)), r);
        const double small = big == 0.0 ? 0.0 : q / big;
        roots = {big + small - a / 3.0};
    }
    for (double& x : roots) {
        for (int k = 0; k < 4; ++k) {
            const double f = ((c3 * x + c2) * x + c1) * x + c0;
            const double df = (3.0 * c3 * x + 2.0 * c2) * x + c1;
            if (df == 0.0) break;
            const double step = f / df;
            if (!std::isfinite(step)) break;
            x -= step;
        }
    }
    return roots;
}

// Picks the candidate with the largest q_shape; falls back to the endpoints.
double select_delta(const std::vector<double>& candidates, const ShapeStats& s, double sigma2,
                    const LambdaPenalty& pen, bool& fallback) {
    double best = 0.0, best_q = -kInf;
    bool found = false;
    for (double d : candidates) {
        if (!(std::abs(d) < 1.0)) continue;
        const double q = q_shape(d, s, sigma2, pen);
        if (!found || q > best_q) {
            best = d;
            best_q = q;
            found = true;
        }
    }
    fallback = !found;
    if (!found) {
        const double qp = q_shape(kEndpointDelta, s, sigma2, pen);
        const double qm = q_shape(-kEndpointDelta, s, sigma2, pen);
        best = qp >= qm ? kEndpointDelta : -kEndpointDelta;
    }
    return best;
}

double delta_cubic(const ShapeStats& s, double sigma2, double b_n, bool& fallback) {
    const double c3 = -sigma2 * (2.0 * b_n + s.n);
    const double c2 = s.s1;
    const double c1 = -(s.s0 + s.s2 - sigma2 * s.n);
    const double c0 = s.s1;
    const LambdaPenalty pen = ProposedLambdaPenalty{b_n};
    return select_delta(cubic_roots(c3, c2, c1, c0), s, sigma2, pen, fallback);
}

double delta_azzalini(const ShapeStats& s, double sigma2, double c1, double c2, bool& fallback) {
    if (c1 == 0.0) return delta_cubic(s, sigma2, 0.0, fallback);
    auto g = [&](double d) {
        const double u = (1.0 - d) * (1.0 + d);
        return sigma2 * d * u * (s.n - 2.0 * c1 * c2 / (1.0 - (1.0 - c2) * d * d)) + (1.0 + d * d) * s.s1 -
               d * (s.s0 + s.s2);
    };
    // Sign-change scan on a grid clustered toward +-1, then bracketed refinement.
    constexpr int kGrid = 200;
    std::vector<double> roots;
    auto grid_delta = [](int k) {
        const double t = -1.0 + 2.0 * k / kGrid;
        return std::sin(0.5 * std::numbers::pi * std::clamp(t, -1.0 + 1e-7, 1.0 - 1e-7));
    };
    double prev_d = grid_delta(0);
    double prev_g = g(prev_d);
    for (int k = 1; k <= kGrid; ++k) {
        const double d = grid_delta(k);
        const double gd = g(d);
        if (gd == 0.0) {
            roots.push_back(d);
        } else if (prev_g != 0.0 && (prev_g < 0.0) != (gd < 0.0)) {
            boost::uintmax_t iters = 100;
            auto [lo, hi] = boost::math::tools::toms748_solve(g, prev_d, d, prev_g, gd,
                                                              boost::math::tools::eps_tolerance<double>(50), iters);
            roots.push_back(0.5 * (lo + hi));
        }
        prev_d = d;
        prev_g = gd;
    }
    const LambdaPenalty pen = AzzaliniLambdaPenalty{c1, c2};
    return select_delta(roots, s, sigma2, pen, fallback);
}

double sigma2_update(const ShapeStats& s, double lambda, double a_n, double s_n2) {
    const double u = one_minus_delta_sq(lambda);
    const double delta = delta_of_lambda(lambda);
    return (s.s0 - 2.0 * delta * s.s1 + s.s2 + 2.0 * a_n * u * s_n2) / (2.0 * u * (a_n + s.n));
}

// Normal-component update used when the shape is frozen at zero: the latent
// half-normal is independent of x there and is left out of the complete data.
double sigma2_update_normal(const ShapeStats& s, double a_n, double s_n2) {
    return (s.s2 + 2.0 * a_n * s_n2) / (s.n + 2.0 * a_n);
}

std::pair<double, double> sigma_tuning(const PenaltySpec& pen) {
    if (const auto* p = std::get_if<ProposedSigmaPenalty>(&pen.sigma_penalty)) return {p->a_n, p->s_n2};
    return {0.0, 1.0};
}

double lambda_b_n(const PenaltySpec& pen) {
    if (const auto* p = std::get_if<ProposedLambdaPenalty>(&pen.lambda_penalty)) return p->b_n;
    if (std::holds_alternative<NoLambdaPenalty>(pen.lambda_penalty)) return 0.0;
    throw DomainError("cm_step_lambda needs the proposed lambda penalty or none");
}

double log_add(double a, double b) noexcept {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

SnMixture starting_mixture(std::span<const double> data, std::size_t p, const InitScheme& init) {
    return std::visit(
        [&](const auto& s) -> SnMixture {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, KMeansMomentsInit>) return kmeans_moments_init(data, p, s.seed).psi0;
            if constexpr (std::is_same_v<T, TrueValueInit>) return true_value_init(s.psi).psi0;
            if constexpr (std::is_same_v<T, ExplicitInit>) {
                s.psi.validate();
                return s.psi;
            }
            if constexpr (std::is_same_v<T, PerturbedInit>) return perturbed_init(s.psi, p, s.seed).psi0;
        },
        init);
}

bool any_sigma_below(const SnMixture& psi, double t) {
    return std::any_of(psi.components.begin(), psi.components.end(),
                       [t](const SnComponent& c) { return !(c.sigma2 >= t); });
}

bool any_lambda_above(const SnMixture& psi, double t) {
    return std::any_of(psi.components.begin(), psi.components.end(),
                       [t](const SnComponent& c) { return !(std::abs(c.lambda) <= t); });
}

}  // namespace

void FitConfig::validate() const {
    if (max_iter < 1) throw DomainError("max_iter must be at least 1");
    if (!(rel_tol > 0.0)) throw DomainError("rel_tol must be positive");
    penalty.validate();
}

EStepCache e_step(std::span<const double> data, const SnMixture& psi) {
    if (data.empty()) throw DomainError("E-step on empty data");
    psi.validate();
    const std::size_t n = data.size(), p = psi.order();
    EStepCache c;
    c.n = n;
    c.p = p;
    c.alpha.resize(n * p);
    c.beta.resize(n * p);
    c.gamma.resize(n * p);

    std::vector<double> log_w(p), sigma(p), delta(p), sigma_tau(p);
    for (std::size_t i = 0; i < p; ++i) {
        const auto& th = psi.components[i];
        log_w[i] = psi.weights[i] > 0.0 ? std::log(psi.weights[i]) : -kInf;
        sigma[i] = std::sqrt(th.sigma2);
        delta[i] = delta_of_lambda(th.lambda);
        sigma_tau[i] = sigma[i] * std::sqrt(one_minus_delta_sq(th.lambda));
    }
    std::vector<double> lt(p);
    for (std::size_t j = 0; j < n; ++j) {
        const double x = data[j];
        double m = -kInf;
        for (std::size_t i = 0; i < p; ++i) {
            lt[i] = log_w[i] == -kInf ? -kInf : log_w[i] + detail::sn_logpdf_unchecked(x, psi.components[i]);
            m = std::max(m, lt[i]);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < p; ++i) sum += lt[i] == -kInf ? 0.0 : std::exp(lt[i] - m);
        for (std::size_t i = 0; i < p; ++i) {
            const std::size_t at = j * p + i;
            c.alpha[at] = lt[i] == -kInf ? 0.0 : std::exp(lt[i] - m) / sum;
            const double r = x - psi.components[i].mu;
            const double mu_tau = delta[i] * r;
            const double st = sigma_tau[i];
            const double mills = inverse_mills(psi.components[i].lambda * r / sigma[i]);
            const double beta = std::max(0.0, mu_tau + st * mills);
            const double gamma = mu_tau * mu_tau + st * st + mu_tau * st * mills;
            c.beta[at] = beta;
            c.gamma[at] = std::max(gamma, beta * beta);
        }
    }
    return c;
}

double q_function(const SnMixture& psi, std::span<const double> data, const EStepCache& cache,
                  const PenaltySpec& pen) {
    check_cache(data, cache);
    if (cache.p != psi.order()) throw DomainError("mixture order does not match the E-step cache");
    psi.validate();
    double q = 0.0;
    for (std::size_t i = 0; i < cache.p; ++i) {
        const auto& th = psi.components[i];
        const double delta = delta_of_lambda(th.lambda);
        const double u = one_minus_delta_sq(th.lambda);
        const double log_pi = std::log(psi.weights[i]);
        const double base = -std::log(th.sigma2) - 0.5 * std::log(u);
        const double denom = 2.0 * th.sigma2 * u;
        for (std::size_t j = 0; j < cache.n; ++j) {
            const double a = cache.a(j, i);
            if (a == 0.0) continue;
            const double r = data[j] - th.mu;
            q += a * (log_pi + base - (cache.g(j, i) - 2.0 * delta * cache.b(j, i) * r + r * r) / denom);
        }
        q += pen.sigma_term(th.sigma2) + pen.lambda_term(th.lambda);
    }
    return q;
}

std::vector<double> cm_step_pi(const EStepCache& cache) {
    auto w = responsibilities(cache);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
}

std::vector<double> cm_step_mu(std::span<const double> data, const EStepCache& cache,
                               std::span<const double> lambda_current) {
    check_cache(data, cache);
    check_len(lambda_current, cache.p, "lambda_current");
    std::vector<double> mu(cache.p);
    for (std::size_t i = 0; i < cache.p; ++i) {
        double sa = 0.0, sax = 0.0, sab = 0.0;
        for (std::size_t j = 0; j < cache.n; ++j) {
            const double a = cache.a(j, i);
            sa += a;
            sax += a * data[j];
            sab += a * cache.b(j, i);
        }
        if (!(sa > 0.0)) throw DegenerateComponentError("component has zero total responsibility");
        mu[i] = (sax - delta_of_lambda(lambda_current[i]) * sab) / sa;
    }
    return mu;
}

std::vector<double> cm_step_sigma2(std::span<const double> data, const EStepCache& cache,
                                   std::span<const double> mu_new, std::span<const double> lambda_current,
                                   const PenaltySpec& pen) {
    check_cache(data, cache);
    check_len(mu_new, cache.p, "mu_new");
    check_len(lambda_current, cache.p, "lambda_current");
    const auto [a_n, s_n2] = sigma_tuning(pen);
    std::vector<double> out(cache.p);
    for (std::size_t i = 0; i < cache.p; ++i) {
        const auto s = shape_stats(data, cache, i, mu_new[i]);
        if (!(s.n > 0.0) && a_n == 0.0) throw DegenerateComponentError("component has zero total responsibility");
        out[i] = sigma2_update(s, lambda_current[i], a_n, s_n2);
        if (!(out[i] > 0.0) || !std::isfinite(out[i]))
            throw DegenerateComponentError("scale update collapsed to a non-positive value");
    }
    return out;
}

LambdaStep cm_step_lambda(std::span<const double> data, const EStepCache& cache, std::span<const double> mu_new,
                          std::span<const double> sigma2_new, const PenaltySpec& pen) {
    check_cache(data, cache);
    check_len(mu_new, cache.p, "mu_new");
    check_len(sigma2_new, cache.p, "sigma2_new");
    const double b_n = lambda_b_n(pen);
    LambdaStep out{std::vector<double>(cache.p), std::vector<bool>(cache.p)};
    for (std::size_t i = 0; i < cache.p; ++i) {
        const auto s = shape_stats(data, cache, i, mu_new[i]);
        bool fb = false;
        out.lambda[i] = lambda_of_delta(delta_cubic(s, sigma2_new[i], b_n, fb));
        out.fallback[i] = fb;
    }
    return out;
}

LambdaStep cm_step_lambda_azzalini(std::span<const double> data, const EStepCache& cache,
                                   std::span<const double> mu_new, std::span<const double> sigma2_new, double c1,
                                   double c2) {
    check_cache(data, cache);
    check_len(mu_new, cache.p, "mu_new");
    check_len(sigma2_new, cache.p, "sigma2_new");
    if (!(c1 >= 0.0) || !(c2 > 0.0)) throw DomainError("Azzalini penalty needs c1 >= 0 and c2 > 0");
    LambdaStep out{std::vector<double>(cache.p), std::vector<bool>(cache.p)};
    for (std::size_t i = 0; i < cache.p; ++i) {
        const auto s = shape_stats(data, cache, i, mu_new[i]);
        bool fb = false;
        out.lambda[i] = lambda_of_delta(delta_azzalini(s, sigma2_new[i], c1, c2, fb));
        out.fallback[i] = fb;
    }
    return out;
}

std::vector<double> cml_step(std::span<const double> data, const SnMixture& psi_partial, const PenaltySpec& pen,
                             double rel_tol, std::span<const bool> fixed, bool global_scan) {
    psi_partial.validate();
    if (data.empty()) throw DomainError("CML-step on empty data");
    const std::size_t n = data.size(), p = psi_partial.order();
    if (!fixed.empty()) check_len(fixed, p, "fixed");

    std::vector<double> lambda(p);
    for (std::size_t i = 0; i < p; ++i) lambda[i] = psi_partial.components[i].lambda;

    std::vector<double> log_w(p);
    for (std::size_t i = 0; i < p; ++i)
        log_w[i] = psi_partial.weights[i] > 0.0 ? std::log(psi_partial.weights[i]) : -kInf;

    // terms[j*p + i] = log pi_i + log f_SN(x_j; theta_i)
    std::vector<double> terms(n * p);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < p; ++i)
            terms[j * p + i] =
                log_w[i] == -kInf ? -kInf : log_w[i] + detail::sn_logpdf_unchecked(data[j], psi_partial.components[i]);

    auto total = [&] {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += log_sum_exp({&terms[j * p], p});
        for (std::size_t i = 0; i < p; ++i) s += pen.lambda_term(lambda[i]);
        return s;
    };

    std::vector<std::size_t> free_idx;
    for (std::size_t i = 0; i < p; ++i)
        if ((fixed.empty() || !fixed[i]) && log_w[i] != -kInf) free_idx.push_back(i);
    if (free_idx.empty()) return lambda;

    std::vector<double> others(n);
    double current = total();
    constexpr int kMaxSweeps = 100;
    // Shapes are searched on w = asinh(lambda), |lambda| <= 1e6.
    const double w_max = std::asinh(kSingularLambda);
    constexpr int kGrid = 29;
    constexpr double kStep = 0.25;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        const double before = current;
        for (std::size_t i : free_idx) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = -kInf;
                for (std::size_t k = 0; k < p; ++k)
                    if (k != i) acc = log_add(acc, terms[j * p + k]);
                others[j] = acc;
            }
            SnComponent th = psi_partial.components[i];
            auto objective = [&](double w) {
                th.lambda = std::sinh(w);
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    s += log_add(others[j], log_w[i] + detail::sn_logpdf_unchecked(data[j], th));
                return s + pen.lambda_term(th.lambda);
            };
            const double w0 = std::asinh(lambda[i]);
            double best_w = w0, best = objective(w0);
            // Expanding bracket around the current shape.
            auto expand = [&](double dir) {
                for (double h = kStep;; h *= 2.0) {
                    const double w = std::clamp(w0 + dir * h, -w_max, w_max);
                    const double v = objective(w);
                    if (!(v > best) || std::abs(w) == w_max) {
                        if (v > best) {
                            best = v;
                            best_w = w;
                        }
                        return w;
                    }
                    best = v;
                    best_w = w;
                }
            };
            double lo = expand(-1.0), hi = w0;
            if (best_w == w0) {
                hi = expand(1.0);
                if (best_w != w0) lo = w0;
            }
            if (global_scan) {
                const double step = 2.0 * w_max / (kGrid - 1);
                for (int k = 0; k < kGrid; ++k) {
                    const double w = -w_max + k * step;
                    const double v = objective(w);
                    if (v > best) {
                        best = v;
                        best_w = w;
                        lo = std::max(-w_max, w - step);
                        hi = std::min(w_max, w + step);
                    }
                }
            }
            auto [wb, neg] = boost::math::tools::brent_find_minima([&](double w) { return -objective(w); }, lo, hi, 30);
            if (-neg > best) {
                best = -neg;
                best_w = wb;
            }
            if (best_w != w0) {
                lambda[i] = std::sinh(best_w);
                th.lambda = lambda[i];
                for (std::size_t j = 0; j < n; ++j)
                    terms[j * p + i] = log_w[i] + detail::sn_logpdf_unchecked(data[j], th);
            }
        }
        current = total();
        if (free_idx.size() == 1) break;
        if (std::abs(current - before) / (std::abs(before) + 1.0) < rel_tol) break;
    }
    return lambda;
}

SnMixture label_sort(const SnMixture& psi) {
    std::vector<std::size_t> idx(psi.order());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return psi.components[a].mu < psi.components[b].mu; });
    SnMixture out;
    out.weights.reserve(idx.size());
    out.components.reserve(idx.size());
    for (std::size_t k : idx) {
        out.weights.push_back(psi.weights[k]);
        out.components.push_back(psi.components[k]);
    }
    return out;
}

FitResult fit(std::span<const double> data, std::size_t p, const FitConfig& cfg) {
    cfg.validate();
    if (p == 0) throw DomainError("mixture order must be positive");
    if (data.size() < 3 * p) throw DomainError("need at least 3 observations per component");
    for (double x : data)
        if (!std::isfinite(x)) throw DomainError("data contains non-finite values");

    const PenaltySpec& pen = cfg.penalty;
    const auto [a_n, s_n2] = sigma_tuning(pen);
    const std::size_t n = data.size();

    SnMixture psi = starting_mixture(data, p, cfg.init);
    if (psi.order() != p) throw DomainError("initial mixture order differs from p");

    std::vector<std::optional<double>> frozen = cfg.frozen_lambda;
    if (frozen.empty()) frozen.resize(p);
    if (frozen.size() != p) throw DomainError("frozen_lambda must be empty or have p entries");
    for (std::size_t i = 0; i < p; ++i)
        if (frozen[i]) psi.components[i].lambda = *frozen[i];

    FitResult res;
    auto finish = [&](SnMixture final_psi) {
        res.degenerate_sigma = any_sigma_below(final_psi, kSigma2DegenerateThreshold);
        res.divergent_lambda = any_lambda_above(final_psi, kLambdaDivergentThreshold);
        res.psi = label_sort(final_psi);
        return res;
    };

    double obj = penalized_loglik(data, psi, pen);
    res.objective_trace.push_back(obj);
    if (!std::isfinite(obj)) {
        res.stopped_at_singularity = true;
        return finish(psi);
    }

    std::vector<double> lambda_now(p), mu_new(p), sigma2_new(p), lambda_new(p);
    std::vector<bool> hold(p);
    std::vector<bool> fixed_shape(p);
    const bool azzalini = std::holds_alternative<AzzaliniLambdaPenalty>(pen.lambda_penalty);

    for (int it = 1; it <= cfg.max_iter; ++it) {
        const EStepCache cache = e_step(data, psi);
        const auto resp = responsibilities(cache);
        const auto weights = cm_step_pi(cache);

        double q_prev = 0.0;
        auto check_q = [&](const SnMixture& candidate) {
            if (!cfg.check_q_ascent) return;
            const double q = q_function(candidate, data, cache, pen);
            if (q < q_prev - 1e-9 * (std::abs(q_prev) + 1.0)) ++res.q_ascent_violations;
            q_prev = q;
        };
        if (cfg.check_q_ascent) q_prev = q_function(psi, data, cache, pen);

        SnMixture next = psi;
        next.weights = weights;
        check_q(next);

        for (std::size_t i = 0; i < p; ++i) {
            hold[i] = resp[i] < kHoldResponsibility;
            res.held_component = res.held_component || hold[i];
            lambda_now[i] = psi.components[i].lambda;
            fixed_shape[i] = hold[i] || frozen[i].has_value();
        }

        // CM-step 2: locations.
        for (std::size_t i = 0; i < p; ++i) {
            if (hold[i]) continue;
            double sax = 0.0, sab = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                sax += cache.a(j, i) * data[j];
                sab += cache.a(j, i) * cache.b(j, i);
            }
            next.components[i].mu = (sax - delta_of_lambda(lambda_now[i]) * sab) / resp[i];
        }
        check_q(next);

        // CM-step 3: scales.
        bool collapsed = false;
        std::vector<ShapeStats> stats(p);
        for (std::size_t i = 0; i < p; ++i) {
            if (hold[i]) continue;
            stats[i] = shape_stats(data, cache, i, next.components[i].mu);
            const bool normal = frozen[i].has_value() && *frozen[i] == 0.0;
            double s2 = normal ? sigma2_update_normal(stats[i], a_n, s_n2)
                               : sigma2_update(stats[i], lambda_now[i], a_n, s_n2);
            if (!(s2 > 0.0) || !std::isfinite(s2)) {
                s2 = std::numeric_limits<double>::min();
                collapsed = true;
            }
            next.components[i].sigma2 = s2;
        }
        if (!std::any_of(frozen.begin(), frozen.end(), [](const auto& f) { return f && *f == 0.0; })) check_q(next);

        // CM-step 4 (ECM) or CML-step (ECME): shapes.
        if (cfg.algorithm == Algorithm::ECM) {
            const double b_n = azzalini ? 0.0 : lambda_b_n(pen);
            for (std::size_t i = 0; i < p; ++i) {
                if (fixed_shape[i]) continue;
                bool fb = false;
                double d = 0.0;
                if (azzalini) {
                    const auto& az = std::get<AzzaliniLambdaPenalty>(pen.lambda_penalty);
                    d = delta_azzalini(stats[i], next.components[i].sigma2, az.c1, az.c2, fb);
                } else {
                    d = delta_cubic(stats[i], next.components[i].sigma2, b_n, fb);
                }
                if (fb) ++res.lambda_fallbacks;
                next.components[i].lambda = lambda_of_delta(d);
            }
            check_q(next);
        } else if (!collapsed) {
            const auto fixed = std::make_unique<bool[]>(p);
            for (std::size_t i = 0; i < p; ++i) fixed[i] = fixed_shape[i];
            const auto lam = cml_step(data, next, pen, cfg.rel_tol, {fixed.get(), p}, it % 10 == 1);
            for (std::size_t i = 0; i < p; ++i) next.components[i].lambda = lam[i];
        }

        psi = next;
        res.iterations = it;
        const bool singular = collapsed || any_sigma_below(psi, kSingularSigma2) || any_lambda_above(psi, kSingularLambda);
        const double obj_new = penalized_loglik(data, psi, pen);
        if (std::isfinite(obj_new)) res.objective_trace.push_back(obj_new);
        if (singular || !std::isfinite(obj_new)) {
            res.stopped_at_singularity = true;
            return finish(psi);
        }
        const double rel = std::abs(obj_new - obj) / (std::abs(obj) + 1.0);
        obj = obj_new;
        if (rel < cfg.rel_tol) {
            res.converged = true;
            break;
        }
    }
    return finish(psi);
}

FitResult fit_best_of(std::span<const double> data, std::size_t p, const FitConfig& cfg, int starts,
                      std::uint64_t seed) {
    if (starts < 1) throw DomainError("need at least one start");
    const bool seeded = std::holds_alternative<KMeansMomentsInit>(cfg.init) ||
                        std::holds_alternative<PerturbedInit>(cfg.init);
    if (!seeded) starts = 1;
    std::optional<FitResult> best;
    for (int s = 0; s < starts; ++s) {
        FitConfig c = cfg;
        const std::uint64_t child = derive_seed(seed, static_cast<std::uint64_t>(s));
        if (auto* km = std::get_if<KMeansMomentsInit>(&c.init)) km->seed = child;
        if (auto* pt = std::get_if<PerturbedInit>(&c.init)) pt->seed = child;
        FitResult r = fit(data, p, c);
        if (!best || r.objective() > best->objective()) best = std::move(r);
    }
    return *best;
}

MeResult profile_lrt_me(std::span<const double> data, const FitResult& mle_fit, double level) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0, 1)");
    const SnMixture& mle = mle_fit.psi;
    mle.validate();
    if (mle_fit.degenerate_sigma || any_sigma_below(mle, kSigma2DegenerateThreshold))
        throw ValidityError(
            "modified estimator is invalid when a fitted variance has collapsed to zero: the profile "
            "likelihood-ratio test lies on the boundary and its chi-square limit does not hold");

    const std::size_t p = mle.order();
    MeResult out;
    out.psi = mle;
    out.lambda.resize(p);
    std::vector<bool> flagged(p);
    for (std::size_t i = 0; i < p; ++i) {
        out.lambda[i] = mle.components[i].lambda;
        flagged[i] = std::abs(mle.components[i].lambda) >= kMeShapeThreshold;
        out.nu += flagged[i] ? 1 : 0;
    }
    if (out.nu == 0) return out;

    boost::math::chi_squared_distribution<double> chi2(out.nu);
    out.critical = boost::math::quantile(boost::math::complement(chi2, level));

    struct Profile {
        FitResult fit;
        double ll;
    };
    auto profile = [&](double t) {
        FitConfig cfg;
        cfg.penalty = PenaltySpec::none();
        cfg.init = ExplicitInit{mle};
        cfg.frozen_lambda.resize(p);
        for (std::size_t i = 0; i < p; ++i)
            if (flagged[i]) cfg.frozen_lambda[i] = t * mle.components[i].lambda;
        FitResult f = fit(data, p, cfg);
        if (f.degenerate_sigma || f.stopped_at_singularity || any_sigma_below(f.psi, kSigma2DegenerateThreshold))
            throw ValidityError(
                "modified estimator is invalid here: a profile fit with shrunken shapes collapsed a variance to "
                "zero, so the likelihood-ratio statistic is unbounded");
        return Profile{f, loglik(data, f.psi)};
    };

    const Profile full = profile(1.0);
    const double ll_hat = std::max(loglik(data, mle), full.ll);
    auto stat = [&](const Profile& pr) { return 2.0 * (ll_hat - pr.ll); };

    Profile accepted = full;
    double t_acc = 1.0;
    const Profile zero = profile(0.0);
    if (stat(zero) <= out.critical) {
        accepted = zero;
        t_acc = 0.0;
    } else {
        double lo = 0.0, hi = 1.0;
        for (int k = 0; k < 60 && hi - lo > 1e-10; ++k) {
            const double mid = 0.5 * (lo + hi);
            Profile pr = profile(mid);
            const double s = stat(pr);
            if (s <= out.critical) {
                hi = mid;
                accepted = std::move(pr);
                t_acc = mid;
                if (out.critical - s < 1e-3) break;
            } else {
                lo = mid;
            }
        }
    }
    out.shrink = t_acc;
    out.statistic = stat(accepted);
    out.psi = accepted.fit.psi;
    for (std::size_t i = 0; i < p; ++i) out.lambda[i] = out.psi.components[i].lambda;
    return out;
}

}  // namespace snmix
