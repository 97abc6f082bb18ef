#pragma once

// Independent re-implementations used to check the EM engine.

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "snmix/sn_core.hpp"

namespace em_oracle {

struct Penalty {
    double a_n = 0.0;
    double s2 = 1.0;
    double b_n = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;

    double sigma(double sigma2) const { return a_n == 0.0 ? 0.0 : -a_n * (s2 / sigma2 + std::log(sigma2 / s2) - 1.0); }
    double shape(double lambda) const {
        return -b_n * (lambda * lambda - std::log1p(lambda * lambda)) - c1 * std::log1p(c2 * lambda * lambda);
    }
};

inline double sample_var(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= x.size();
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / (x.size() - 1.0);
}

inline Penalty proposed(std::span<const double> x) {
    const double n = x.size();
    return {1.0 / n, sample_var(x), 0.05 / std::log(n), 0.0, 0.0};
}

inline Penalty azzalini_with_sigma(std::span<const double> x) {
    return {1.0 / x.size(), sample_var(x), 0.0, 0.876, 0.856};
}

/// Conditional moments of the latent half-normal tau given x, by quadrature
/// of f(tau) f(x | tau) over tau >= 0.
struct LatentMoments {
    double m1, m2;
};

inline LatentMoments latent_moments(double x, const snmix::SnComponent& c) {
    const double sigma = std::sqrt(c.sigma2);
    const double delta = c.lambda / std::sqrt(1.0 + c.lambda * c.lambda);
    const double v = c.sigma2 / (1.0 + c.lambda * c.lambda);
    // Exponent of the joint density in tau, shifted by its maximum to avoid underflow.
    auto expo = [&](double t) { return -t * t / (2.0 * c.sigma2) - (x - c.mu - delta * t) * (x - c.mu - delta * t) / (2.0 * v); };
    const double mode = std::max(0.0, delta * (x - c.mu));
    const double top = expo(mode);
    const double scale = sigma;
    using boost::math::quadrature::gauss_kronrod;
    auto integrate = [&](auto g) {
        // split at the mode so the peak is resolved
        double s = 0.0;
        if (mode > 0.0) s += gauss_kronrod<double, 61>::integrate(g, 0.0, mode, 15, 1e-13);
        s += gauss_kronrod<double, 61>::integrate(g, mode, mode + 40.0 * scale, 15, 1e-13);
        return s;
    };
    const double z0 = integrate([&](double t) { return std::exp(expo(t) - top); });
    const double z1 = integrate([&](double t) { return t * std::exp(expo(t) - top); });
    const double z2 = integrate([&](double t) { return t * t * std::exp(expo(t) - top); });
    return {z1 / z0, z2 / z0};
}

/// Posterior membership from directly evaluated component densities.
inline std::vector<double> membership(double x, const snmix::SnMixture& psi) {
    std::vector<double> f(psi.order());
    double total = 0.0;
    for (std::size_t i = 0; i < psi.order(); ++i) {
        const auto& c = psi.components[i];
        const double s = std::sqrt(c.sigma2), z = (x - c.mu) / s;
        f[i] = psi.weights[i] * 2.0 / s * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) *
               0.5 * std::erfc(-c.lambda * z / std::numbers::sqrt2);
        total += f[i];
    }
    for (double& v : f) v /= total;
    return f;
}

/// Expected complete-data log-likelihood contribution of component i, from the
/// hierarchy tau ~ HN(sigma), x | tau ~ N(mu + delta tau, sigma^2 (1 - delta^2)),
/// with E-step quantities alpha, beta, gamma (row-major n x p).
inline double q_component(std::span<const double> x, std::size_t p, std::size_t i, std::span<const double> alpha,
                          std::span<const double> beta, std::span<const double> gamma, double weight,
                          const snmix::SnComponent& c, const Penalty& pen) {
    const double delta = c.lambda / std::sqrt(1.0 + c.lambda * c.lambda);
    const double v = c.sigma2 * (1.0 - delta * delta);
    double q = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double a = alpha[j * p + i], b = beta[j * p + i], g = gamma[j * p + i];
        const double r = x[j] - c.mu;
        const double tau_part = -0.5 * std::log(c.sigma2) - g / (2.0 * c.sigma2);
        const double x_part = -0.5 * std::log(v) - (r * r - 2.0 * delta * r * b + delta * delta * g) / (2.0 * v);
        q += a * (std::log(weight) + tau_part + x_part);
    }
    return q + pen.sigma(c.sigma2) + pen.shape(c.lambda);
}

/// Golden-section maximization on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-11) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol * (1.0 + std::abs(a) + std::abs(b))) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Grid scan then golden section on the best cell.
inline double grid_golden_max(const std::function<double(double)>& f, double lo, double hi, int cells = 4000) {
    const double h = (hi - lo) / cells;
    int best = 0;
    double fb = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= cells; ++k) {
        const double v = f(lo + k * h);
        if (v > fb) {
            fb = v;
            best = k;
        }
    }
    return golden_max(f, lo + std::max(0, best - 1) * h, lo + std::min(cells, best + 1) * h);
}

/// One textbook EM iteration for a univariate Gaussian mixture.
struct Gaussian {
    std::vector<double> w, mu, var;
};

inline Gaussian gaussian_em_step(std::span<const double> x, const Gaussian& g) {
    const std::size_t p = g.w.size(), n = x.size();
    std::vector<double> resp(n * p);
    for (std::size_t j = 0; j < n; ++j) {
        double total = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            const double d = x[j] - g.mu[i];
            resp[j * p + i] = g.w[i] * std::exp(-0.5 * d * d / g.var[i]) / std::sqrt(2.0 * std::numbers::pi * g.var[i]);
            total += resp[j * p + i];
        }
        for (std::size_t i = 0; i < p; ++i) resp[j * p + i] /= total;
    }
    Gaussian out{std::vector<double>(p), std::vector<double>(p), std::vector<double>(p)};
    for (std::size_t i = 0; i < p; ++i) {
        double sr = 0.0, sx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            sr += resp[j * p + i];
            sx += resp[j * p + i] * x[j];
        }
        out.w[i] = sr / n;
        out.mu[i] = sx / sr;
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) ss += resp[j * p + i] * (x[j] - out.mu[i]) * (x[j] - out.mu[i]);
        out.var[i] = ss / sr;
    }
    return out;
}

/// Random mixture with well-spread locations, moderate scales and shapes.
inline snmix::SnMixture random_mixture(std::mt19937_64& g, std::size_t p, double max_abs_lambda = 4.0) {
    std::uniform_real_distribution<double> jitter(-0.5, 0.5), ls(-1.0, 0.7), lam(-max_abs_lambda, max_abs_lambda),
        w(0.3, 1.0);
    snmix::SnMixture psi;
    double total = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
        psi.weights.push_back(w(g));
        total += psi.weights.back();
        psi.components.push_back({3.0 * k + jitter(g), std::exp(ls(g)), lam(g)});
    }
    for (double& v : psi.weights) v /= total;
    return psi;
}

}  // namespace em_oracle
