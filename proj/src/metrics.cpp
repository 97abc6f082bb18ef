#include "snmix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "snmix/estimator.hpp"

namespace snmix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Cell {
    double mid;     // point where the mixing CDFs are evaluated
    double weight;  // integral of the axis weight over the cell
};

// Axis cells aligned with the atom coordinates, so that both mixing CDFs are
// constant on every cell; finite segments are further split so the axis has
// about `resolution` cells. `weight_integral(lo, hi)` integrates the axis
// weight; infinite ends are allowed when it handles them.
template <class WeightIntegral>
std::vector<Cell> axis_cells(std::vector<double> breaks, double lo, double hi, int resolution,
                             WeightIntegral weight_integral) {
    breaks.push_back(lo);
    breaks.push_back(hi);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    double finite_len = 0.0;
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k)
        if (std::isfinite(breaks[k]) && std::isfinite(breaks[k + 1])) finite_len += breaks[k + 1] - breaks[k];

    std::vector<Cell> cells;
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        const double a = breaks[k], b = breaks[k + 1];
        if (!std::isfinite(a)) {
            cells.push_back({b - 1.0, weight_integral(a, b)});
        } else if (!std::isfinite(b)) {
            cells.push_back({a + 1.0, weight_integral(a, b)});
        } else {
            const int m = finite_len > 0.0
                              ? std::max(1, static_cast<int>(std::lround(resolution * (b - a) / finite_len)))
                              : 1;
            const double h = (b - a) / m;
            for (int s = 0; s < m; ++s) {
                const double c0 = a + s * h, c1 = (s + 1 == m) ? b : a + (s + 1) * h;
                cells.push_back({0.5 * (c0 + c1), weight_integral(c0, c1)});
            }
        }
    }
    return cells;
}

// Integral of exp(-|u|) over [a, b], a <= b, ends possibly infinite.
double laplace_mass(double a, double b) {
    auto cdf = [](double u) {
        if (u == -kInf) return 0.0;
        if (u == kInf) return 2.0;
        return u < 0.0 ? std::exp(u) : 2.0 - std::exp(-u);
    };
    return cdf(b) - cdf(a);
}

double grid_integral(const SnMixture& a, const SnMixture& b, const std::vector<Cell>& cx,
                     const std::vector<Cell>& cy, const std::vector<Cell>& cz) {
    double total = 0.0;
    for (const auto& x : cx)
        for (const auto& y : cy) {
            const double wxy = x.weight * y.weight;
            if (wxy == 0.0) continue;
            for (const auto& z : cz) {
                const ThetaPoint t{x.mid, y.mid, z.mid};
                total += std::abs(mixing_cdf(a, t) - mixing_cdf(b, t)) * wxy * z.weight;
            }
        }
    return total;
}

SnMixture transform_atoms(const SnMixture& psi, const BoxRegion& region, bool& clamped) {
    SnMixture out = psi;
    for (auto& c : out.components) {
        const ThetaPoint t = dstar_transform({c.mu, c.sigma2, c.lambda});
        const double v[3] = {t.mu, t.sigma2, t.lambda};
        double w[3];
        for (int k = 0; k < 3; ++k) {
            w[k] = std::clamp(v[k], region.lower[k], region.upper[k]);
            clamped = clamped || w[k] != v[k];
        }
        // The transformed coordinates are stored in the component slots; only
        // mixing_cdf reads them.
        c.mu = w[0];
        c.sigma2 = w[1];
        c.lambda = w[2];
    }
    return out;
}

}  // namespace

void BoxRegion::validate() const {
    for (int k = 0; k < 3; ++k)
        if (!(lower[k] < upper[k])) throw DomainError("box region needs lower < upper on every axis");
    if (resolution < 8) throw DomainError("box region resolution must be at least 8");
}

double mixing_cdf(const SnMixture& psi, ThetaPoint theta) {
    double s = 0.0;
    for (std::size_t k = 0; k < psi.order(); ++k) {
        const auto& c = psi.components[k];
        if (c.mu <= theta.mu && c.sigma2 <= theta.sigma2 && c.lambda <= theta.lambda) s += psi.weights[k];
    }
    return s;
}

double distance_D(const SnMixture& a, const SnMixture& b, int grid_resolution) {
    a.validate();
    b.validate();
    if (grid_resolution < 8) throw DomainError("grid resolution must be at least 8");
    std::vector<double> bm, bs, bl;
    for (const auto* m : {&a, &b})
        for (const auto& c : m->components) {
            bm.push_back(c.mu);
            bs.push_back(c.sigma2);
            bl.push_back(c.lambda);
        }
    // Finite parts of the axes: the atom range padded by 14 weight units.
    auto padded = [](std::vector<double>& v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        v.push_back(*lo - 14.0);
        v.push_back(*hi + 14.0);
    };
    padded(bm);
    padded(bl);
    bs.push_back(*std::max_element(bs.begin(), bs.end()) + 14.0);
    const auto cx = axis_cells(bm, -kInf, kInf, grid_resolution, laplace_mass);
    const auto cy = axis_cells(bs, 0.0, kInf, grid_resolution, laplace_mass);
    const auto cz = axis_cells(bl, -kInf, kInf, grid_resolution, laplace_mass);
    return grid_integral(a, b, cx, cy, cz);
}

DstarValue distance_Dstar(const SnMixture& a, const SnMixture& b, const BoxRegion& region) {
    a.validate();
    b.validate();
    region.validate();
    DstarValue out;
    const SnMixture ta = transform_atoms(a, region, out.clamped);
    const SnMixture tb = transform_atoms(b, region, out.clamped);
    std::array<std::vector<double>, 3> breaks;
    for (const auto* m : {&ta, &tb})
        for (const auto& c : m->components) {
            breaks[0].push_back(c.mu);
            breaks[1].push_back(c.sigma2);
            breaks[2].push_back(c.lambda);
        }
    auto length = [](double lo, double hi) { return hi - lo; };
    const auto cx = axis_cells(breaks[0], region.lower[0], region.upper[0], region.resolution, length);
    const auto cy = axis_cells(breaks[1], region.lower[1], region.upper[1], region.resolution, length);
    const auto cz = axis_cells(breaks[2], region.lower[2], region.upper[2], region.resolution, length);
    out.value = grid_integral(ta, tb, cx, cy, cz);
    return out;
}

ThetaPoint dstar_transform(ThetaPoint theta) noexcept {
    const double t = std::copysign(std::log1p(std::abs(theta.lambda)), theta.lambda);
    return {theta.mu, std::log(theta.sigma2) / 5.0, t / 2.0};
}

DegeneracyFlags degeneracy_flags(const SnMixture& psi) {
    DegeneracyFlags f;
    f.min_sigma2 = kInf;
    for (const auto& c : psi.components) {
        f.min_sigma2 = std::min(f.min_sigma2, c.sigma2);
        f.max_abs_lambda = std::max(f.max_abs_lambda, std::abs(c.lambda));
    }
    f.sigma_degenerate = f.min_sigma2 < kSigma2DegenerateThreshold;
    f.lambda_divergent = f.max_abs_lambda > kLambdaDivergentThreshold;
    return f;
}

std::vector<ParamError> bias_rmse(std::span<const SnMixture> estimates, const SnMixture& truth, bool log_sigma) {
    truth.validate();
    if (estimates.empty()) throw DomainError("bias/RMSE needs at least one estimate");
    const std::size_t p = truth.order();
    for (const auto& e : estimates)
        if (e.order() != p) throw DomainError("estimates and truth differ in the number of components");

    std::vector<ParamError> out;
    const double m = static_cast<double>(estimates.size());
    auto add = [&](std::string name, auto value_of, double truth_value) {
        double sum = 0.0, sq = 0.0;
        for (const auto& e : estimates) {
            const double err = value_of(e) - truth_value;
            sum += err;
            sq += err * err;
        }
        out.push_back({std::move(name), sum / m, std::sqrt(sq / m)});
    };
    for (std::size_t k = 0; k < p; ++k) {
        const std::string idx = std::to_string(k + 1);
        const auto& t = truth.components[k];
        add("mu_" + idx, [k](const SnMixture& e) { return e.components[k].mu; }, t.mu);
        if (log_sigma)
            add("log_sigma2_" + idx, [k](const SnMixture& e) { return std::log(e.components[k].sigma2); },
                std::log(t.sigma2));
        else
            add("sigma2_" + idx, [k](const SnMixture& e) { return e.components[k].sigma2; }, t.sigma2);
        add("lambda_" + idx, [k](const SnMixture& e) { return e.components[k].lambda; }, t.lambda);
        add("pi_" + idx, [k](const SnMixture& e) { return e.weights[k]; }, truth.weights[k]);
    }
    return out;
}

}  // namespace snmix
