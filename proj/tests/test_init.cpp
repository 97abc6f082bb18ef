#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "snmix/estimator.hpp"
#include "snmix/init.hpp"
#include "snmix/sampler.hpp"

using namespace snmix;

namespace {

void check_sane(const SnMixture& psi) {
    CHECK(psi.valid());
    for (const auto& c : psi.components) {
        CHECK(c.sigma2 >= kInitMinSigma2);
        CHECK(std::abs(c.lambda) <= kInitMaxAbsLambda);
    }
    for (std::size_t k = 1; k < psi.order(); ++k) CHECK(psi.components[k - 1].mu <= psi.components[k].mu);
}

}  // namespace

TEST_CASE("maximum skewness constant") {
    const double pi = std::numbers::pi;
    CHECK(kSnMaxSkewness == doctest::Approx(std::sqrt(2.0) * (4.0 - pi) / std::pow(pi - 2.0, 1.5)).epsilon(1e-13));
}

TEST_CASE("moment inversion") {
    SUBCASE("symmetric cluster gives a normal component") {
        const auto c = sn_from_moments(1.5, 2.0, 0.0);
        CHECK(c.lambda == 0.0);
        CHECK(c.mu == 1.5);
        CHECK(c.sigma2 == 2.0);
    }
    SUBCASE("analytic SN moments are inverted exactly") {
        const double b = std::sqrt(2.0 / std::numbers::pi);
        for (const SnComponent t : {SnComponent{0.0, 1.0, 2.0}, SnComponent{-1.0, 3.0, -1.5}, SnComponent{4.0, 0.2, 0.5}}) {
            const double d = delta_of_lambda(t.lambda), s = std::sqrt(t.sigma2);
            const double mean = t.mu + s * d * b;
            const double var = t.sigma2 * (1.0 - b * b * d * d);
            const double skew = (4.0 - std::numbers::pi) / 2.0 * std::pow(b * d, 3) / std::pow(1.0 - b * b * d * d, 1.5);
            const auto c = sn_from_moments(mean, var, skew);
            CHECK(c.lambda == doctest::Approx(t.lambda).epsilon(1e-9));
            CHECK(c.sigma2 == doctest::Approx(t.sigma2).epsilon(1e-9));
            CHECK(c.mu == doctest::Approx(t.mu).epsilon(1e-9));
        }
    }
    SUBCASE("skewness beyond the attainable range is clamped") {
        const auto c = sn_from_moments(0.0, 1.0, 5.0);
        CHECK(std::isfinite(c.lambda));
        CHECK(c.lambda > 0.0);
        CHECK(c.lambda <= kInitMaxAbsLambda);
    }
}

TEST_CASE("K-means start on a single SN(0,1,5) sample") {
    RngHandle rng(3);
    const auto x = sample_mixture({{1.0}, {{0.0, 1.0, 5.0}}}, 100000, rng);
    const auto rep = kmeans_moments_init(x, 1, 17);
    check_sane(rep.psi0);
    CHECK(rep.scheme == InitKind::KMeansMoments);
    CHECK(rep.psi0.components[0].lambda > 0.0);
    CHECK(std::abs(rep.psi0.components[0].mu) < 0.1);
}

TEST_CASE("K-means start separates Model I") {
    RngHandle rng(4);
    const auto x = sample_mixture(fixtures::model_one(), 10000, rng);
    const auto rep = kmeans_moments_init(x, 2, 9);
    check_sane(rep.psi0);
    CHECK(std::abs(rep.psi0.weights[0] - 0.5) < 0.1);
    CHECK(std::abs(rep.psi0.weights[1] - 0.5) < 0.1);
    CHECK(kmeans_moments_init(x, 2, 9).psi0.components[0].mu == rep.psi0.components[0].mu);
}

TEST_CASE("K-means start handles ties and rejects tiny samples") {
    std::vector<double> x(30, 1.0);
    x[0] = 2.0;
    const auto rep = kmeans_moments_init(x, 3, 1);
    check_sane(rep.psi0);
    CHECK(rep.psi0.order() == 3);
    CHECK_THROWS_AS(kmeans_moments_init(std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0}, 2, 1), DomainError);
}

TEST_CASE("true-value start") {
    const auto psi = fixtures::model_one();
    const auto rep = true_value_init(psi);
    CHECK(rep.psi0.weights == psi.weights);
    CHECK(rep.psi0.components[0].mu == psi.components[0].mu);
    CHECK(rep.psi0.components[1].lambda == psi.components[1].lambda);

    SnMixture swapped{{0.5, 0.5}, {psi.components[1], psi.components[0]}};
    CHECK(true_value_init(swapped).psi0.components[0].mu == -2.0);

    SnMixture off{{0.5, 0.5 + 5e-10}, psi.components};
    const auto fixed = true_value_init(off).psi0;
    CHECK(std::abs(fixed.weights[0] + fixed.weights[1] - 1.0) < 1e-15);
}

TEST_CASE("perturbed start") {
    const auto psi = fixtures::model_one();
    SUBCASE("p equal to the true order only jitters locations") {
        const auto rep = perturbed_init(psi, 2, 5);
        check_sane(rep.psi0);
        CHECK(rep.psi0.weights[0] == 0.5);
        CHECK(rep.psi0.components[0].sigma2 == 1.0);
        CHECK(rep.psi0.components[1].lambda == 1.0);
        CHECK(std::abs(rep.psi0.components[0].mu + 2.0) < 0.6);
    }
    SUBCASE("p = 4 splits each parent weight in two") {
        const auto rep = perturbed_init(psi, 4, 5);
        check_sane(rep.psi0);
        for (double w : rep.psi0.weights) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("weights sum to one for any order") {
        const SnMixture three{{0.2, 0.3, 0.5}, {{-3.0, 1.0, 0.0}, {0.0, 1.0, 1.0}, {3.0, 1.0, -1.0}}};
        for (std::size_t p = 3; p <= 8; ++p) {
            const auto w = perturbed_init(three, p, p).psi0.weights;
            CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) <= 1e-15);
        }
    }
    SUBCASE("deterministic given seed") {
        CHECK(perturbed_init(psi, 3, 8).psi0.components[2].mu == perturbed_init(psi, 3, 8).psi0.components[2].mu);
    }
    CHECK_THROWS_AS(perturbed_init(psi, 1, 0), DomainError);
}
