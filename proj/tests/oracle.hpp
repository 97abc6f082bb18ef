#pragma once

// Independent high-precision reference values for the tests. Nothing here
// calls into the library.

#include <boost/math/constants/constants.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

namespace oracle {

using Real = boost::multiprecision::cpp_bin_float_50;

inline Real phi(const Real& t) {
    return boost::multiprecision::exp(-t * t / 2) / boost::multiprecision::sqrt(2 * boost::math::constants::pi<Real>());
}

inline Real Phi(const Real& t) { return boost::math::erfc(-t / boost::multiprecision::sqrt(Real(2))) / 2; }

/// log of 2/sigma phi((x-mu)/sigma) Phi(lambda (x-mu)/sigma)
inline double sn_logpdf(double x, double mu, double sigma2, double lambda) {
    const Real s = boost::multiprecision::sqrt(Real(sigma2));
    const Real z = (Real(x) - Real(mu)) / s;
    return static_cast<double>(boost::multiprecision::log(2 * phi(z) * Phi(Real(lambda) * z) / s));
}

inline double inverse_mills(double t) { return static_cast<double>(phi(Real(t)) / Phi(Real(t))); }

inline double log_Phi(double t) { return static_cast<double>(boost::multiprecision::log(Phi(Real(t)))); }

}  // namespace oracle
