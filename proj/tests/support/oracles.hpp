#pragma once

// Independent numerical oracles shared by unit and acceptance tests. None of
// these call into the library's Bessel code.

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/constants/constants.hpp>

namespace oracle {

// Unnormalized log density of w = mu^T z for vMF(kappa) on S^{d-1}, shifted
// by -kappa so it stays bounded for large kappa.
inline double radial_log_density(double w, double kappa, int d) {
  const double a = 0.5 * (d - 3);
  const double base = std::max(0.0, (1.0 - w) * (1.0 + w));
  const double tail = a == 0.0 ? 0.0 : a * std::log(base);
  return kappa * (w - 1.0) + tail;
}

template <typename F>
double integrate(F&& f, double lo, double hi) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-14);
}

// KL(vMF(kappa) || uniform) = kappa E[w] - log Z_kappa + log Z_0, where
// Z_kappa = int e^{kappa w} (1-w^2)^{(d-3)/2} dw, all by adaptive quadrature.
inline double kl_by_quadrature(double kappa, int d) {
  auto dens = [&](double w) { return std::exp(radial_log_density(w, kappa, d)); };
  auto dens0 = [&](double w) { return std::exp(radial_log_density(w, 0.0, d)); };
  const double z = integrate(dens, -1.0, 1.0);
  const double mean = integrate([&](double w) { return w * dens(w); }, -1.0, 1.0) / z;
  const double log_zk = kappa + std::log(z);
  const double log_z0 = std::log(integrate(dens0, -1.0, 1.0));
  return kappa * mean - log_zk + log_z0;
}

// E[w] under the radial density, by quadrature.
inline double mean_w_by_quadrature(double kappa, int d) {
  auto dens = [&](double w) { return std::exp(radial_log_density(w, kappa, d)); };
  return integrate([&](double w) { return w * dens(w); }, -1.0, 1.0) / integrate(dens, -1.0, 1.0);
}

// Kolmogorov-Smirnov statistic of samples against the radial CDF. The CDF is
// accumulated piecewise between consecutive sorted samples.
inline double ks_radial(std::vector<double> samples, double kappa, int d) {
  std::sort(samples.begin(), samples.end());
  auto dens = [&](double w) { return std::exp(radial_log_density(w, kappa, d)); };
  const double total = integrate(dens, -1.0, 1.0);
  const double n = static_cast<double>(samples.size());
  double cdf = 0.0;
  double prev = -1.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double w = std::clamp(samples[i], -1.0, 1.0);
    if (w > prev) {
      cdf += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(dens, prev, w, 0, 0) / total;
      prev = w;
    }
    worst = std::max({worst, std::abs((i + 1) / n - cdf), std::abs(cdf - i / n)});
  }
  return worst;
}

// Asymptotic Kolmogorov survival function with Stephens' small-n correction.
inline double ks_pvalue(double stat, std::size_t n) {
  const double rn = std::sqrt(static_cast<double>(n));
  const double lambda = (rn + 0.12 + 0.11 / rn) * stat;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// ---- two-dimensional edit vectors ----
// Both integrals below use Gauss-Legendre in the radius and the periodic
// trapezoid rule in the angle, which converges geometrically for smooth
// integrands.

inline constexpr int kAngles = 96;

// log of the integral of exp(logp(z)) against the prior on R^2 whose angle
// is uniform and whose norm is uniform on [0, radius].
template <typename LogP>
double log_prior_marginal_2d(LogP&& logp, double radius) {
  const double two_pi = boost::math::constants::two_pi<double>();
  auto ring = [&](double r) {
    double s = 0.0;
    for (int j = 0; j < kAngles; ++j) {
      const double t = two_pi * j / kAngles;
      s += std::exp(logp(r * std::cos(t), r * std::sin(t)));
    }
    return s / kAngles;
  };
  return std::log(boost::math::quadrature::gauss<double, 40>::integrate(ring, 0.0, radius) / radius);
}

// E[g(z)] for z = r (cos a, sin a) where a - atan2(f) follows the circular
// vMF(kappa) and r is uniform on [lo, lo + width]. f = 0 means a uniform
// angle.
template <typename G>
double posterior_expectation_2d(G&& g, double f0, double f1, double kappa, double lo, double width) {
  const double two_pi = boost::math::constants::two_pi<double>();
  const bool flat = f0 == 0.0 && f1 == 0.0;
  const double phi = flat ? 0.0 : std::atan2(f1, f0);
  const double k = flat ? 0.0 : kappa;
  double norm = 0.0;
  std::vector<double> weight(kAngles);
  for (int j = 0; j < kAngles; ++j) {
    weight[j] = std::exp(k * (std::cos(two_pi * j / kAngles) - 1.0));
    norm += weight[j];
  }
  auto ring = [&](double r) {
    double s = 0.0;
    for (int j = 0; j < kAngles; ++j) {
      const double a = phi + two_pi * j / kAngles;
      s += weight[j] * g(r * std::cos(a), r * std::sin(a));
    }
    return s / norm;
  };
  return boost::math::quadrature::gauss<double, 20>::integrate(ring, lo, lo + width) / width;
}

}  // namespace oracle
