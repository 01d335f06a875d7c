#include "vmf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "error.hpp"

namespace protoedit::vmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

double log_bessel_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  double log_scale = 0.0;
  for (int k = 0; k < 100000; ++k) {
    term *= q / ((k + 1.0) * (nu + k + 1.0));
    sum += term;
    if (term < sum * 1e-17) break;
    if (sum > 1e250) {
      log_scale += std::log(sum);
      term /= sum;
      sum = 1.0;
    }
  }
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + log_scale + std::log(sum);
}

// Large-argument expansion: I_nu(x) ~ e^x / sqrt(2 pi x) sum_k (-1)^k a_k / x^k.
double log_bessel_hankel(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  double prev = kInf;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (8.0 * k * x);
    const double mag = std::abs(term);
    if (mag > prev) break;  // asymptotic series started diverging
    sum += term;
    if (mag < 1e-17 * std::abs(sum)) break;
    prev = mag;
  }
  return x - 0.5 * (kLogTwoPi + std::log(x)) + std::log(sum);
}

// Coefficients of the Debye polynomials u_k(t), generated from
//   u_{k+1} = t^2 (1 - t^2) u_k' / 2 + 1/8 int_0^t (1 - 5 s^2) u_k(s) ds.
struct DebyeTable {
  static constexpr int kTerms = 13;
  std::vector<std::vector<double>> coeffs;

  DebyeTable() {
    coeffs.push_back({1.0});
    for (int k = 0; k + 1 < kTerms; ++k) {
      const auto& u = coeffs.back();
      std::vector<double> next(u.size() + 3, 0.0);
      for (std::size_t j = 1; j < u.size(); ++j) {
        const double d = j * u[j];  // coefficient of t^{j-1} in u'
        next[j + 1] += 0.5 * d;
        next[j + 3] -= 0.5 * d;
      }
      for (std::size_t j = 0; j < u.size(); ++j) {
        next[j + 1] += u[j] / (8.0 * (j + 1));
        next[j + 3] -= 5.0 * u[j] / (8.0 * (j + 3));
      }
      coeffs.push_back(std::move(next));
    }
  }
};

double log_bessel_debye(double nu, double x) {
  static const DebyeTable table;
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  // Individual u_k(t) can pass close to zero, so divergence is judged on the
  // envelope of two consecutive terms rather than on a single term.
  double sum = 0.0;
  double nu_pow = 1.0;
  double envelope = kInf;
  double last = kInf;
  for (const auto& poly : table.coeffs) {
    double value = 0.0;
    for (std::size_t j = poly.size(); j-- > 0;) value = value * t + poly[j];
    const double term = value / nu_pow;
    const double mag = std::abs(term);
    if (mag > envelope) break;
    sum += term;
    envelope = std::max(mag, last);
    last = mag;
    nu_pow *= nu;
  }
  return nu * eta - 0.5 * (kLogTwoPi + std::log(nu)) - 0.5 * std::log(root) + std::log(sum);
}

}  // namespace

double log_bessel_i(double order, double x) {
  if (!(order >= 0.0) || !(x >= 0.0) || std::isinf(order) || std::isinf(x)) {
    fail(ErrorCode::kInvalidArgument, "log_bessel_i: need finite order >= 0 and x >= 0, got order=" +
                                          std::to_string(order) + " x=" + std::to_string(x));
  }
  if (x == 0.0) return order == 0.0 ? 0.0 : -kInf;
  if (x < std::max(30.0, order)) return log_bessel_series(order, x);
  if (order < 10.0) return log_bessel_hankel(order, x);
  return log_bessel_debye(order, x);
}

double mean_resultant_length(double kappa, int d) {
  require(kappa >= 0.0 && d >= 2, "mean_resultant_length: need kappa >= 0, d >= 2");
  if (kappa == 0.0) return 0.0;
  const double half = 0.5 * d;
  return std::exp(log_bessel_i(half, kappa) - log_bessel_i(half - 1.0, kappa));
}

double log_normalizer(double kappa, int d) {
  require(kappa >= 0.0 && d >= 2, "log_normalizer: need kappa >= 0, d >= 2");
  const double half = 0.5 * d;
  if (kappa == 0.0) {
    // 1 / area(S^{d-1}) = Gamma(d/2) / (2 pi^{d/2})
    return std::lgamma(half) - std::log(2.0) - half * std::log(std::numbers::pi);
  }
  return (half - 1.0) * std::log(kappa) - half * kLogTwoPi - log_bessel_i(half - 1.0, kappa);
}

double kl_to_uniform(double kappa, int d) {
  require(kappa >= 0.0 && d >= 2, "kl_to_uniform: need kappa >= 0, d >= 2");
  if (kappa == 0.0) return 0.0;
  const double kl = kappa * mean_resultant_length(kappa, d) + log_normalizer(kappa, d) -
                    log_normalizer(0.0, d);
  return std::max(kl, 0.0);
}

double kl_alternative_form(double kappa, int d) {
  require(kappa > 0.0 && d >= 2, "kl_alternative_form: need kappa > 0, d >= 2");
  const double half = 0.5 * d;
  const double i_half = std::exp(log_bessel_i(half, kappa));
  const double i_next = std::exp(log_bessel_i(half + 1.0, kappa));
  const double ratio = (i_next + i_half * half / kappa) / (i_half - half / kappa);
  return kappa * ratio + half * std::log(kappa / 2.0) - log_bessel_i(half, kappa) -
         std::lgamma(half + 1.0);
}

void VmfParams::validate() const {
  require(dim() >= 2, "vMF dimension must be >= 2");
  require(kappa >= 0.0 && std::isfinite(kappa), "vMF kappa must be finite and >= 0");
  double sq = 0.0;
  for (double v : mean_dir) sq += v * v;
  require(std::abs(std::sqrt(sq) - 1.0) <= 1e-9, "vMF mean direction must have unit norm");
}

double sample_radial(double kappa, int d, Rng& rng) {
  require(kappa >= 0.0 && d >= 2, "sample_radial: need kappa >= 0, d >= 2");
  const double m = d - 1.0;
  // b = (-2k + sqrt(4k^2 + m^2)) / m, rearranged to avoid cancellation.
  const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double one_minus_x0_sq = 4.0 * b / ((1.0 + b) * (1.0 + b));
  const double c = kappa * x0 + m * std::log(one_minus_x0_sq);

  std::gamma_distribution<double> gamma(0.5 * m, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double g1 = gamma(rng);
    const double g2 = gamma(rng);
    const double z = g1 / (g1 + g2);
    const double w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = unif(rng);
    if (kappa * w + m * std::log(1.0 - x0 * w) - c >= std::log(u)) return w;
  }
  fail(ErrorCode::kNumeric, "vMF rejection sampler exceeded 1000 rejections (kappa=" +
                                std::to_string(kappa) + ", d=" + std::to_string(d) + ")");
}

std::vector<double> sample_uniform_sphere(int d, Rng& rng) {
  require(d >= 1, "sample_uniform_sphere: d must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  for (;;) {
    double sq = 0.0;
    for (double& x : v) {
      x = normal(rng);
      sq += x * x;
    }
    if (sq > 1e-300) {
      const double inv = 1.0 / std::sqrt(sq);
      for (double& x : v) x *= inv;
      return v;
    }
  }
}

std::vector<double> sample_orthogonal_direction(std::span<const double> unit_mean, Rng& rng) {
  const int d = static_cast<int>(unit_mean.size());
  require(d >= 2, "sample_orthogonal_direction: d must be >= 2");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  for (;;) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) {
      v[i] = normal(rng);
      dot += v[i] * unit_mean[i];
    }
    double sq = 0.0;
    for (int i = 0; i < d; ++i) {
      v[i] -= dot * unit_mean[i];
      sq += v[i] * v[i];
    }
    if (sq > 1e-20) {
      const double inv = 1.0 / std::sqrt(sq);
      for (double& x : v) x *= inv;
      return v;
    }
  }
}

std::vector<double> sample(const VmfParams& params, Rng& rng) {
  params.validate();
  const int d = params.dim();
  const double w = sample_radial(params.kappa, d, rng);
  const auto v = sample_orthogonal_direction(params.mean_dir, rng);
  const double s = std::sqrt(std::max(0.0, (1.0 - w) * (1.0 + w)));
  std::vector<double> z(d);
  for (int i = 0; i < d; ++i) z[i] = w * params.mean_dir[i] + s * v[i];
  return z;
}

}  // namespace protoedit::vmf
