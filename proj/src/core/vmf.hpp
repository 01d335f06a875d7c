#pragma once

// Directional statistics on the unit sphere S^{d-1}: modified Bessel
// functions in log domain, the von Mises-Fisher distribution and its KL
// divergence to the uniform distribution.

#include <span>
#include <vector>

#include "random.hpp"

namespace protoedit::vmf {

// log I_order(x) for order >= 0, x >= 0. Never overflows: the positive power
// series is summed with running rescaling for x < max(30, order), the Hankel
// large-argument expansion covers small orders beyond that and the Debye
// uniform expansion covers the rest.
double log_bessel_i(double order, double x);

// A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa) = E[mu^T z] under vMF.
double mean_resultant_length(double kappa, int d);

// log C_d(kappa), the log normalizer of the vMF density on S^{d-1}
// (density C_d(kappa) exp(kappa mu^T z) w.r.t. surface measure).
double log_normalizer(double kappa, int d);

// KL(vMF(mu, kappa) || uniform on S^{d-1}). Independent of mu:
//   kappa A_d(kappa) + log C_d(kappa) - log C_d(0).
double kl_to_uniform(double kappa, int d);

// The alternative rendering
//   kappa (I_{d/2+1} + I_{d/2} d/(2 kappa)) / (I_{d/2} - d/(2 kappa))
//     + d/2 log(kappa/2) - log(I_{d/2} Gamma(d/2+1))
// kept only so reports can show how far it is from kl_to_uniform.
double kl_alternative_form(double kappa, int d);

struct VmfParams {
  std::vector<double> mean_dir;
  double kappa = 0.0;

  int dim() const { return static_cast<int>(mean_dir.size()); }
  // Throws unless |mean_dir| = 1 +- 1e-9, kappa >= 0 and d >= 2.
  void validate() const;
};

// Radial component w = mu^T z of a vMF(kappa) draw on S^{d-1}, by Wood's
// envelope rejection scheme. Throws after 1000 rejections.
double sample_radial(double kappa, int d, Rng& rng);

std::vector<double> sample_uniform_sphere(int d, Rng& rng);

// Uniform unit vector orthogonal to `unit_mean` (d >= 2).
std::vector<double> sample_orthogonal_direction(std::span<const double> unit_mean, Rng& rng);

std::vector<double> sample(const VmfParams& params, Rng& rng);

}  // namespace protoedit::vmf
