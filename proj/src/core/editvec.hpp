#pragma once

// Edit vectors: the multiset word difference between a prototype and its
// target, the deterministic representation f built from it, the prior p(z)
// and the reparameterized approximate posterior q(z | x, x').

#include <cstddef>
#include <span>
#include <vector>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "random.hpp"

namespace protoedit::editvec {

inline constexpr double kDefaultNormMax = 10.0;

struct EditNoiseConfig {
  double kappa = 0.0;
  double epsilon = 1.0;
  double norm_max = kDefaultNormMax;

  // Throws unless kappa >= 0 and 0 < epsilon <= norm_max.
  void validate() const;
};

// Tokens added to (inserted) and removed from (deleted) the prototype, as
// sorted multisets with common occurrences cancelled.
struct EditDiff {
  std::vector<TokenId> inserted;
  std::vector<TokenId> deleted;
  friend bool operator==(const EditDiff&, const EditDiff&) = default;
};

EditDiff word_diff(std::span<const TokenId> x, std::span<const TokenId> x_prime);

// The word vectors Phi (|V| x d_w), parameters of q only.
class EditEmbeddings {
 public:
  EditEmbeddings() = default;
  EditEmbeddings(std::size_t vocab_size, std::size_t word_dim, Rng& rng, double init_scale = 0.1);

  std::size_t vocab_size() const { return phi().value.rows(); }
  std::size_t word_dim() const { return phi().value.cols(); }
  std::size_t edit_dim() const { return 2 * word_dim(); }

  ad::Parameter& phi() { return params_[0]; }
  const ad::Parameter& phi() const { return params_[0]; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  ad::ParameterSet params_;
};

struct EditRepresentation {
  std::vector<double> f;     // insert-sum followed by delete-sum
  double norm = 0.0;
  double truncated_norm = 0.0;  // min(norm, norm_max - epsilon)
  std::vector<double> direction;  // f / norm, empty when degenerate
  bool degenerate = false;        // f == 0
};

EditRepresentation edit_representation(const EditDiff& diff, const EditEmbeddings& emb,
                                       const EditNoiseConfig& cfg);

// Mode of q: truncated_norm * direction (zero vector when degenerate).
std::vector<double> posterior_mode(const EditRepresentation& rep);

struct EditVector {
  std::vector<double> z;
  double norm = 0.0;
  std::vector<double> direction;
};

EditVector sample_prior(std::size_t word_dim, Rng& rng, double norm_max = kDefaultNormMax);

// Parameter-free randomness of one posterior draw. `w` is the vMF radial
// component, `gaussian` is projected orthogonally to f_dir to obtain the
// tangent direction (or normalized directly when f is degenerate), and `u`
// places the norm inside its window.
struct PosteriorNoise {
  double w = 0.0;
  std::vector<double> gaussian;
  double u = 0.0;

  static PosteriorNoise draw(double kappa, std::size_t dim, bool degenerate, Rng& rng);
};

EditVector sample_posterior(std::span<const TokenId> x, std::span<const TokenId> x_prime,
                            const EditEmbeddings& emb, const EditNoiseConfig& cfg, Rng& rng);

// Deterministic composition of z from f and fixed noise, without a tape.
EditVector compose_posterior(const EditRepresentation& rep, const PosteriorNoise& noise,
                             const EditNoiseConfig& cfg);

// Differentiable versions for training. `f` is recorded from Phi rows, and
// z is built from it with `noise` held fixed, so gradients reach Phi.
ad::Var edit_representation(ad::Tape& tape, const EditDiff& diff, EditEmbeddings& emb);
ad::Var compose_posterior(ad::Tape& tape, ad::Var f, bool degenerate, const PosteriorNoise& noise,
                          const EditNoiseConfig& cfg);

// KL(q || p) = KL(vMF(kappa) || uniform on S^{d-1}) + log(norm_max / epsilon),
// the same for every (x, x') pair.
double kl_total(const EditNoiseConfig& cfg, int d);

}  // namespace protoedit::editvec
