#include "editvec.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "vmf.hpp"

namespace protoedit::editvec {

void EditNoiseConfig::validate() const {
  require(kappa >= 0.0 && std::isfinite(kappa), "kappa must be finite and >= 0");
  require(norm_max > 0.0 && std::isfinite(norm_max), "norm_max must be positive");
  require(epsilon > 0.0 && epsilon <= norm_max, "epsilon must lie in (0, norm_max]");
}

EditDiff word_diff(std::span<const TokenId> x, std::span<const TokenId> x_prime) {
  std::vector<TokenId> a(x.begin(), x.end());
  std::vector<TokenId> b(x_prime.begin(), x_prime.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EditDiff diff;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff.inserted));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(diff.deleted));
  return diff;
}

EditEmbeddings::EditEmbeddings(std::size_t vocab_size, std::size_t word_dim, Rng& rng,
                               double init_scale) {
  require(word_dim >= 1, "edit word dimension must be >= 1");
  require(vocab_size >= 1, "edit embeddings need a nonempty vocabulary");
  auto& p = params_.add("edit.phi", ad::Shape{vocab_size, word_dim});
  std::uniform_real_distribution<double> unif(-init_scale, init_scale);
  for (double& v : p.value.values()) v = unif(rng);
}

namespace {

void check_ids(const EditDiff& diff, std::size_t vocab) {
  for (const auto* side : {&diff.inserted, &diff.deleted}) {
    for (TokenId t : *side) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
        fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " outside edit embeddings");
      }
    }
  }
}

double norm_of(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

}  // namespace

EditRepresentation edit_representation(const EditDiff& diff, const EditEmbeddings& emb,
                                       const EditNoiseConfig& cfg) {
  cfg.validate();
  check_ids(diff, emb.vocab_size());
  const std::size_t dw = emb.word_dim();
  const ad::Tensor& phi = emb.phi().value;
  EditRepresentation rep;
  rep.f.assign(2 * dw, 0.0);
  for (TokenId t : diff.inserted)
    for (std::size_t j = 0; j < dw; ++j) rep.f[j] += phi.at(t, j);
  for (TokenId t : diff.deleted)
    for (std::size_t j = 0; j < dw; ++j) rep.f[dw + j] += phi.at(t, j);
  rep.norm = norm_of(rep.f);
  rep.degenerate = rep.norm == 0.0;
  rep.truncated_norm = std::min(rep.norm, cfg.norm_max - cfg.epsilon);
  if (!rep.degenerate) {
    rep.direction = rep.f;
    for (double& v : rep.direction) v /= rep.norm;
  }
  return rep;
}

std::vector<double> posterior_mode(const EditRepresentation& rep) {
  std::vector<double> z(rep.f.size(), 0.0);
  if (rep.degenerate) return z;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rep.truncated_norm * rep.direction[i];
  return z;
}

EditVector sample_prior(std::size_t word_dim, Rng& rng, double norm_max) {
  require(word_dim >= 1, "word_dim must be positive");
  EditVector e;
  e.direction = vmf::sample_uniform_sphere(static_cast<int>(2 * word_dim), rng);
  e.norm = std::uniform_real_distribution<double>(0.0, norm_max)(rng);
  e.z = e.direction;
  for (double& v : e.z) v *= e.norm;
  return e;
}

PosteriorNoise PosteriorNoise::draw(double kappa, std::size_t dim, bool degenerate, Rng& rng) {
  PosteriorNoise n;
  n.w = degenerate ? 0.0 : vmf::sample_radial(kappa, static_cast<int>(dim), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  n.gaussian.resize(dim);
  for (double& g : n.gaussian) g = normal(rng);
  n.u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return n;
}

EditVector compose_posterior(const EditRepresentation& rep, const PosteriorNoise& noise,
                             const EditNoiseConfig& cfg) {
  const std::size_t d = rep.f.size();
  require(noise.gaussian.size() == d, "posterior noise dimension mismatch");
  EditVector e;
  e.direction.resize(d);
  if (rep.degenerate) {
    const double g = norm_of(noise.gaussian);
    for (std::size_t i = 0; i < d; ++i) e.direction[i] = noise.gaussian[i] / g;
    e.norm = cfg.epsilon * noise.u;
  } else {
    double along = 0.0;
    for (std::size_t i = 0; i < d; ++i) along += noise.gaussian[i] * rep.direction[i];
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = noise.gaussian[i] - along * rep.direction[i];
    const double vn = norm_of(v);
    const double s = std::sqrt(std::max(0.0, (1.0 - noise.w) * (1.0 + noise.w)));
    for (std::size_t i = 0; i < d; ++i) e.direction[i] = noise.w * rep.direction[i] + s * v[i] / vn;
    e.norm = rep.truncated_norm + cfg.epsilon * noise.u;
  }
  e.z = e.direction;
  for (double& v : e.z) v *= e.norm;
  return e;
}

EditVector sample_posterior(std::span<const TokenId> x, std::span<const TokenId> x_prime,
                            const EditEmbeddings& emb, const EditNoiseConfig& cfg, Rng& rng) {
  require(!x.empty() && !x_prime.empty(), "sample_posterior needs nonempty sentences");
  const auto rep = edit_representation(word_diff(x, x_prime), emb, cfg);
  const auto noise = PosteriorNoise::draw(cfg.kappa, rep.f.size(), rep.degenerate, rng);
  return compose_posterior(rep, noise, cfg);
}

ad::Var edit_representation(ad::Tape& tape, const EditDiff& diff, EditEmbeddings& emb) {
  check_ids(diff, emb.vocab_size());
  ad::Var phi = tape.parameter(emb.phi());
  const std::size_t dw = emb.word_dim();
  auto side = [&](const std::vector<TokenId>& ids) {
    if (ids.empty()) return tape.constant(ad::Tensor(ad::Shape{dw}));
    return ad::embedding_sum(phi, ids);
  };
  return ad::concat({side(diff.inserted), side(diff.deleted)});
}

ad::Var compose_posterior(ad::Tape& tape, ad::Var f, bool degenerate, const PosteriorNoise& noise,
                          const EditNoiseConfig& cfg) {
  const std::size_t d = f.value().size();
  require(noise.gaussian.size() == d, "posterior noise dimension mismatch");
  if (degenerate) {
    // Nothing upstream to differentiate: z is pure noise.
    ad::Tensor z(ad::Shape{d});
    const double g = norm_of(noise.gaussian);
    for (std::size_t i = 0; i < d; ++i) z[i] = noise.gaussian[i] / g * cfg.epsilon * noise.u;
    return tape.constant(std::move(z));
  }
  ad::Var norm = ad::l2_norm(f);
  ad::Var dir = ad::div_scalar(f, norm);
  ad::Var g = tape.constant(ad::Tensor::vector(noise.gaussian));
  ad::Var tangent = ad::sub(g, ad::mul_scalar(dir, ad::dot(g, dir)));
  ad::Var v = ad::div_scalar(tangent, ad::l2_norm(tangent));
  const double s = std::sqrt(std::max(0.0, (1.0 - noise.w) * (1.0 + noise.w)));
  ad::Var z_dir = ad::add(ad::scale(dir, noise.w), ad::scale(v, s));
  ad::Var z_norm = ad::add_constant(ad::min_constant(norm, cfg.norm_max - cfg.epsilon),
                                    cfg.epsilon * noise.u);
  return ad::mul_scalar(z_dir, z_norm);
}

double kl_total(const EditNoiseConfig& cfg, int d) {
  cfg.validate();
  return vmf::kl_to_uniform(cfg.kappa, d) + std::log(cfg.norm_max / cfg.epsilon);
}

}  // namespace protoedit::editvec
