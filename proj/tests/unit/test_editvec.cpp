#include <doctest.h>

#include <cmath>
#include <functional>

#include "editvec.hpp"
#include "error.hpp"
#include "oracles.hpp"
#include "vmf.hpp"

using namespace protoedit;
using namespace protoedit::editvec;

namespace {

// Token ids for readability.
constexpr TokenId kThe = 4, kFood = 5, kWas = 6, kGood = 7, kGreat = 8, kA = 9, kB = 10;

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("word_diff") {
  std::vector<TokenId> xp = {kThe, kFood, kWas, kGood}, x = {kThe, kFood, kWas, kGreat};
  EditDiff d = word_diff(x, xp);
  CHECK(d.inserted == std::vector<TokenId>{kGreat});
  CHECK(d.deleted == std::vector<TokenId>{kGood});
  CHECK(word_diff(x, x) == EditDiff{});
  std::vector<TokenId> aab = {kA, kA, kB}, abb = {kA, kB, kB};
  EditDiff m = word_diff(abb, aab);
  CHECK(m.inserted == std::vector<TokenId>{kB});
  CHECK(m.deleted == std::vector<TokenId>{kA});
  EditDiff swapped = word_diff(xp, x);
  CHECK(swapped.inserted == d.deleted);
  CHECK(swapped.deleted == d.inserted);
}

TEST_CASE("edit representation") {
  Rng rng(1);
  EditEmbeddings emb(12, 3, rng);
  EditNoiseConfig cfg{0.0, 1.0};
  EditRepresentation r = edit_representation(EditDiff{{kGood}, {}}, emb, cfg);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(r.f[j] == emb.phi().value.at(kGood, j));
    CHECK(r.f[3 + j] == 0.0);
  }
  CHECK_FALSE(r.degenerate);
  EditRepresentation z = edit_representation(EditDiff{}, emb, cfg);
  CHECK(z.degenerate);
  CHECK(norm(z.f) == 0.0);

  // |f| = 12 with epsilon 1 truncates to 9.
  emb.phi().value.fill(0.0);
  emb.phi().value.at(kA, 0) = 12.0;
  EditRepresentation t = edit_representation(EditDiff{{kA}, {}}, emb, cfg);
  CHECK(t.norm == 12.0);
  CHECK(t.truncated_norm == 9.0);

  // Swapping arguments swaps halves.
  Rng r2(2);
  EditEmbeddings e2(12, 3, r2);
  std::vector<TokenId> x = {kThe, kGreat, kB}, xp = {kThe, kGood};
  auto fwd = edit_representation(word_diff(x, xp), e2, cfg);
  auto bwd = edit_representation(word_diff(xp, x), e2, cfg);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(fwd.f[j] == bwd.f[3 + j]);
    CHECK(fwd.f[3 + j] == bwd.f[j]);
  }
  CHECK_THROWS_AS(edit_representation(EditDiff{{99}, {}}, e2, cfg), Error);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((EditNoiseConfig{-1.0, 1.0}).validate(), Error);
  CHECK_THROWS_AS((EditNoiseConfig{0.0, 0.0}).validate(), Error);
  CHECK_THROWS_AS((EditNoiseConfig{0.0, 11.0}).validate(), Error);
  CHECK_NOTHROW((EditNoiseConfig{0.0, 10.0}).validate());
}

TEST_CASE("prior samples") {
  Rng rng(3);
  const int n = 100000;
  double mean_norm = 0;
  std::vector<double> mean_dir(8, 0.0);
  for (int i = 0; i < n; ++i) {
    EditVector e = sample_prior(4, rng);
    CHECK(std::abs(norm(e.direction) - 1.0) < 1e-12);
    CHECK(e.norm >= 0.0);
    CHECK(e.norm <= 10.0);
    mean_norm += e.norm / n;
    for (int j = 0; j < 8; ++j) mean_dir[j] += e.direction[j] / n;
  }
  CHECK(std::abs(mean_norm - 5.0) < 3 * (10 / std::sqrt(12.0)) / std::sqrt(double(n)));
  for (double m : mean_dir) CHECK(std::abs(m) < 4 / std::sqrt(double(n)));
}

TEST_CASE("posterior support and mean direction") {
  Rng rng(4);
  EditEmbeddings emb(12, 3, rng, 1.0);
  std::vector<TokenId> x = {kThe, kGreat}, xp = {kThe, kGood};
  EditNoiseConfig cfg{5.0, 0.5};
  auto rep = edit_representation(word_diff(x, xp), emb, cfg);
  const int n = 100000;
  double along = 0.0;
  for (int i = 0; i < n; ++i) {
    EditVector e = sample_posterior(x, xp, emb, cfg, rng);
    CHECK(e.norm >= rep.truncated_norm);
    CHECK(e.norm <= rep.truncated_norm + cfg.epsilon);
    double dot = 0;
    for (std::size_t j = 0; j < 6; ++j) dot += e.direction[j] * rep.direction[j];
    along += dot / n;
  }
  const double a = vmf::mean_resultant_length(5.0, 6);
  CHECK(a == doctest::Approx(oracle::mean_w_by_quadrature(5.0, 6)).epsilon(1e-9));
  // sd of w is below 1, so 4/sqrt(n) is a generous bound.
  CHECK(std::abs(along - a) < 4.0 / std::sqrt(double(n)));
}

TEST_CASE("noiseless limit recovers the truncated mode") {
  Rng rng(5);
  EditEmbeddings emb(12, 3, rng, 1.0);
  std::vector<TokenId> x = {kThe, kGreat}, xp = {kThe, kGood};
  EditNoiseConfig cfg{1e9, 1e-9};
  auto rep = edit_representation(word_diff(x, xp), emb, cfg);
  auto mode = posterior_mode(rep);
  EditVector e = sample_posterior(x, xp, emb, cfg, rng);
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(e.z[j] - mode[j]) < 1e-3);
}

TEST_CASE("degenerate pair samples a uniform direction inside [0, eps]") {
  Rng rng(6);
  EditEmbeddings emb(12, 3, rng);
  std::vector<TokenId> x = {kThe, kGood};
  EditNoiseConfig cfg{25.0, 0.7};
  for (int i = 0; i < 100; ++i) {
    EditVector e = sample_posterior(x, x, emb, cfg, rng);
    CHECK(e.norm <= 0.7);
    CHECK(std::abs(norm(e.direction) - 1.0) < 1e-12);
  }
}

TEST_CASE("kl_total") {
  CHECK(kl_total({0.0, 10.0}, 128) == 0.0);
  CHECK(kl_total({0.0, 1.0}, 128) == doctest::Approx(std::log(10.0)));
  CHECK(kl_total({25.0, 1.0}, 128) == doctest::Approx(oracle::kl_by_quadrature(25.0, 128) + std::log(10.0)).epsilon(1e-9));
}

TEST_CASE("tape posterior matches the plain composition and its gradients") {
  Rng rng(7);
  EditEmbeddings emb(12, 3, rng, 0.5);
  std::vector<TokenId> x = {kThe, kGreat, kA}, xp = {kThe, kGood};
  EditNoiseConfig cfg{10.0, 1.0};
  const auto diff = word_diff(x, xp);
  const auto rep = edit_representation(diff, emb, cfg);
  const auto noise = PosteriorNoise::draw(cfg.kappa, 6, false, rng);
  const auto plain = compose_posterior(rep, noise, cfg);
  const std::vector<double> weights = {0.3, -1.2, 0.7, 2.0, -0.4, 0.9};

  auto loss = [&](ad::Tape& t) {
    ad::Var f = edit_representation(t, diff, emb);
    ad::Var z = compose_posterior(t, f, false, noise, cfg);
    return ad::dot(ad::tanh(z), t.constant(ad::Tensor::vector(weights)));
  };
  {
    ad::Tape t;
    ad::Var f = edit_representation(t, diff, emb);
    ad::Var z = compose_posterior(t, f, false, noise, cfg);
    for (std::size_t j = 0; j < 6; ++j) CHECK(z.value()[j] == doctest::Approx(plain.z[j]).epsilon(1e-12));
  }
  emb.params().zero_grad();
  {
    ad::Tape t;
    t.backward(loss(t));
  }
  const double h = 1e-6;
  double worst = 0.0;
  auto& phi = emb.phi();
  for (std::size_t i = 0; i < phi.value.size(); ++i) {
    const double orig = phi.value[i];
    phi.value[i] = orig + h;
    ad::Tape a;
    const double up = loss(a).value().item();
    phi.value[i] = orig - h;
    ad::Tape b;
    const double down = loss(b).value().item();
    phi.value[i] = orig;
    const double num = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(num - phi.grad[i]) / std::max(1e-3, std::abs(num) + std::abs(phi.grad[i])));
  }
  CHECK(worst < 1e-4);
}
