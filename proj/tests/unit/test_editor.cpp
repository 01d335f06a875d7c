#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "editor.hpp"
#include "error.hpp"

using namespace protoedit;
using namespace protoedit::editor;

namespace {

EditorConfig small_config(std::size_t vocab, std::size_t max_len = 6, std::size_t layers = 1) {
  EditorConfig c;
  c.layers = layers;
  c.hidden = 5;
  c.word_dim = 3;
  c.vocab_size = vocab;
  c.max_length = max_len;
  return c;
}

std::vector<double> random_z(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> z(n);
  for (double& v : z) v = g(rng);
  return z;
}

double seq_logprob(const EditorModel& m, const std::vector<TokenId>& x, const EncoderMemory& mem,
                   const std::vector<double>& z) {
  double s = 0;
  for (double v : m.decode_logprobs(x, mem, z)) s += v;
  return s;
}

}  // namespace

TEST_CASE("config validation") {
  EditorConfig c = small_config(3);
  CHECK_NOTHROW(c.validate());
  c.max_length = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config(2);
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("encoder shapes and directionality") {
  Rng rng(1);
  for (std::size_t layers : {1, 2}) {
    EditorModel m(small_config(10, 6, layers), rng, 0.5);
    std::vector<TokenId> x = {4, 5, 6, 7};
    EncoderMemory mem = m.encode(x);
    CHECK(mem.states.rows() == 4);
    CHECK(mem.states.cols() == 10);
    std::vector<TokenId> one = {4};
    CHECK(m.encode(one).states.rows() == 1);
    std::vector<TokenId> rev(x.rbegin(), x.rend());
    EncoderMemory r = m.encode(rev);
    CHECK(r.states.values()[0] != mem.states.values()[0]);
    std::vector<TokenId> empty;
    CHECK_THROWS_AS(m.encode(empty), Error);
  }
}

TEST_CASE("zero output layer is uniform") {
  Rng rng(2);
  EditorModel m(small_config(7), rng);
  m.zero_output_layer();
  std::vector<TokenId> x = {4, 5}, xp = {6};
  auto z = random_z(6, rng);
  for (double lp : m.decode_logprobs(x, xp, z)) CHECK(lp == doctest::Approx(-std::log(7.0)));
  // NLM at uniform init has perplexity V.
  auto nlm = m.nlm_logprobs(x);
  double s = 0;
  for (double v : nlm) s += v;
  CHECK(std::exp(-s / nlm.size()) == doctest::Approx(7.0));
}

TEST_CASE("chain rule enumeration on V=3, T=2") {
  Rng rng(3);
  EditorModel m(small_config(3), rng, 1.0);
  std::vector<TokenId> xp = {0, 1};
  EncoderMemory mem = m.encode(xp);
  auto z = random_z(6, rng);
  double total = 0.0;
  for (TokenId a = 0; a < 3; ++a) {
    for (TokenId b = 0; b < 3; ++b) {
      std::vector<TokenId> x = {a, b};
      auto lps = m.decode_logprobs(x, mem, z);
      REQUIRE(lps.size() == 3);
      // Explicit chain rule through step().
      DecoderState s0 = m.initial_state(mem);
      StepResult r1 = m.step(mem, s0, corpus::kBos, z);
      StepResult r2 = m.step(mem, r1.next, a, z);
      StepResult r3 = m.step(mem, r2.next, b, z);
      CHECK(lps[0] == doctest::Approx(r1.log_probs[a]).epsilon(1e-12));
      CHECK(lps[1] == doctest::Approx(r2.log_probs[b]).epsilon(1e-12));
      CHECK(lps[2] == doctest::Approx(r3.log_probs[corpus::kEos]).epsilon(1e-12));
      total += std::exp(lps[0] + lps[1]);
    }
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("per-step distributions are normalized and z matters") {
  Rng rng(4);
  EditorModel m(small_config(9), rng, 0.5);
  std::vector<TokenId> xp = {4, 5, 6};
  EncoderMemory mem = m.encode(xp);
  auto z1 = random_z(6, rng), z2 = random_z(6, rng);
  StepResult a = m.step(mem, m.initial_state(mem), corpus::kBos, z1);
  StepResult b = m.step(mem, m.initial_state(mem), corpus::kBos, z2);
  double s = 0;
  for (double lp : a.log_probs) {
    CHECK(lp <= 0.0);
    s += std::exp(lp);
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.logits != b.logits);
  CHECK_THROWS_AS(m.decode_logprobs(std::vector<TokenId>{9}, mem, z1), Error);
}

TEST_CASE("temperature zero sampling equals greedy; beam k=1 equals greedy") {
  Rng rng(5);
  EditorModel m(small_config(8, 10), rng, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<TokenId> xp = {4, static_cast<TokenId>(5 + trial % 3)};
    EncoderMemory mem = m.encode(xp);
    auto z = random_z(6, rng);
    Hypothesis g = greedy(m, mem, z);
    Rng r(9);
    Hypothesis s = sample(m, mem, z, 0.0, r);
    CHECK(s.tokens == g.tokens);
    auto beam = beam_search(m, mem, z, 1);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].tokens == g.tokens);
    CHECK(beam[0].logprob == doctest::Approx(g.logprob).epsilon(1e-12));
    CHECK(g.logprob == doctest::Approx(seq_logprob(m, g.tokens, mem, z)).epsilon(1e-10));
  }
}

TEST_CASE("exhaustive beam equals brute-force argmax") {
  Rng rng(6);
  for (std::size_t V : {3, 4}) {
    for (int trial = 0; trial < 5; ++trial) {
      EditorModel m(small_config(V, 3), rng, 2.0);
      std::vector<TokenId> xp = {0, 1};
      EncoderMemory mem = m.encode(xp);
      auto z = random_z(6, rng);
      // All sequences of at most 3 non-EOS tokens.
      std::vector<std::vector<TokenId>> all = {{}};
      std::vector<TokenId> words;
      for (TokenId t = 0; t < static_cast<TokenId>(V); ++t)
        if (t != corpus::kEos) words.push_back(t);
      for (std::size_t len = 1; len <= 3; ++len) {
        std::vector<std::vector<TokenId>> grown;
        for (const auto& s : all)
          if (s.size() == len - 1)
            for (TokenId w : words) {
              auto t = s;
              t.push_back(w);
              grown.push_back(t);
            }
        all.insert(all.end(), grown.begin(), grown.end());
      }
      double best = -1e300;
      std::vector<TokenId> best_seq;
      for (const auto& s : all) {
        const double lp = seq_logprob(m, s, mem, z);
        if (lp > best) best = lp, best_seq = s;
      }
      const std::size_t k = static_cast<std::size_t>(std::pow(double(V), 3));
      auto beam = beam_search(m, mem, z, k);
      REQUIRE(!beam.empty());
      CHECK(beam[0].tokens == best_seq);
      CHECK(beam[0].logprob == doctest::Approx(best).epsilon(1e-10));
      std::set<std::vector<TokenId>> seen;
      for (std::size_t i = 0; i < beam.size(); ++i) {
        CHECK(seen.insert(beam[i].tokens).second);
        if (i) CHECK(beam[i - 1].logprob >= beam[i].logprob);
        CHECK(beam[i].logprob == doctest::Approx(seq_logprob(m, beam[i].tokens, mem, z)).epsilon(1e-10));
      }
      CHECK(beam.size() == all.size());
    }
  }
}

TEST_CASE("tau=1 sampling matches the softmax") {
  Rng rng(7);
  EditorModel m(small_config(6, 2), rng, 1.0);
  std::vector<TokenId> xp = {4};
  EncoderMemory mem = m.encode(xp);
  auto z = random_z(6, rng);
  StepResult first = m.step(mem, m.initial_state(mem), corpus::kBos, z);
  const auto p = tempered_distribution(first.logits, 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(std::exp(first.log_probs[i])).epsilon(1e-12));
  const int n = 10000;
  std::vector<int> counts(6, 0);
  Rng draw(8);
  for (int i = 0; i < n; ++i) {
    Hypothesis h = sample(m, mem, z, 1.0, draw);
    const TokenId t = h.tokens.empty() ? corpus::kEos : h.tokens[0];
    ++counts[static_cast<std::size_t>(t)];
  }
  double chi2 = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double e = n * p[i];
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  CHECK(chi2 < 15.086);  // chi-square 0.99 quantile, 5 dof
  for (double tau : {0.1, 0.5, 3.0}) {
    const auto q = tempered_distribution(first.logits, tau);
    double s = 0;
    for (double v : q) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("greedy output is a local argmax under teacher forcing") {
  Rng rng(9);
  EditorModel m(small_config(7, 5), rng, 1.5);
  std::vector<TokenId> xp = {4, 5};
  EncoderMemory mem = m.encode(xp);
  auto z = random_z(6, rng);
  Hypothesis g = greedy(m, mem, z);
  auto base = m.decode_logprobs(g.tokens, mem, z);
  for (std::size_t pos = 0; pos < g.tokens.size(); ++pos) {
    for (TokenId t = 0; t < 7; ++t) {
      if (t == corpus::kEos || t == g.tokens[pos]) continue;
      auto alt = g.tokens;
      alt[pos] = t;
      CHECK(base[pos] >= m.decode_logprobs(alt, mem, z)[pos]);
    }
  }
}

TEST_CASE("decoding is deterministic given the seed") {
  Rng a(10), b(10);
  EditorModel m1(small_config(8), a), m2(small_config(8), b);
  std::vector<TokenId> xp = {4, 5};
  auto z = std::vector<double>(6, 0.3);
  Rng s1(3), s2(3);
  CHECK(sample(m1, m1.encode(xp), z, 1.0, s1).tokens == sample(m2, m2.encode(xp), z, 1.0, s2).tokens);
}

TEST_CASE("copy keeps independent parameters") {
  Rng rng(11);
  EditorModel m(small_config(8), rng);
  EditorModel c = m;
  c.zero_output_layer();
  CHECK(m.params().get("out.W").value[0] != 0.0);
  CHECK(m.parameter_count() == c.parameter_count());
  EditorModel wrapped(m.config(), m.params());
  CHECK(wrapped.parameter_count() == m.parameter_count());
  ad::ParameterSet bad;
  CHECK_THROWS_AS(EditorModel(m.config(), bad), Error);
}
