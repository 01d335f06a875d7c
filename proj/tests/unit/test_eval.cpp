#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "eval.hpp"
#include "oracles.hpp"
#include "train.hpp"

using namespace protoedit;
using namespace protoedit::eval;
using corpus::Corpus;
using corpus::Sentence;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Corpus make_corpus(const std::vector<std::vector<TokenId>>& rows) {
  std::vector<Sentence> s;
  for (std::size_t i = 0; i < rows.size(); ++i) s.push_back({rows[i], i});
  return Corpus(std::move(s));
}

editor::EditorConfig toy_config(std::size_t vocab, std::size_t word_dim = 1, std::size_t max_length = 8) {
  editor::EditorConfig c;
  c.hidden = 4;
  c.word_dim = word_dim;
  c.vocab_size = vocab;
  c.max_length = max_length;
  return c;
}

// Dense banding so every pair at similarity >= 0.5 collides.
neighbors::MinHashParams dense_lsh() { return {128, 128, 1, 99}; }

double log_mean_exp(std::span<const double> xs) {
  const double hi = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s / static_cast<double>(xs.size()));
}

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("bound combination") {
  SUBCASE("a single neighbor gives ELBO - log|X|") {
    const double e[] = {-3.25};
    const auto b = combine_bound(e, 40);
    CHECK(b.log_bound == doctest::Approx(-3.25 - std::log(40.0)).epsilon(1e-15));
    CHECK(b.jensen_bound == doctest::Approx(b.log_bound).epsilon(1e-15));
    CHECK(b.neighbors == 1);
  }
  SUBCASE("no neighbors gives -inf") {
    const auto b = combine_bound({}, 10);
    CHECK(b.log_bound == -kInf);
    CHECK(b.jensen_bound == -kInf);
  }
  SUBCASE("adding a neighbor never lowers the bound; Jensen never exceeds it") {
    Rng rng(11);
    std::uniform_real_distribution<double> elbo(-60.0, -0.5);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> e;
      double prev = -kInf;
      for (int k = 0; k < 12; ++k) {
        e.push_back(elbo(rng));
        const auto b = combine_bound(e, 1000);
        CHECK(b.log_bound >= prev);
        CHECK(b.jensen_bound <= b.log_bound + 1e-12);
        prev = b.log_bound;
      }
    }
  }
}

TEST_CASE("mixture and perplexity") {
  CHECK(mixture_logprob(0.0, -kInf, -7.5) == -7.5);
  CHECK(mixture_logprob(1.0, -2.0, -7.5) == -2.0);
  CHECK(mixture_logprob(0.3, -kInf, -7.5) == doctest::Approx(std::log(0.7) - 7.5));
  CHECK_THROWS_AS(mixture_logprob(1.5, -1.0, -1.0), Error);

  // Proper mixture: each smoothed probability lies in (0, 1] and between the
  // two component probabilities.
  Rng rng(5);
  std::uniform_real_distribution<double> lp(-40.0, 0.0), lam(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = lp(rng), b = lp(rng), l = lam(rng);
    const double m = mixture_logprob(l, a, b);
    CHECK(m <= 0.0);
    CHECK(std::exp(m) > 0.0);
    CHECK(m <= std::max(a, b) + 1e-12);
    CHECK(m >= std::min(a, b) - 1e-12);
  }

  // Uniform NLM over 10 words, lambda 0: perplexity is 10.
  editor::EditorConfig cfg = toy_config(10);
  Rng init(1);
  editor::EditorModel nlm(cfg, init);
  nlm.zero_output_layer();
  std::vector<SentenceScore> scores;
  for (std::size_t len : {1, 3, 6}) {
    std::vector<TokenId> x(len, 5);
    SentenceScore s;
    s.tokens = len + 1;
    s.nlm_logp = total(nlm.nlm_logprobs(x));
    s.editor_logp = -kInf;
    scores.push_back(s);
  }
  const double zero[] = {0.0};
  const auto report = smoothed_perplexity(scores, {}, zero);
  CHECK(report.smoothed_perplexity == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(report.nlm_perplexity == report.smoothed_perplexity);
  CHECK(report.editor_perplexity == kInf);
  CHECK(report.coverage == 0.0);
  CHECK(report.total_tokens == 13);

  CHECK_THROWS_AS(smoothed_perplexity({}, scores, zero), Error);
  const double bad[] = {0.5, 1.2};
  CHECK_THROWS_AS(smoothed_perplexity(scores, scores, bad), Error);
}

TEST_CASE("lambda is the validation argmin and lambda 0 is the NLM exactly") {
  Rng rng(8);
  std::uniform_real_distribution<double> lp(-30.0, -1.0);
  auto draw = [&](std::size_t n) {
    std::vector<SentenceScore> v(n);
    for (auto& s : v) {
      s.tokens = 4;
      s.nlm_logp = lp(rng);
      s.editor_logp = rng() % 3 == 0 ? -kInf : lp(rng);
      s.neighbors = std::isinf(s.editor_logp) ? 0 : 2;
    }
    return v;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto val = draw(30), test = draw(25);
    const std::vector<double> grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    const auto r = smoothed_perplexity(test, val, grid);
    double best = kInf, best_l = -1;
    for (double l : grid) {
      double logp = 0.0;
      for (const auto& s : val) {
        logp += std::log(l * std::exp(s.editor_logp) + (1 - l) * std::exp(s.nlm_logp));
      }
      const double p = std::exp(-logp / (4.0 * val.size()));
      if (p < best - 1e-9) best = p, best_l = l;
    }
    CHECK(r.lambda == best_l);
    const double zero[] = {0.0};
    const auto r0 = smoothed_perplexity(test, val, zero);
    double nlm = 0.0;
    for (const auto& s : test) nlm += s.nlm_logp;
    CHECK(r0.smoothed_perplexity == std::exp(-nlm / (4.0 * test.size())));
  }
}

TEST_CASE("the bound never exceeds the exact log-likelihood of a 2-d edit model") {
  const std::size_t V = 8;
  Rng rng(21);
  editor::EditorModel model(toy_config(V), rng, 0.5);
  editvec::EditEmbeddings emb(V, 1, rng, 0.8);
  const editvec::EditNoiseConfig noise{2.0, 1.0, 3.0};

  const Corpus train = make_corpus({{4, 5, 6}, {4, 5, 7}, {6, 7, 4, 5}, {5, 6}, {7, 7, 4}, {4, 6, 5, 5}});
  const Corpus test = make_corpus({{4, 5, 6, 7}, {5, 6, 6}, {7, 4}, {4, 6, 5}, {6, 7, 5, 4}});
  const auto index = neighbors::LshIndex::build(train, dense_lsh());

  const double phi[] = {0, 0, 0, 0, emb.phi().value.at(4, 0), emb.phi().value.at(5, 0),
                        emb.phi().value.at(6, 0), emb.phi().value.at(7, 0)};
  const double kl = oracle::kl_by_quadrature(noise.kappa, 2) + std::log(noise.norm_max / noise.epsilon);

  for (const auto& sent : test) {
    const auto& x = sent.ids;
    std::vector<double> exact_terms, elbo_terms;
    for (std::size_t j = 0; j < train.size(); ++j) {
      const auto& xp = train[j].ids;
      const auto memory = model.encode(xp);
      auto logp = [&](double a, double b) {
        const double z[] = {a, b};
        return total(model.decode_logprobs(x, memory, z));
      };
      exact_terms.push_back(oracle::log_prior_marginal_2d(logp, noise.norm_max));
      if (neighbors::jaccard_distance(x, xp) >= 0.5) continue;
      // f by hand: inserted minus common, deleted minus common.
      std::vector<int> cx(V), cp(V);
      for (TokenId t : x) ++cx[t];
      for (TokenId t : xp) ++cp[t];
      double f0 = 0, f1 = 0;
      for (std::size_t t = 0; t < V; ++t) {
        f0 += std::max(0, cx[t] - cp[t]) * phi[t];
        f1 += std::max(0, cp[t] - cx[t]) * phi[t];
      }
      const double lo = f0 == 0 && f1 == 0 ? 0.0 : std::min(std::hypot(f0, f1), noise.norm_max - noise.epsilon);
      elbo_terms.push_back(oracle::posterior_expectation_2d(logp, f0, f1, noise.kappa, lo, noise.epsilon) - kl);
    }
    const double exact = log_mean_exp(exact_terms);
    REQUIRE(!elbo_terms.empty());
    const double oracle_bound = combine_bound(elbo_terms, train.size()).log_bound;
    CHECK(oracle_bound < exact);

    BoundConfig cfg{noise, 4000, true};
    Rng mc(3);
    const auto b = sentence_logprob_bound(x, index, train, model, emb, cfg, mc);
    CHECK(b.neighbors == elbo_terms.size());
    CHECK(b.log_bound == doctest::Approx(oracle_bound).epsilon(2e-3));
  }
}

TEST_CASE("single-neighbor bound is that pair's ELBO minus log|X|") {
  Rng rng(4);
  editor::EditorModel model(toy_config(12, 2), rng);
  editvec::EditEmbeddings emb(12, 2, rng);
  const Corpus train = make_corpus({{4, 5, 6, 7}, {8, 9, 10}, {11, 10, 9}});
  const auto index = neighbors::LshIndex::build(train, dense_lsh());
  const std::vector<TokenId> x = {4, 5, 6, 8};
  BoundConfig cfg{{5.0, 1.0, 10.0}, 3, true};
  Rng a(9), b(9);
  const auto bound = sentence_logprob_bound(x, index, train, model, emb, cfg, a);
  REQUIRE(bound.neighbors == 1);
  const double elbo = pair_elbo(x, train[0].ids, model, emb, cfg.noise, 3, b);
  CHECK(bound.log_bound == doctest::Approx(elbo - std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("verbatim training sentence under an overfit model scores about -log|X|") {
  RunConfig run;
  run.set("seed", "2");
  run.set("hidden", "16");
  run.set("word_dim", "4");
  run.set("decode_length", "10");
  run.set("batch_size", "3");
  run.set("learning_rate", "0.02");
  run.set("kappa", "0");
  run.set("epsilon", "10");
  run.set("norm_max", "10");
  run.set("epochs", "400");
  const Corpus train = make_corpus({{4, 5, 6, 7, 8}, {9, 10, 11}, {12, 13, 14, 15}});
  auto model = train::Model::create(train::ModelKind::kEditor, run, 16);
  const std::vector<neighbors::TrainingPair> pairs = {{0, 0}, {1, 1}, {2, 2}};
  train::train_editor(model, train, pairs, train::TrainConfig::from_run_config(run, 16));

  const auto index = neighbors::LshIndex::build(train, dense_lsh());
  BoundConfig cfg{model.noise(), 1, true};
  Rng rng(1);
  for (const auto& s : train) {
    const auto b = sentence_logprob_bound(s.ids, index, train, model.editor, model.embeddings, cfg, rng);
    CHECK(b.neighbors == 1);
    CHECK(b.log_bound == doctest::Approx(-std::log(3.0)).epsilon(0.02));
  }
}

TEST_CASE("scores do not depend on the thread count") {
  Rng rng(6);
  editor::EditorModel model(toy_config(10, 2), rng);
  editor::EditorModel nlm(toy_config(10, 2), rng);
  editvec::EditEmbeddings emb(10, 2, rng);
  const Corpus train = make_corpus({{4, 5, 6}, {4, 5, 7}, {8, 9}, {8, 9, 4}, {6, 7, 8, 9}});
  const Corpus test = make_corpus({{4, 5, 8}, {8, 9, 9}, {6, 7}, {5, 5, 5}, {4, 6, 7, 8}, {9}});
  const auto index = neighbors::LshIndex::build(train, dense_lsh());
  ScoreOptions opt{{{3.0, 1.0, 10.0}, 2, true}, 77, 1};
  const auto one = score_sentences(test, index, train, model, emb, nlm, opt);
  opt.threads = 3;
  const auto three = score_sentences(test, index, train, model, emb, nlm, opt);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].editor_logp == three[i].editor_logp);
    CHECK(one[i].nlm_logp == three[i].nlm_logp);
    CHECK(one[i].tokens == test[i].size() + 1);
  }
  const std::vector<double> grid = {0.0, 0.5};
  const auto r = smoothed_perplexity(one, three, grid);
  std::ostringstream csv, summary;
  write_perplexity_csv(csv, r);
  write_perplexity_summary(summary, r);
  CHECK(csv.str().rfind("index,tokens,neighbors,", 0) == 0);
  CHECK(summary.str().find("smoothed_perplexity") != std::string::npos);
}

TEST_CASE("random walks") {
  Rng init(3);
  editor::EditorModel model(toy_config(9, 2, 6), init);
  const std::vector<TokenId> seed = {4, 5, 6};
  for (std::size_t steps : {1, 4}) {
    Rng a(10), b(10);
    const auto w = random_walk(seed, steps, 1.0, model, 10.0, a);
    const auto v = random_walk(seed, steps, 1.0, model, 10.0, b);
    CHECK(w.sentences.size() == steps + 1);
    CHECK(w.sentences[0] == seed);
    CHECK(w.sentences == v.sentences);
    CHECK(w.logprob == v.logprob);
    CHECK(w.logprob == doctest::Approx(total(w.step_logprobs)));
    for (const auto& s : w.sentences) CHECK(!s.empty());
  }
  Rng r(1);
  CHECK_THROWS_AS(random_walk(seed, 0, 1.0, model, 10.0, r), Error);

  // A model that always emits EOS first keeps the walk at the seed.
  editor::EditorModel stop = model;
  stop.params().get("out.b").value[corpus::kEos] = 100.0;
  const auto w = random_walk(seed, 3, 1.0, stop, 10.0, r);
  for (const auto& s : w.sentences) CHECK(s == seed);
}

TEST_CASE("controlled editing") {
  Rng init(12);
  editor::EditorModel model(toy_config(9, 2, 10), init, 0.3);
  const std::vector<TokenId> proto = {4, 5, 6, 7, 8, 4, 5, 6};
  ControlOptions opt;
  opt.n_seq = 40;
  opt.steps = 3;
  opt.seed = 5;

  SUBCASE("a qualifying prototype is returned as is") {
    const auto r = controlled_edit(proto, ControlPredicate::shorter_than(20), model, opt);
    REQUIRE(r);
    CHECK(r->sentence == proto);
    CHECK(!r->walk);
  }
  SUBCASE("an unknown keyword never qualifies") {
    CHECK(!controlled_edit(proto, ControlPredicate::contains(std::nullopt), model, opt));
  }
  SUBCASE("length predicate: postcondition and best-walk choice") {
    const auto pred = ControlPredicate::shorter_than(7);
    const auto r = controlled_edit(proto, pred, model, opt);
    REQUIRE(r);
    CHECK(r->sentence.size() < 7);
    double best = -kInf;
    std::size_t count = 0;
    for (std::size_t j = 0; j < opt.n_seq; ++j) {
      Rng rng = derive_rng(opt.seed, j);
      const auto w = random_walk(proto, opt.steps, opt.temperature, model, opt.norm_max, rng);
      if (w.sentences.back().size() < 7) best = std::max(best, w.logprob), ++count;
    }
    CHECK(r->logprob == best);
    CHECK(r->qualifying == count);
    opt.threads = 3;
    const auto again = controlled_edit(proto, pred, model, opt);
    REQUIRE(again);
    CHECK(again->sentence == r->sentence);
    CHECK(again->walk == r->walk);
  }
  SUBCASE("keyword predicate") {
    const auto pred = ControlPredicate::contains(TokenId{3});
    CHECK(pred(std::vector<TokenId>{4, 3}));
    CHECK(!pred(std::vector<TokenId>{4, 5}));
    const auto r = controlled_edit(proto, pred, model, opt);
    if (r) CHECK(std::find(r->sentence.begin(), r->sentence.end(), 3) != r->sentence.end());
  }
}

TEST_CASE("stop words") {
  const auto& words = default_stop_words();
  CHECK(words.size() == 50);
  std::ifstream in(PROTOEDIT_DATA_DIR "/stopwords.txt");
  REQUIRE(in);
  std::vector<std::string> file;
  for (std::string w; in >> w;) file.push_back(w);
  CHECK(file == words);
}

TEST_CASE("analogy mining") {
  const std::vector<std::string> lines = {
      "this was a good restaurant",       // 0
      "this was the best restaurant",     // 1
      "the food was good",                // 2
      "best the food was",                // 3  reordering of 2 with good -> best
      "the food was great",               // 4  different word
      "the good food was cheap",          // 5
      "the best food was expensive",      // 6  two content changes
      "this was a good restaurant",       // 7  duplicate of 0
  };
  corpus::VocabBuilder vb;
  for (const auto& l : lines) vb.add_line(l);
  const auto vocab = vb.finish(100);
  const auto corpus = Corpus::from_lines(lines, vocab);
  const auto stop = stop_word_ids(default_stop_words(), vocab);
  std::istringstream pairs_text("good best superlative\n\n");
  const auto pairs = read_word_pairs(pairs_text, vocab);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].relation == "superlative");

  const auto mined = mine_analogy_pairs(corpus, pairs[0], stop);
  const std::vector<SentencePair> expected = {{0, 1}, {2, 3}};
  CHECK(mined == expected);

  const auto quads = mine_analogy_quads(corpus, pairs, stop);
  REQUIRE(quads.size() == 2);
  CHECK(quads[0].x1 == 0);
  CHECK(quads[0].y1 == 2);
  CHECK(quads[1].x1 == 2);
  CHECK(quads[1].y2 == 1);
  CHECK(mine_analogy_quads(corpus, pairs, stop, 1).size() == 1);

  std::istringstream bad("good pizza\n");
  CHECK_THROWS_AS(read_word_pairs(bad, vocab), Error);
  std::istringstream unnamed("good great\n");
  CHECK(read_word_pairs(unnamed, vocab)[0].relation == "good:great");
}

TEST_CASE("analogy evaluation with an exhaustive beam matches brute force") {
  const std::size_t V = 5, T = 4;
  Rng rng(31);
  editor::EditorModel model(toy_config(V, 1, T), rng, 0.8);
  editvec::EditEmbeddings emb(V, 1, rng, 0.8);
  const Corpus corpus = make_corpus({{4, 3}, {4, 4, 3}, {3, 4}, {4, 4, 4}, {3}, {4, 3, 3, 4}, {1, 4}});
  const std::vector<WordPair> pairs = {{3, 4, "r"}};
  std::vector<AnalogyQuad> quads;
  for (std::size_t y1 = 0; y1 < corpus.size(); ++y1)
    for (std::size_t y2 = 0; y2 < corpus.size(); ++y2) quads.push_back({0, 1, y1, y2, 0});

  const std::size_t exhaustive = 625;  // V^T
  AnalogyOptions opt;
  opt.ks = {1, 3, 10, exhaustive};
  opt.beam = exhaustive;
  opt.noise = {4.0, 1.0, 10.0};
  const auto report = analogy_eval(quads, corpus, pairs, model, emb, opt);

  // Brute force: every sequence of at most T non-EOS tokens, ranked by score.
  std::vector<std::vector<TokenId>> all = {{}};
  for (std::size_t len = 1; len <= T; ++len) {
    std::vector<std::vector<TokenId>> grow;
    for (const auto& s : all)
      if (s.size() == len - 1)
        for (TokenId t = 0; t < static_cast<TokenId>(V); ++t)
          if (t != corpus::kEos) {
            auto n = s;
            n.push_back(t);
            grow.push_back(n);
          }
    all.insert(all.end(), grow.begin(), grow.end());
  }
  const auto rep = editvec::edit_representation(editvec::word_diff(corpus[1].ids, corpus[0].ids), emb, opt.noise);
  const auto z = editvec::posterior_mode(rep);
  for (std::size_t i = 0; i < quads.size(); ++i) {
    const auto memory = model.encode(corpus[quads[i].y1].ids);
    std::vector<std::pair<double, std::vector<TokenId>>> scored;
    for (const auto& s : all) scored.emplace_back(total(model.decode_logprobs(s, memory, z)), s);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto& gold = corpus[quads[i].y2].ids;
    std::size_t rank = 0;
    while (scored[rank].second != gold) ++rank;
    const auto& o = report.outcomes[i];
    REQUIRE(o.edit_rank);
    CHECK(*o.edit_rank == rank);
    REQUIRE(o.random_rank);  // exhaustive: every in-range sentence appears
  }
  // Every gold sequence is in range, so the exhaustive k is always a hit.
  CHECK(report.overall.edit.back() == 1.0);
  CHECK(report.overall.random.back() == 1.0);
  for (std::size_t j = 1; j < opt.ks.size(); ++j) {
    CHECK(report.overall.edit[j] >= report.overall.edit[j - 1]);
    CHECK(report.overall.random[j] >= report.overall.random[j - 1]);
  }
  REQUIRE(report.relations.size() == 1);
  CHECK(report.relations[0].quads == quads.size());

  std::ostringstream csv;
  write_analogy_csv(csv, report);
  CHECK(csv.str().rfind("relation,quads,k,edit_accuracy,random_accuracy\nr,49,1,", 0) == 0);
}
