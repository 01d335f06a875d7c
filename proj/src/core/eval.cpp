#include "eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <ostream>
#include <sstream>

#include "error.hpp"
#include "parallel.hpp"

namespace protoedit::eval {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

double sum(std::span<const double> xs) { return std::accumulate(xs.begin(), xs.end(), 0.0); }

std::string real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.9f}", v);
}

}  // namespace

// ---- likelihood bound ----

double pair_elbo(std::span<const TokenId> x, std::span<const TokenId> x_prime,
                 const editor::EditorModel& editor, const editvec::EditEmbeddings& emb,
                 const editvec::EditNoiseConfig& noise, std::size_t samples, Rng& rng) {
  require(samples >= 1, "ELBO needs at least one sample");
  require(!x.empty() && !x_prime.empty(), "ELBO needs nonempty sentences");
  noise.validate();
  const auto memory = editor.encode(x_prime);
  const auto rep = editvec::edit_representation(editvec::word_diff(x, x_prime), emb, noise);
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto draw = editvec::PosteriorNoise::draw(noise.kappa, rep.f.size(), rep.degenerate, rng);
    const auto z = editvec::compose_posterior(rep, draw, noise);
    total += sum(editor.decode_logprobs(x, memory, z.z));
  }
  return total / static_cast<double>(samples) -
         editvec::kl_total(noise, static_cast<int>(rep.f.size()));
}

SentenceBound combine_bound(std::span<const double> elbos, std::size_t corpus_size) {
  require(corpus_size >= 1, "training corpus must be nonempty");
  SentenceBound b;
  b.neighbors = elbos.size();
  if (elbos.empty()) {
    b.log_bound = b.jensen_bound = kNegInf;
    return b;
  }
  const double log_n = std::log(static_cast<double>(corpus_size));
  b.log_bound = log_sum_exp(elbos) - log_n;
  b.jensen_bound = sum(elbos) / static_cast<double>(elbos.size()) - log_n;
  return b;
}

SentenceBound sentence_logprob_bound(std::span<const TokenId> x, const neighbors::LshIndex& index,
                                     const corpus::Corpus& train, const editor::EditorModel& editor,
                                     const editvec::EditEmbeddings& emb, const BoundConfig& cfg,
                                     Rng& rng) {
  neighbors::QueryOptions q;
  q.include_identity = cfg.include_identity;
  const auto hood = neighbors::query_neighborhood(x, index, train, q);
  std::vector<double> elbos;
  elbos.reserve(hood.size());
  for (const auto& n : hood)
    elbos.push_back(pair_elbo(x, train[n.id].ids, editor, emb, cfg.noise, cfg.samples, rng));
  return combine_bound(elbos, train.size());
}

// ---- smoothed perplexity ----

std::vector<SentenceScore> score_sentences(const corpus::Corpus& sentences,
                                           const neighbors::LshIndex& index,
                                           const corpus::Corpus& train,
                                           const editor::EditorModel& editor,
                                           const editvec::EditEmbeddings& emb,
                                           const editor::EditorModel& nlm,
                                           const ScoreOptions& options) {
  std::vector<SentenceScore> out(sentences.size());
  parallel_for(sentences.size(), options.threads, [&](std::size_t i) {
    const auto& x = sentences[i].ids;
    Rng rng = derive_rng(options.seed, i);
    const auto b = sentence_logprob_bound(x, index, train, editor, emb, options.bound, rng);
    SentenceScore& s = out[i];
    s.tokens = x.size() + 1;
    s.neighbors = b.neighbors;
    s.editor_logp = b.log_bound;
    s.editor_jensen = b.jensen_bound;
    s.nlm_logp = sum(nlm.nlm_logprobs(x));
  });
  return out;
}

double mixture_logprob(double lambda, double editor_logp, double nlm_logp) {
  require(lambda >= 0.0 && lambda <= 1.0, "interpolation weight must lie in [0, 1]");
  if (lambda == 0.0) return nlm_logp;
  if (lambda == 1.0) return editor_logp;
  const double terms[2] = {std::log(lambda) + editor_logp, std::log1p(-lambda) + nlm_logp};
  return log_sum_exp(terms);
}

double perplexity(std::span<const SentenceScore> scores, double lambda) {
  require(!scores.empty(), "perplexity of an empty set is undefined");
  double logp = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : scores) {
    logp += mixture_logprob(lambda, s.editor_logp, s.nlm_logp);
    tokens += s.tokens;
  }
  return std::exp(-logp / static_cast<double>(tokens));
}

PerplexityReport smoothed_perplexity(std::vector<SentenceScore> test,
                                     std::span<const SentenceScore> validation,
                                     std::span<const double> grid) {
  require(!test.empty(), "test set is empty");
  require(!grid.empty(), "lambda grid is empty");
  for (double l : grid) require(l >= 0.0 && l <= 1.0, "lambda grid values must lie in [0, 1]");

  PerplexityReport r;
  if (grid.size() == 1) {
    r.lambda = grid[0];
  } else {
    require(!validation.empty(), "choosing lambda needs a validation set");
    double best = std::numeric_limits<double>::infinity();
    r.lambda = grid[0];
    for (double l : grid) {
      const double p = perplexity(validation, l);
      r.validation_curve.emplace_back(l, p);
      if (p < best) {
        best = p;
        r.lambda = l;
      }
    }
  }
  r.sentences = std::move(test);
  std::size_t covered = 0;
  for (const auto& s : r.sentences) {
    r.smoothed_logp.push_back(mixture_logprob(r.lambda, s.editor_logp, s.nlm_logp));
    r.total_tokens += s.tokens;
    covered += s.neighbors > 0 ? 1 : 0;
  }
  r.coverage = static_cast<double>(covered) / static_cast<double>(r.sentences.size());
  r.editor_perplexity = perplexity(r.sentences, 1.0);
  r.nlm_perplexity = perplexity(r.sentences, 0.0);
  r.smoothed_perplexity = perplexity(r.sentences, r.lambda);
  return r;
}

void write_perplexity_csv(std::ostream& out, const PerplexityReport& report) {
  out << "index,tokens,neighbors,editor_logp,editor_jensen,nlm_logp,smoothed_logp\n";
  for (std::size_t i = 0; i < report.sentences.size(); ++i) {
    const auto& s = report.sentences[i];
    out << i << ',' << s.tokens << ',' << s.neighbors << ',' << real(s.editor_logp) << ','
        << real(s.editor_jensen) << ',' << real(s.nlm_logp) << ',' << real(report.smoothed_logp[i])
        << '\n';
  }
}

void write_perplexity_summary(std::ostream& out, const PerplexityReport& report) {
  out << "sentences " << report.sentences.size() << '\n';
  out << "tokens " << report.total_tokens << " (EOS included)\n";
  out << "coverage " << real(report.coverage) << '\n';
  for (const auto& [l, p] : report.validation_curve)
    out << "validation lambda=" << real(l) << " perplexity " << real(p) << '\n';
  out << "lambda " << real(report.lambda) << '\n';
  out << "editor_perplexity " << real(report.editor_perplexity) << '\n';
  out << "nlm_perplexity " << real(report.nlm_perplexity) << '\n';
  out << "smoothed_perplexity " << real(report.smoothed_perplexity) << '\n';
}

// ---- random walks and controlled editing ----

Walk random_walk(std::span<const TokenId> seed, std::size_t steps, double temperature,
                 const editor::EditorModel& editor, double norm_max, Rng& rng) {
  require(steps >= 1, "a walk needs at least one step");
  require(!seed.empty(), "walk seed sentence is empty");
  Walk w;
  w.sentences.emplace_back(seed.begin(), seed.end());
  for (std::size_t s = 0; s < steps; ++s) {
    const Tokens& prev = w.sentences.back();
    const auto z = editvec::sample_prior(editor.config().word_dim, rng, norm_max);
    const auto memory = editor.encode(prev);
    auto hyp = editor::sample(editor, memory, z.z, temperature, rng);
    w.step_logprobs.push_back(hyp.logprob);
    w.logprob += hyp.logprob;
    w.sentences.push_back(hyp.tokens.empty() ? prev : std::move(hyp.tokens));
  }
  return w;
}

ControlPredicate ControlPredicate::shorter_than(std::size_t tokens) {
  ControlPredicate p;
  p.kind_ = Kind::kShorterThan;
  p.limit_ = tokens;
  return p;
}

ControlPredicate ControlPredicate::contains(std::optional<TokenId> keyword) {
  ControlPredicate p;
  p.kind_ = Kind::kContains;
  p.keyword_ = keyword;
  return p;
}

bool ControlPredicate::operator()(std::span<const TokenId> sentence) const {
  if (kind_ == Kind::kShorterThan) return sentence.size() < limit_;
  return keyword_ && std::find(sentence.begin(), sentence.end(), *keyword_) != sentence.end();
}

std::optional<ControlResult> controlled_edit(std::span<const TokenId> prototype,
                                             const ControlPredicate& predicate,
                                             const editor::EditorModel& editor,
                                             const ControlOptions& options) {
  if (predicate(prototype)) return ControlResult{Tokens(prototype.begin(), prototype.end()), 0.0, {}, 0};
  std::vector<Walk> walks(options.n_seq);
  parallel_for(options.n_seq, options.threads, [&](std::size_t j) {
    Rng rng = derive_rng(options.seed, j);
    walks[j] = random_walk(prototype, options.steps, options.temperature, editor, options.norm_max, rng);
  });
  std::optional<ControlResult> best;
  std::size_t qualifying = 0;
  for (std::size_t j = 0; j < walks.size(); ++j) {
    const Tokens& end = walks[j].sentences.back();
    if (!predicate(end)) continue;
    ++qualifying;
    if (!best || walks[j].logprob > best->logprob) best = ControlResult{end, walks[j].logprob, j, 0};
  }
  if (best) best->qualifying = qualifying;
  return best;
}

// ---- analogies ----

const std::vector<std::string>& default_stop_words() {
  static const std::vector<std::string> words = {
      "the",  "a",    "an",   "and",   "or",   "but",  "of",   "to",   "in",    "on",
      "at",   "for",  "with", "by",    "from", "as",   "is",   "was",  "are",   "were",
      "be",   "been", "it",   "its",   "this", "that", "these", "those", "i",   "we",
      "you",  "he",   "she",  "they",  "me",   "my",   "our",  "your", "his",   "her",
      "their", "them", "not", "so",    "if",   "than", "too",  "very", "there", "here"};
  return words;
}

std::unordered_set<TokenId> stop_word_ids(std::span<const std::string> words,
                                          const corpus::Vocabulary& vocab) {
  std::unordered_set<TokenId> ids;
  for (const auto& w : words)
    if (vocab.contains(w)) ids.insert(vocab.id(w));
  return ids;
}

std::vector<WordPair> read_word_pairs(std::istream& in, const corpus::Vocabulary& vocab) {
  std::vector<WordPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string w1, w2, relation;
    if (!(fields >> w1)) continue;
    if (!(fields >> w2)) fail(ErrorCode::kFormat, fmt::format("word pair line {}: expected two words", lineno));
    fields >> relation;
    for (const auto& w : {w1, w2})
      if (!vocab.contains(w))
        fail(ErrorCode::kInvalidArgument, fmt::format("word pair line {}: '{}' is not in the vocabulary", lineno, w));
    require(w1 != w2, fmt::format("word pair line {}: words must differ", lineno));
    pairs.push_back({vocab.id(w1), vocab.id(w2), relation.empty() ? w1 + ":" + w2 : relation});
  }
  return pairs;
}

std::vector<WordPair> load_word_pairs(const std::string& path, const corpus::Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open word pair file " + path);
  return read_word_pairs(in, vocab);
}

namespace {

// Sorted non-stop tokens of `s` with one occurrence of `drop` removed, or
// nothing when `drop` is absent. The pair words themselves are never
// treated as stop words.
std::optional<Tokens> content_key(std::span<const TokenId> s, TokenId drop, const WordPair& pair,
                                  const std::unordered_set<TokenId>& stop) {
  Tokens key;
  for (TokenId t : s)
    if (t == pair.w1 || t == pair.w2 || !stop.contains(t)) key.push_back(t);
  auto it = std::find(key.begin(), key.end(), drop);
  if (it == key.end()) return std::nullopt;
  key.erase(it);
  std::sort(key.begin(), key.end());
  return key;
}

}  // namespace

std::vector<SentencePair> mine_analogy_pairs(const corpus::Corpus& corpus, const WordPair& pair,
                                             const std::unordered_set<TokenId>& stop_words) {
  require(pair.w1 != pair.w2, "analogy word pair needs two different words");
  std::map<Tokens, std::vector<std::size_t>> by_key;  // x2 candidates
  for (std::size_t j = 0; j < corpus.size(); ++j)
    if (auto key = content_key(corpus[j].ids, pair.w2, pair, stop_words)) by_key[*key].push_back(j);

  std::vector<SentencePair> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto key = content_key(corpus[i].ids, pair.w1, pair, stop_words);
    if (!key) continue;
    auto it = by_key.find(*key);
    if (it == by_key.end()) continue;
    for (std::size_t j : it->second)
      if (j != i) out.push_back({i, j});
  }
  std::sort(out.begin(), out.end());
  std::set<std::pair<Tokens, Tokens>> seen;
  std::vector<SentencePair> unique;
  for (const auto& p : out)
    if (seen.emplace(corpus[p.x1].ids, corpus[p.x2].ids).second) unique.push_back(p);
  return unique;
}

std::vector<AnalogyQuad> mine_analogy_quads(const corpus::Corpus& corpus,
                                            std::span<const WordPair> pairs,
                                            const std::unordered_set<TokenId>& stop_words,
                                            std::size_t max_per_pair) {
  std::vector<AnalogyQuad> quads;
  for (std::size_t w = 0; w < pairs.size(); ++w) {
    const auto mined = mine_analogy_pairs(corpus, pairs[w], stop_words);
    std::vector<AnalogyQuad> all;
    for (std::size_t a = 0; a < mined.size(); ++a)
      for (std::size_t b = 0; b < mined.size(); ++b)
        if (a != b) all.push_back({mined[a].x1, mined[a].x2, mined[b].x1, mined[b].x2, w});
    if (max_per_pair == 0 || all.size() <= max_per_pair) {
      quads.insert(quads.end(), all.begin(), all.end());
      continue;
    }
    for (std::size_t k = 0; k < max_per_pair; ++k) quads.push_back(all[k * all.size() / max_per_pair]);
  }
  return quads;
}

namespace {

std::optional<std::size_t> rank_of(const std::vector<editor::Hypothesis>& beam,
                                   std::span<const TokenId> gold) {
  for (std::size_t r = 0; r < beam.size(); ++r)
    if (std::equal(beam[r].tokens.begin(), beam[r].tokens.end(), gold.begin(), gold.end())) return r;
  return std::nullopt;
}

AnalogyAccuracy accuracy(std::string relation, std::span<const std::size_t> ks,
                         const std::vector<const QuadOutcome*>& outcomes) {
  AnalogyAccuracy a;
  a.relation = std::move(relation);
  a.quads = outcomes.size();
  for (std::size_t k : ks) {
    std::size_t edit = 0, random = 0;
    for (const auto* o : outcomes) {
      edit += o->edit_rank && *o->edit_rank < k ? 1 : 0;
      random += o->random_rank && *o->random_rank < k ? 1 : 0;
    }
    const double n = outcomes.empty() ? 1.0 : static_cast<double>(outcomes.size());
    a.edit.push_back(static_cast<double>(edit) / n);
    a.random.push_back(static_cast<double>(random) / n);
  }
  return a;
}

}  // namespace

AnalogyReport analogy_eval(std::span<const AnalogyQuad> quads, const corpus::Corpus& corpus,
                           std::span<const WordPair> pairs, const editor::EditorModel& editor,
                           const editvec::EditEmbeddings& emb, const AnalogyOptions& options) {
  require(!options.ks.empty(), "analogy evaluation needs at least one k");
  for (std::size_t k : options.ks) require(k >= 1, "analogy k must be positive");
  options.noise.validate();
  for (const auto& q : quads) {
    require(q.word_pair < pairs.size(), "analogy quad refers to an unknown word pair");
    require(std::max({q.x1, q.x2, q.y1, q.y2}) < corpus.size(), "analogy quad index out of range");
  }
  const std::size_t k_max = *std::max_element(options.ks.begin(), options.ks.end());
  const std::size_t width = std::max(options.beam, k_max);

  AnalogyReport report;
  report.ks = options.ks;
  report.outcomes.resize(quads.size());
  parallel_for(quads.size(), options.threads, [&](std::size_t i) {
    const auto& q = quads[i];
    const auto rep = editvec::edit_representation(
        editvec::word_diff(corpus[q.x2].ids, corpus[q.x1].ids), emb, options.noise);
    const auto z_hat = editvec::posterior_mode(rep);
    Rng rng = derive_rng(options.seed, i);
    const auto z_rand = editvec::sample_prior(editor.config().word_dim, rng, options.noise.norm_max);
    const auto memory = editor.encode(corpus[q.y1].ids);
    const auto& gold = corpus[q.y2].ids;
    report.outcomes[i].edit_rank = rank_of(editor::beam_search(editor, memory, z_hat, k_max, width), gold);
    report.outcomes[i].random_rank =
        rank_of(editor::beam_search(editor, memory, z_rand.z, k_max, width), gold);
  });

  std::map<std::string, std::vector<const QuadOutcome*>> groups;
  std::vector<const QuadOutcome*> all;
  for (std::size_t i = 0; i < quads.size(); ++i) {
    groups[pairs[quads[i].word_pair].relation].push_back(&report.outcomes[i]);
    all.push_back(&report.outcomes[i]);
  }
  for (const auto& [name, outs] : groups) report.relations.push_back(accuracy(name, report.ks, outs));
  report.overall = accuracy("overall", report.ks, all);
  return report;
}

void write_analogy_csv(std::ostream& out, const AnalogyReport& report) {
  out << "relation,quads,k,edit_accuracy,random_accuracy\n";
  auto rows = [&](const AnalogyAccuracy& a) {
    for (std::size_t j = 0; j < report.ks.size(); ++j)
      out << a.relation << ',' << a.quads << ',' << report.ks[j] << ',' << real(a.edit[j]) << ','
          << real(a.random[j]) << '\n';
  };
  for (const auto& a : report.relations) rows(a);
  rows(report.overall);
}

}  // namespace protoedit::eval
