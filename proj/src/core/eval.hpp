#pragma once

// Evaluation: the neighborhood lower bound on log p(x) with NLM smoothing,
// random edit walks, attribute-controlled editing and sentence analogies.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "corpus.hpp"
#include "editor.hpp"
#include "editvec.hpp"
#include "neighbors.hpp"
#include "random.hpp"

namespace protoedit::eval {

using Tokens = std::vector<TokenId>;

// ---- likelihood bound ----

// Monte-Carlo ELBO of one pair: mean over `samples` posterior draws of
// log p_edit(x | x', z), minus the (constant) KL term.
double pair_elbo(std::span<const TokenId> x, std::span<const TokenId> x_prime,
                 const editor::EditorModel& editor, const editvec::EditEmbeddings& emb,
                 const editvec::EditNoiseConfig& noise, std::size_t samples, Rng& rng);

struct SentenceBound {
  double log_bound = 0.0;     // log sum_{x' in N(x)} exp(ELBO) / |X|
  double jensen_bound = 0.0;  // mean ELBO - log |X|
  std::size_t neighbors = 0;
};

// Folds per-neighbor ELBOs into both bounds; no neighbors gives -inf.
SentenceBound combine_bound(std::span<const double> elbos, std::size_t corpus_size);

struct BoundConfig {
  editvec::EditNoiseConfig noise;
  std::size_t samples = 1;
  bool include_identity = true;
};

SentenceBound sentence_logprob_bound(std::span<const TokenId> x, const neighbors::LshIndex& index,
                                     const corpus::Corpus& train, const editor::EditorModel& editor,
                                     const editvec::EditEmbeddings& emb, const BoundConfig& cfg,
                                     Rng& rng);

// ---- smoothed perplexity ----

struct SentenceScore {
  std::size_t tokens = 0;  // sentence length plus EOS
  std::size_t neighbors = 0;
  double editor_logp = 0.0;  // the log-sum-exp bound
  double editor_jensen = 0.0;
  double nlm_logp = 0.0;
};

struct ScoreOptions {
  BoundConfig bound;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Scores each sentence under both models. Sentence i draws its posterior
// noise from derive_rng(seed, i), so results do not depend on `threads`.
std::vector<SentenceScore> score_sentences(const corpus::Corpus& sentences,
                                           const neighbors::LshIndex& index,
                                           const corpus::Corpus& train,
                                           const editor::EditorModel& editor,
                                           const editvec::EditEmbeddings& emb,
                                           const editor::EditorModel& nlm,
                                           const ScoreOptions& options);

// log(lambda e^editor + (1 - lambda) e^nlm). The endpoints return one side
// exactly.
double mixture_logprob(double lambda, double editor_logp, double nlm_logp);

// exp(-sum log p / sum tokens) for the lambda mixture.
double perplexity(std::span<const SentenceScore> scores, double lambda);

struct PerplexityReport {
  std::vector<SentenceScore> sentences;
  std::vector<double> smoothed_logp;
  double lambda = 0.0;
  std::vector<std::pair<double, double>> validation_curve;  // (lambda, perplexity)
  double editor_perplexity = 0.0;  // infinite when some sentence has no neighbor
  double nlm_perplexity = 0.0;
  double smoothed_perplexity = 0.0;
  double coverage = 0.0;  // fraction of sentences with a nonempty neighborhood
  std::size_t total_tokens = 0;
};

// Picks lambda from `grid` by validation perplexity (first minimum wins) and
// reports test perplexities. A one-point grid needs no validation scores.
PerplexityReport smoothed_perplexity(std::vector<SentenceScore> test,
                                     std::span<const SentenceScore> validation,
                                     std::span<const double> grid);

// `index,tokens,neighbors,editor_logp,editor_jensen,nlm_logp,smoothed_logp`.
void write_perplexity_csv(std::ostream& out, const PerplexityReport& report);
void write_perplexity_summary(std::ostream& out, const PerplexityReport& report);

// ---- random walks and controlled editing ----

struct Walk {
  std::vector<Tokens> sentences;      // seed first, steps + 1 in total
  std::vector<double> step_logprobs;  // decoder log-probability of each draw
  double logprob = 0.0;
};

// Each step draws z from the prior and samples an edit of the previous
// sentence at `temperature`. A draw that decodes to the empty sentence
// cannot be edited further, so the walk stays put for that step.
Walk random_walk(std::span<const TokenId> seed, std::size_t steps, double temperature,
                 const editor::EditorModel& editor, double norm_max, Rng& rng);

class ControlPredicate {
 public:
  static ControlPredicate shorter_than(std::size_t tokens);
  // An absent keyword (not in the vocabulary) is never satisfied.
  static ControlPredicate contains(std::optional<TokenId> keyword);

  bool operator()(std::span<const TokenId> sentence) const;

 private:
  enum class Kind { kShorterThan, kContains };
  Kind kind_ = Kind::kShorterThan;
  std::size_t limit_ = 0;
  std::optional<TokenId> keyword_;
};

struct ControlOptions {
  std::size_t n_seq = 100;
  std::size_t steps = 5;
  double temperature = 1.0;
  double norm_max = editvec::kDefaultNormMax;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ControlResult {
  Tokens sentence;
  double logprob = 0.0;
  std::optional<std::size_t> walk;  // absent when the prototype qualified
  std::size_t qualifying = 0;       // walks whose endpoint qualified
};

// Walk j uses derive_rng(seed, j). Returns the qualifying endpoint with the
// highest walk log-probability (lowest j on ties), the prototype itself if
// it already qualifies, or nothing.
std::optional<ControlResult> controlled_edit(std::span<const TokenId> prototype,
                                             const ControlPredicate& predicate,
                                             const editor::EditorModel& editor,
                                             const ControlOptions& options);

// ---- analogies ----

// Fixed English function-word list used when mining analogy pairs.
const std::vector<std::string>& default_stop_words();
std::unordered_set<TokenId> stop_word_ids(std::span<const std::string> words,
                                          const corpus::Vocabulary& vocab);

struct WordPair {
  TokenId w1 = 0;  // present in x1
  TokenId w2 = 0;  // present in x2
  std::string relation;
};

// Reads `w1 w2 [relation]` lines; the relation defaults to "w1:w2". Words
// outside the vocabulary are an error.
std::vector<WordPair> read_word_pairs(std::istream& in, const corpus::Vocabulary& vocab);
std::vector<WordPair> load_word_pairs(const std::string& path, const corpus::Vocabulary& vocab);

struct SentencePair {
  std::size_t x1 = 0;
  std::size_t x2 = 0;
  friend auto operator<=>(const SentencePair&, const SentencePair&) = default;
};

// Sentence pairs where editing x1 into x2 removes w1 and inserts w2 once
// stop words are ignored. Word order is free. Pairs repeating the content
// of an earlier pair are dropped. Sorted by (x1, x2).
std::vector<SentencePair> mine_analogy_pairs(const corpus::Corpus& corpus, const WordPair& pair,
                                             const std::unordered_set<TokenId>& stop_words);

struct AnalogyQuad {
  std::size_t x1 = 0, x2 = 0, y1 = 0, y2 = 0;  // corpus indices
  std::size_t word_pair = 0;                  // index into the word-pair list
};

// Every ordered pairing of two distinct mined pairs sharing a word pair.
// With max_per_pair > 0 an evenly spaced subset of that size is kept.
std::vector<AnalogyQuad> mine_analogy_quads(const corpus::Corpus& corpus,
                                            std::span<const WordPair> pairs,
                                            const std::unordered_set<TokenId>& stop_words,
                                            std::size_t max_per_pair = 0);

struct AnalogyOptions {
  std::vector<std::size_t> ks{1, 10};
  std::size_t beam = 20;  // actual width is max(beam, largest k)
  editvec::EditNoiseConfig noise;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct QuadOutcome {
  std::optional<std::size_t> edit_rank;    // 0-based rank of y2 in the beam
  std::optional<std::size_t> random_rank;  // same with a prior-sampled z
};

struct AnalogyAccuracy {
  std::string relation;
  std::size_t quads = 0;
  std::vector<double> edit;    // per k
  std::vector<double> random;  // per k
};

struct AnalogyReport {
  std::vector<std::size_t> ks;
  std::vector<QuadOutcome> outcomes;
  std::vector<AnalogyAccuracy> relations;  // sorted by name
  AnalogyAccuracy overall;
};

// Edits y1 with the posterior mode of f(x1, x2) and checks whether y2 is
// among the top k beam outputs. The baseline uses z ~ p(z) drawn from
// derive_rng(seed, quad index).
AnalogyReport analogy_eval(std::span<const AnalogyQuad> quads, const corpus::Corpus& corpus,
                           std::span<const WordPair> pairs, const editor::EditorModel& editor,
                           const editvec::EditEmbeddings& emb, const AnalogyOptions& options);

// `relation,quads,k,edit_accuracy,random_accuracy`, overall row last.
void write_analogy_csv(std::ostream& out, const AnalogyReport& report);

}  // namespace protoedit::eval
