#pragma once

// ELBO training of the editor and edit embeddings over mined pairs, plain
// likelihood training of the NLM baseline, the optimizers and the binary
// checkpoint format.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "editor.hpp"
#include "editvec.hpp"
#include "neighbors.hpp"
#include "random.hpp"

namespace protoedit::train {

enum class ModelKind { kEditor, kNlm };

struct TrainConfig {
  editor::EditorConfig editor;
  editvec::EditNoiseConfig noise;
  std::string optimizer = "adam";  // or "sgd"
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // 0 disables clipping
  double init_scale = 0.1;
  bool record_timing = false;

  // Editor fields come from the run config; vocab_size is supplied separately.
  static TrainConfig from_run_config(const RunConfig& run, std::size_t vocab_size);
  void validate() const;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD over a fixed list of
// parameters.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(std::string kind, double learning_rate, std::vector<ad::Parameter*> params);

  void step();
  std::uint64_t steps() const { return t_; }
  const std::string& kind() const { return kind_; }
  std::vector<ad::Tensor>& first_moments() { return m_; }
  std::vector<ad::Tensor>& second_moments() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  std::string kind_;
  double lr_ = 0.0;
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

// Scales all gradients so their global L2 norm is at most `max_norm`.
// Returns the pre-clipping norm.
double clip_gradients(std::span<ad::Parameter* const> params, double max_norm);

// Everything a checkpoint holds.
struct Model {
  ModelKind kind = ModelKind::kEditor;
  RunConfig config;
  editor::EditorModel editor;
  editvec::EditEmbeddings embeddings;  // unused (but present) for the NLM
  Optimizer optimizer;
  std::string rng_state;
  std::uint64_t epoch = 0;

  // Fresh model initialized from `config` (seeded by its `seed`).
  static Model create(ModelKind kind, const RunConfig& config, std::size_t vocab_size);
  std::vector<ad::Parameter*> trainable();
  editvec::EditNoiseConfig noise() const;
};

// Single-pair ELBO loss: -log p_edit(x | x', z) + kl_total, z one
// reparameterized draw from q(z | x, x'). Also reports the NLL part.
struct LossTerms {
  ad::Var loss;
  double nll = 0.0;
  double kl = 0.0;
};
LossTerms elbo_loss(ad::Tape& tape, std::span<const TokenId> x, std::span<const TokenId> x_prime,
                    editor::EditorModel& model, editvec::EditEmbeddings& emb,
                    const editvec::EditNoiseConfig& noise, Rng& rng);

// Per-sentence NLM loss (sum of token NLLs including EOS).
ad::Var nlm_loss(ad::Tape& tape, std::span<const TokenId> x, editor::EditorModel& model);

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;      // mean per pair (or sentence)
  double mean_token_nll = 0.0; // reconstruction NLL per token incl. EOS
  std::optional<double> tokens_per_sec;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Trains for cfg.epochs more epochs. Pairs are put in canonical order before
// shuffling, so the result does not depend on input row order. A non-finite
// loss aborts with Error(kNumeric).
std::vector<EpochMetrics> train_editor(Model& model, const corpus::Corpus& corpus,
                                       std::span<const neighbors::TrainingPair> pairs,
                                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});
std::vector<EpochMetrics> train_nlm(Model& model, const corpus::Corpus& corpus,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// `epoch,mean_loss,tokens_per_sec`; tokens_per_sec is NA unless timed.
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

// ---- checkpoints ----
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, Model& model);
Model read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace protoedit::train
