#pragma once

// The neural editor p_edit(x | x', z): a stacked biLSTM encoder over the
// prototype, a stacked LSTM decoder whose input at each step is the previous
// token's embedding concatenated with z, bilinear attention from the top
// decoder state over the top encoder states, and an output softmax over
// [state ; context]. With no prototype (NLM mode) z, the context and the
// initial state are all zero.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "random.hpp"

namespace protoedit::editor {

struct EditorConfig {
  std::size_t layers = 1;
  std::size_t hidden = 128;
  std::size_t word_dim = 64;
  std::size_t vocab_size = 0;
  std::size_t max_length = corpus::kDefaultMaxLength;  // max generated tokens, EOS excluded

  std::size_t edit_dim() const { return 2 * word_dim; }
  // Throws unless every field is positive, vocab_size > kEos and
  // max_length >= 2.
  void validate() const;
};

// Top-layer encoder states of one prototype, ready for attention.
struct EncoderMemory {
  ad::Tensor states;    // [T, 2h]
  ad::Tensor states_t;  // [2h, T]
  ad::Tensor mean;      // [2h]
  bool present = false; // false in NLM mode
};

struct DecoderState {
  std::vector<ad::Tensor> h;  // one [h] per layer
  std::vector<ad::Tensor> c;
};

struct StepResult {
  std::vector<double> logits;  // [V], pre-softmax scores
  std::vector<double> log_probs;
  DecoderState next;
};

class EditorModel {
 public:
  EditorModel() = default;
  // Uniform(-init_scale, init_scale) initialization; forget-gate biases 1.
  EditorModel(const EditorConfig& config, Rng& rng, double init_scale = 0.1);
  EditorModel(const EditorModel& other);
  EditorModel& operator=(const EditorModel& other);
  EditorModel(EditorModel&&) noexcept = default;
  EditorModel& operator=(EditorModel&&) noexcept = default;

  // Wraps existing parameters (e.g. from a checkpoint); shapes are checked.
  EditorModel(const EditorConfig& config, ad::ParameterSet params);

  const EditorConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  // Zeroes the output projection so every step predicts uniformly.
  void zero_output_layer();

  // ---- differentiable graph construction ----
  struct TapeMemory {
    ad::Var states;    // [T, 2h]
    ad::Var states_t;  // [2h, T]
    ad::Var mean;      // [2h]
    bool present = false;
  };
  TapeMemory encode(ad::Tape& tape, std::span<const TokenId> prototype) const;
  TapeMemory nlm_memory() const { return {}; }
  // Sum over T+1 steps of -log p(token), teacher forced, EOS last. `z` must
  // have edit_dim() entries; pass an invalid Var for a zero edit vector.
  ad::Var sequence_nll(ad::Tape& tape, std::span<const TokenId> target, const TapeMemory& memory,
                       ad::Var z) const;

  // ---- inference ----
  // Throws on an empty prototype.
  EncoderMemory encode(std::span<const TokenId> prototype) const;
  EncoderMemory nlm_memory_tensor() const;
  // Per-step log-probabilities of x then EOS under teacher forcing.
  std::vector<double> decode_logprobs(std::span<const TokenId> x, std::span<const TokenId> prototype,
                                      std::span<const double> z) const;
  std::vector<double> decode_logprobs(std::span<const TokenId> x, const EncoderMemory& memory,
                                      std::span<const double> z) const;
  std::vector<double> nlm_logprobs(std::span<const TokenId> x) const;

  DecoderState initial_state(const EncoderMemory& memory) const;
  StepResult step(const EncoderMemory& memory, const DecoderState& state, TokenId prev,
                  std::span<const double> z) const;

 private:
  struct Layer {
    ad::Parameter* w = nullptr;  // [4h, in + h]
    ad::Parameter* b = nullptr;  // [4h]
  };
  struct Handles {
    ad::Parameter* embed = nullptr;
    std::vector<Layer> enc_fwd, enc_bwd, dec;
    std::vector<Layer> init;  // [h, 2h], [h]
    ad::Parameter* attn = nullptr;   // [2h, h]
    ad::Parameter* out_w = nullptr;  // [V, 3h]
    ad::Parameter* out_b = nullptr;  // [V]
  };

  void declare_parameters();
  void bind();
  ad::Var param(ad::Tape& tape, ad::Parameter* p) const;

  struct TapeState {
    std::vector<ad::Var> h, c;
  };
  TapeState tape_initial_state(ad::Tape& tape, const TapeMemory& memory) const;
  TapeMemory view_memory(ad::Tape& tape, const EncoderMemory& memory) const;
  // One decoder step; returns logits and advances `state`.
  ad::Var tape_step(ad::Tape& tape, const TapeMemory& memory, TapeState& state, TokenId prev,
                    ad::Var z) const;
  std::pair<ad::Var, ad::Var> lstm(ad::Tape& tape, const Layer& layer, ad::Var x, ad::Var h,
                                   ad::Var c) const;
  void check_ids(std::span<const TokenId> ids) const;

  EditorConfig config_;
  ad::ParameterSet params_;
  Handles handles_;
};

// ---- decoding ----

struct Hypothesis {
  std::vector<TokenId> tokens;  // EOS excluded
  double logprob = 0.0;         // includes the EOS step
};

// Temperature sampling p(w) ~ exp(s_w / tau); tau = 0 takes the argmax
// (lowest id on ties). Stops at EOS or after max_length tokens.
Hypothesis sample(const EditorModel& model, const EncoderMemory& memory, std::span<const double> z,
                  double temperature, Rng& rng);
Hypothesis greedy(const EditorModel& model, const EncoderMemory& memory, std::span<const double> z);

// Beam search over sum-of-logprob scores with `width` live hypotheses
// (defaults to k). EOS extensions retire into the result pool; at the length
// cap EOS is forced. Returns up to k finished hypotheses, best first.
std::vector<Hypothesis> beam_search(const EditorModel& model, const EncoderMemory& memory,
                                    std::span<const double> z, std::size_t k,
                                    std::size_t width = 0);

// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> scores);

// Softmax of scores / temperature (temperature > 0).
std::vector<double> tempered_distribution(std::span<const double> scores, double temperature);

}  // namespace protoedit::editor
