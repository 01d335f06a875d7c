#include "editor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "error.hpp"

namespace protoedit::editor {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void EditorConfig::validate() const {
  require(layers >= 1, "editor layers must be >= 1");
  require(hidden >= 1, "editor hidden size must be >= 1");
  require(word_dim >= 1, "editor word_dim must be >= 1");
  require(vocab_size > static_cast<std::size_t>(corpus::kEos), "editor vocab_size must exceed the EOS id");
  require(max_length >= 2, "editor max_length must be >= 2");
}

namespace {

std::string layer_name(const char* stack, std::size_t l) {
  return std::string(stack) + ".l" + std::to_string(l);
}

}  // namespace

void EditorModel::declare_parameters() {
  const std::size_t h = config_.hidden, dw = config_.word_dim, V = config_.vocab_size;
  params_.add("embed", Shape{V, dw});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? dw : 2 * h;
    for (const char* dir : {"enc_fwd", "enc_bwd"}) {
      params_.add(layer_name(dir, l) + ".W", Shape{4 * h, in + h});
      params_.add(layer_name(dir, l) + ".b", Shape{4 * h});
    }
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? dw + config_.edit_dim() : h;
    params_.add(layer_name("dec", l) + ".W", Shape{4 * h, in + h});
    params_.add(layer_name("dec", l) + ".b", Shape{4 * h});
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    params_.add(layer_name("init", l) + ".W", Shape{h, 2 * h});
    params_.add(layer_name("init", l) + ".b", Shape{h});
  }
  params_.add("attn.W", Shape{2 * h, h});
  params_.add("out.W", Shape{V, 3 * h});
  params_.add("out.b", Shape{V});
}

void EditorModel::bind() {
  handles_ = Handles{};
  handles_.embed = &params_.get("embed");
  for (std::size_t l = 0; l < config_.layers; ++l) {
    handles_.enc_fwd.push_back({&params_.get(layer_name("enc_fwd", l) + ".W"), &params_.get(layer_name("enc_fwd", l) + ".b")});
    handles_.enc_bwd.push_back({&params_.get(layer_name("enc_bwd", l) + ".W"), &params_.get(layer_name("enc_bwd", l) + ".b")});
    handles_.dec.push_back({&params_.get(layer_name("dec", l) + ".W"), &params_.get(layer_name("dec", l) + ".b")});
    handles_.init.push_back({&params_.get(layer_name("init", l) + ".W"), &params_.get(layer_name("init", l) + ".b")});
  }
  handles_.attn = &params_.get("attn.W");
  handles_.out_w = &params_.get("out.W");
  handles_.out_b = &params_.get("out.b");
}

EditorModel::EditorModel(const EditorConfig& config, Rng& rng, double init_scale) : config_(config) {
  config_.validate();
  declare_parameters();
  std::uniform_real_distribution<double> unif(-init_scale, init_scale);
  for (std::size_t i = 0; i < params_.size(); ++i)
    for (double& v : params_[i].value.values()) v = unif(rng);
  // Forget-gate bias 1 (gate order i, f, g, o).
  const std::size_t h = config_.hidden;
  bind();
  auto forget_one = [h](Layer& layer) {
    for (std::size_t j = h; j < 2 * h; ++j) layer.b->value[j] = 1.0;
  };
  for (auto* stack : {&handles_.enc_fwd, &handles_.enc_bwd, &handles_.dec})
    for (auto& layer : *stack) forget_one(layer);
}

EditorModel::EditorModel(const EditorConfig& config, ad::ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  EditorModel reference;
  reference.config_ = config_;
  reference.declare_parameters();
  require(reference.params_.size() == params_.size(), "editor parameter count does not match config");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& want = reference.params_[i];
    const auto* got = params_.find(want.name);
    if (!got) fail(ErrorCode::kFormat, "missing editor parameter '" + want.name + "'");
    if (!(got->value.shape() == want.value.shape())) {
      fail(ErrorCode::kFormat, "parameter '" + want.name + "' has shape " + got->value.shape().str() +
                                   ", expected " + want.value.shape().str());
    }
  }
  bind();
}

EditorModel::EditorModel(const EditorModel& other) : config_(other.config_), params_(other.params_) {
  if (params_.size() > 0) bind();
}

EditorModel& EditorModel::operator=(const EditorModel& other) {
  if (this == &other) return *this;
  config_ = other.config_;
  params_ = other.params_;
  if (params_.size() > 0) bind();
  return *this;
}

void EditorModel::zero_output_layer() {
  handles_.out_w->value.fill(0.0);
  handles_.out_b->value.fill(0.0);
}

Var EditorModel::param(Tape& tape, ad::Parameter* p) const {
  // Inference tapes only read parameters, so sharing a const model across
  // threads is safe; gradient tapes need the mutable binding.
  if (tape.grad_enabled()) return tape.parameter(*p);
  return tape.view(p->value);
}

void EditorModel::check_ids(std::span<const TokenId> ids) const {
  for (TokenId t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " >= vocab size " +
                                            std::to_string(config_.vocab_size));
    }
  }
}

std::pair<Var, Var> EditorModel::lstm(Tape& tape, const Layer& layer, Var x, Var h, Var c) const {
  const std::size_t n = config_.hidden;
  Var gates = ad::add(ad::matmul(param(tape, layer.w), ad::concat({x, h})), param(tape, layer.b));
  Var i = ad::sigmoid(ad::slice(gates, 0, n));
  Var f = ad::sigmoid(ad::slice(gates, n, 2 * n));
  Var g = ad::tanh(ad::slice(gates, 2 * n, 3 * n));
  Var o = ad::sigmoid(ad::slice(gates, 3 * n, 4 * n));
  Var c_next = ad::add(ad::mul(f, c), ad::mul(i, g));
  Var h_next = ad::mul(o, ad::tanh(c_next));
  return {h_next, c_next};
}

EditorModel::TapeMemory EditorModel::encode(Tape& tape, std::span<const TokenId> prototype) const {
  require(!prototype.empty(), "cannot encode an empty prototype");
  check_ids(prototype);
  const std::size_t T = prototype.size();
  const Var zero = tape.constant(Tensor(Shape{config_.hidden}));
  Var embed = param(tape, handles_.embed);
  std::vector<Var> inputs;
  inputs.reserve(T);
  for (TokenId t : prototype) inputs.push_back(ad::embedding_lookup(embed, t));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::vector<Var> fwd(T), bwd(T);
    Var h = zero, c = zero;
    for (std::size_t t = 0; t < T; ++t) {
      std::tie(h, c) = lstm(tape, handles_.enc_fwd[l], inputs[t], h, c);
      fwd[t] = h;
    }
    h = zero;
    c = zero;
    for (std::size_t t = T; t-- > 0;) {
      std::tie(h, c) = lstm(tape, handles_.enc_bwd[l], inputs[t], h, c);
      bwd[t] = h;
    }
    for (std::size_t t = 0; t < T; ++t) inputs[t] = ad::concat({fwd[t], bwd[t]});
  }
  TapeMemory m;
  m.states = ad::stack_rows(inputs);
  m.states_t = ad::transpose(m.states);
  m.mean = ad::mean_rows(m.states);
  m.present = true;
  return m;
}

EditorModel::TapeState EditorModel::tape_initial_state(Tape& tape, const TapeMemory& memory) const {
  TapeState s;
  const Var zero = tape.constant(Tensor(Shape{config_.hidden}));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    if (memory.present) {
      s.h.push_back(ad::tanh(ad::add(ad::matmul(param(tape, handles_.init[l].w), memory.mean),
                                     param(tape, handles_.init[l].b))));
    } else {
      s.h.push_back(zero);
    }
    s.c.push_back(zero);
  }
  return s;
}

Var EditorModel::tape_step(Tape& tape, const TapeMemory& memory, TapeState& state, TokenId prev,
                           Var z) const {
  Var x = ad::concat({ad::embedding_lookup(param(tape, handles_.embed), prev), z});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::tie(state.h[l], state.c[l]) = lstm(tape, handles_.dec[l], x, state.h[l], state.c[l]);
    x = state.h[l];
  }
  Var context;
  if (memory.present) {
    Var query = ad::matmul(param(tape, handles_.attn), x);         // [2h]
    Var weights = ad::softmax(ad::matmul(memory.states, query));   // [T]
    context = ad::matmul(memory.states_t, weights);                // [2h]
  } else {
    context = tape.constant(Tensor(Shape{2 * config_.hidden}));
  }
  return ad::add(ad::matmul(param(tape, handles_.out_w), ad::concat({x, context})),
                 param(tape, handles_.out_b));
}

Var EditorModel::sequence_nll(Tape& tape, std::span<const TokenId> target, const TapeMemory& memory,
                              Var z) const {
  check_ids(target);
  if (!z.valid()) z = tape.constant(Tensor(Shape{config_.edit_dim()}));
  if (z.value().size() != config_.edit_dim()) {
    fail(ErrorCode::kInvalidArgument, "edit vector has " + std::to_string(z.value().size()) +
                                          " entries, expected " + std::to_string(config_.edit_dim()));
  }
  TapeState state = tape_initial_state(tape, memory);
  std::vector<Var> terms;
  terms.reserve(target.size() + 1);
  TokenId prev = corpus::kBos;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    const TokenId gold = t < target.size() ? target[t] : corpus::kEos;
    terms.push_back(ad::cross_entropy_with_logits(tape_step(tape, memory, state, prev, z), gold));
    prev = gold;
  }
  return ad::add_n(terms);
}

EncoderMemory EditorModel::encode(std::span<const TokenId> prototype) const {
  Tape tape;
  tape.set_grad_enabled(false);
  TapeMemory m = encode(tape, prototype);
  return {m.states.value(), m.states_t.value(), m.mean.value(), true};
}

EncoderMemory EditorModel::nlm_memory_tensor() const { return {}; }

EditorModel::TapeMemory EditorModel::view_memory(Tape& tape, const EncoderMemory& memory) const {
  TapeMemory m;
  if (!memory.present) return m;
  m.states = tape.view(memory.states);
  m.states_t = tape.view(memory.states_t);
  m.mean = tape.view(memory.mean);
  m.present = true;
  return m;
}

std::vector<double> EditorModel::decode_logprobs(std::span<const TokenId> x,
                                                 const EncoderMemory& memory,
                                                 std::span<const double> z) const {
  check_ids(x);
  require(z.empty() || z.size() == config_.edit_dim(), "edit vector dimension mismatch");
  Tape tape;
  tape.set_grad_enabled(false);
  TapeMemory m = view_memory(tape, memory);
  Tensor zt(Shape{config_.edit_dim()});
  std::copy(z.begin(), z.end(), zt.data());
  Var zv = tape.view(zt);
  TapeState state = tape_initial_state(tape, m);
  std::vector<double> out;
  out.reserve(x.size() + 1);
  TokenId prev = corpus::kBos;
  for (std::size_t t = 0; t <= x.size(); ++t) {
    const TokenId gold = t < x.size() ? x[t] : corpus::kEos;
    Var lp = ad::log_softmax(tape_step(tape, m, state, prev, zv));
    out.push_back(lp.value()[static_cast<std::size_t>(gold)]);
    prev = gold;
  }
  return out;
}

std::vector<double> EditorModel::decode_logprobs(std::span<const TokenId> x,
                                                 std::span<const TokenId> prototype,
                                                 std::span<const double> z) const {
  return decode_logprobs(x, encode(prototype), z);
}

std::vector<double> EditorModel::nlm_logprobs(std::span<const TokenId> x) const {
  return decode_logprobs(x, EncoderMemory{}, {});
}

DecoderState EditorModel::initial_state(const EncoderMemory& memory) const {
  Tape tape;
  tape.set_grad_enabled(false);
  TapeState s = tape_initial_state(tape, view_memory(tape, memory));
  DecoderState out;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    out.h.push_back(s.h[l].value());
    out.c.push_back(s.c[l].value());
  }
  return out;
}

StepResult EditorModel::step(const EncoderMemory& memory, const DecoderState& state, TokenId prev,
                             std::span<const double> z) const {
  check_ids(std::span<const TokenId>(&prev, 1));
  require(z.empty() || z.size() == config_.edit_dim(), "edit vector dimension mismatch");
  Tape tape;
  tape.set_grad_enabled(false);
  TapeMemory m = view_memory(tape, memory);
  Tensor zt(Shape{config_.edit_dim()});
  std::copy(z.begin(), z.end(), zt.data());
  TapeState s;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    s.h.push_back(tape.view(state.h[l]));
    s.c.push_back(tape.view(state.c[l]));
  }
  Var logits = tape_step(tape, m, s, prev, tape.view(zt));
  Var lp = ad::log_softmax(logits);
  StepResult r;
  r.logits.assign(logits.value().values().begin(), logits.value().values().end());
  r.log_probs.assign(lp.value().values().begin(), lp.value().values().end());
  for (std::size_t l = 0; l < config_.layers; ++l) {
    r.next.h.push_back(s.h[l].value());
    r.next.c.push_back(s.c[l].value());
  }
  return r;
}

// ---- decoding ----

std::size_t argmax(std::span<const double> scores) {
  require(!scores.empty(), "argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::vector<double> tempered_distribution(std::span<const double> scores, double temperature) {
  require(temperature > 0.0, "temperature must be positive");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (p[i] = std::exp((scores[i] - m) / temperature));
  for (double& v : p) v /= z;
  return p;
}

namespace {

// Shared driver for sampling and greedy decoding. `choose` picks the next
// token from one step's result.
template <typename Choose>
Hypothesis autoregress(const EditorModel& model, const EncoderMemory& memory,
                       std::span<const double> z, Choose&& choose) {
  Hypothesis hyp;
  DecoderState state = model.initial_state(memory);
  TokenId prev = corpus::kBos;
  const std::size_t cap = model.config().max_length;
  for (;;) {
    StepResult r = model.step(memory, state, prev, z);
    if (hyp.tokens.size() == cap) {
      hyp.logprob += r.log_probs[corpus::kEos];
      return hyp;
    }
    const TokenId next = static_cast<TokenId>(choose(r));
    hyp.logprob += r.log_probs[static_cast<std::size_t>(next)];
    if (next == corpus::kEos) return hyp;
    hyp.tokens.push_back(next);
    state = std::move(r.next);
    prev = next;
  }
}

}  // namespace

Hypothesis sample(const EditorModel& model, const EncoderMemory& memory, std::span<const double> z,
                  double temperature, Rng& rng) {
  require(temperature >= 0.0, "temperature must be >= 0");
  if (temperature == 0.0) return greedy(model, memory, z);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return autoregress(model, memory, z, [&](const StepResult& r) {
    const auto p = tempered_distribution(r.logits, temperature);
    double u = unif(rng);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (u < p[i]) return i;
      u -= p[i];
    }
    // Rounding left u just above the cumulative mass: take the last
    // token with nonzero probability.
    std::size_t last = p.size() - 1;
    while (last > 0 && p[last] == 0.0) --last;
    return last;
  });
}

Hypothesis greedy(const EditorModel& model, const EncoderMemory& memory, std::span<const double> z) {
  return autoregress(model, memory, z, [](const StepResult& r) { return argmax(r.logits); });
}

std::vector<Hypothesis> beam_search(const EditorModel& model, const EncoderMemory& memory,
                                    std::span<const double> z, std::size_t k, std::size_t width) {
  require(k >= 1, "beam size k must be >= 1");
  if (width == 0) width = k;
  require(width >= 1, "beam width must be >= 1");
  struct Beam {
    Hypothesis hyp;
    DecoderState state;
  };
  struct Candidate {
    double score;
    std::size_t beam;
    TokenId token;
  };
  std::vector<Beam> live;
  live.push_back({{}, model.initial_state(memory)});
  std::vector<Hypothesis> finished;
  const std::size_t cap = model.config().max_length;
  const std::size_t V = model.config().vocab_size;

  while (!live.empty() && finished.size() < k) {
    std::vector<StepResult> steps;
    steps.reserve(live.size());
    for (std::size_t b = 0; b < live.size(); ++b) {
      const TokenId prev = live[b].hyp.tokens.empty() ? corpus::kBos : live[b].hyp.tokens.back();
      steps.push_back(model.step(memory, live[b].state, prev, z));
    }
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const double base = live[b].hyp.logprob;
      if (live[b].hyp.tokens.size() == cap) {
        cands.push_back({base + steps[b].log_probs[corpus::kEos], b, corpus::kEos});
        continue;
      }
      for (std::size_t t = 0; t < V; ++t) cands.push_back({base + steps[b].log_probs[t], b, static_cast<TokenId>(t)});
    }
    const std::size_t keep = std::min(width, cands.size());
    auto better = [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    };
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    std::vector<Beam> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      Hypothesis h = live[c.beam].hyp;
      h.logprob = c.score;
      if (c.token == corpus::kEos) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back({std::move(h), steps[c.beam].next});
      }
    }
    live = std::move(next);
  }
  std::stable_sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens;
  });
  if (finished.size() > k) finished.resize(k);
  return finished;
}

}  // namespace protoedit::editor
