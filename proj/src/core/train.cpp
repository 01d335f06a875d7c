#include "train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "log.hpp"

namespace protoedit::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

TrainConfig TrainConfig::from_run_config(const RunConfig& run, std::size_t vocab_size) {
  TrainConfig c;
  c.editor.layers = run.get_uint("layers");
  c.editor.hidden = run.get_uint("hidden");
  c.editor.word_dim = run.get_uint("word_dim");
  c.editor.max_length = run.get_uint("decode_length");
  c.editor.vocab_size = vocab_size;
  c.noise.kappa = run.get_real("kappa");
  c.noise.epsilon = run.get_real("epsilon");
  c.noise.norm_max = run.get_real("norm_max");
  c.optimizer = run.get_text("optimizer");
  c.learning_rate = run.get_real("learning_rate");
  c.batch_size = run.get_uint("batch_size");
  c.epochs = run.get_uint("epochs");
  c.seed = run.get_uint("seed");
  c.clip_norm = run.get_real("clip_norm");
  c.init_scale = run.get_real("init_scale");
  c.record_timing = run.get_bool("record_timing");
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  editor.validate();
  noise.validate();
  require(optimizer == "adam" || optimizer == "sgd", "optimizer must be adam or sgd, got '" + optimizer + "'");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(clip_norm >= 0.0, "clip_norm must be >= 0");
  require(init_scale > 0.0, "init_scale must be positive");
}

// ---- optimizer ----

Optimizer::Optimizer(std::string kind, double learning_rate, std::vector<ad::Parameter*> params)
    : kind_(std::move(kind)), lr_(learning_rate), params_(std::move(params)) {
  require(kind_ == "adam" || kind_ == "sgd", "unknown optimizer '" + kind_ + "'");
  if (kind_ == "adam") {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
}

void Optimizer::step() {
  ++t_;
  if (kind_ == "sgd") {
    for (auto* p : params_)
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr_ * p->grad[i];
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    double* m = m_[k].data();
    double* v = v_[k].data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      p->value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

double clip_gradients(std::span<ad::Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params)
      for (double& g : p->grad.values()) g *= s;
  }
  return norm;
}

// ---- model ----

Model Model::create(ModelKind kind, const RunConfig& config, std::size_t vocab_size) {
  const TrainConfig tc = TrainConfig::from_run_config(config, vocab_size);
  Model m;
  m.kind = kind;
  m.config = config;
  // Training is single-threaded, so the worker count is not part of a model.
  m.config.set("threads", "0");
  Rng rng(tc.seed);
  m.editor = editor::EditorModel(tc.editor, rng, tc.init_scale);
  m.embeddings = editvec::EditEmbeddings(vocab_size, tc.editor.word_dim, rng, tc.init_scale);
  m.optimizer = Optimizer(tc.optimizer, tc.learning_rate, m.trainable());
  m.rng_state = protoedit::rng_state(rng);
  return m;
}

std::vector<ad::Parameter*> Model::trainable() {
  std::vector<ad::Parameter*> out;
  for (std::size_t i = 0; i < editor.params().size(); ++i) out.push_back(&editor.params()[i]);
  if (kind == ModelKind::kEditor) out.push_back(&embeddings.phi());
  return out;
}

editvec::EditNoiseConfig Model::noise() const {
  return {config.get_real("kappa"), config.get_real("epsilon"), config.get_real("norm_max")};
}

// ---- losses ----

LossTerms elbo_loss(ad::Tape& tape, std::span<const TokenId> x, std::span<const TokenId> x_prime,
                    editor::EditorModel& model, editvec::EditEmbeddings& emb,
                    const editvec::EditNoiseConfig& noise, Rng& rng) {
  const auto diff = editvec::word_diff(x, x_prime);
  ad::Var f = editvec::edit_representation(tape, diff, emb);
  bool degenerate = true;
  for (double v : f.value().values()) degenerate = degenerate && v == 0.0;
  const auto draw = editvec::PosteriorNoise::draw(noise.kappa, f.value().size(), degenerate, rng);
  ad::Var z = editvec::compose_posterior(tape, f, degenerate, draw, noise);
  auto memory = model.encode(tape, x_prime);
  ad::Var nll = model.sequence_nll(tape, x, memory, z);
  LossTerms t;
  t.kl = editvec::kl_total(noise, static_cast<int>(f.value().size()));
  t.nll = nll.value().item();
  // The KL is a constant: adding it leaves every parameter gradient unchanged.
  t.loss = ad::add_constant(nll, t.kl);
  return t;
}

ad::Var nlm_loss(ad::Tape& tape, std::span<const TokenId> x, editor::EditorModel& model) {
  return model.sequence_nll(tape, x, model.nlm_memory(), ad::Var{});
}

// ---- training loops ----

namespace {

constexpr std::uint64_t kNoiseStream = 0x9e3779b97f4a7c15ULL;

template <typename Item, typename LossFn>
std::vector<EpochMetrics> run_epochs(Model& model, std::vector<Item> items, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch, LossFn&& loss_fn) {
  require(!items.empty(), "nothing to train on");
  cfg.validate();
  Rng rng;
  set_rng_state(rng, model.rng_state);
  auto params = model.trainable();
  std::vector<EpochMetrics> history;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::uint64_t epoch = model.epoch + 1;
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, nll_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      for (auto* p : params) p->grad.fill(0.0);
      for (std::size_t i = b0; i < b1; ++i) {
        Rng noise_rng = derive_rng(splitmix64(cfg.seed ^ kNoiseStream) + epoch, i);
        ad::Tape tape;
        const auto r = loss_fn(tape, items[order[i]], noise_rng);
        const double loss = r.loss.value().item();
        if (!std::isfinite(loss)) {
          fail(ErrorCode::kNumeric, "non-finite loss " + std::to_string(loss) + " at epoch " +
                                        std::to_string(epoch) + ", example " + std::to_string(order[i]));
        }
        tape.backward(r.loss);
        loss_sum += loss;
        nll_sum += r.nll;
        tokens += r.tokens;
      }
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      for (auto* p : params)
        for (double& g : p->grad.values()) g *= scale;
      const double gnorm = clip_gradients(params, cfg.clip_norm);
      if (!std::isfinite(gnorm)) {
        fail(ErrorCode::kNumeric, "non-finite gradient norm at epoch " + std::to_string(epoch));
      }
      model.optimizer.step();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(items.size());
    m.mean_token_nll = nll_sum / static_cast<double>(tokens);
    if (cfg.record_timing) m.tokens_per_sec = secs > 0 ? tokens / secs : 0.0;
    model.epoch = epoch;
    model.rng_state = rng_state(rng);
    log::info("epoch {} mean loss {:.6f} token nll {:.6f} ({:.1f}s)", epoch, m.mean_loss,
              m.mean_token_nll, secs);
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

struct StepLoss {
  ad::Var loss;
  double nll;
  std::size_t tokens;
};

}  // namespace

std::vector<EpochMetrics> train_editor(Model& model, const corpus::Corpus& corpus,
                                       std::span<const neighbors::TrainingPair> pairs,
                                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  require(model.kind == ModelKind::kEditor, "train_editor needs an editor model");
  std::vector<neighbors::TrainingPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& p : sorted) {
    require(p.proto_id < corpus.size() && p.target_id < corpus.size(), "training pair refers past the corpus end");
  }
  const auto noise = cfg.noise;
  return run_epochs(model, std::move(sorted), cfg, on_epoch,
                    [&](ad::Tape& tape, const neighbors::TrainingPair& p, Rng& rng) {
                      const auto& x = corpus[p.target_id].ids;
                      const auto& xp = corpus[p.proto_id].ids;
                      auto t = elbo_loss(tape, x, xp, model.editor, model.embeddings, noise, rng);
                      return StepLoss{t.loss, t.nll, x.size() + 1};
                    });
}

std::vector<EpochMetrics> train_nlm(Model& model, const corpus::Corpus& corpus,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch) {
  require(model.kind == ModelKind::kNlm, "train_nlm needs an NLM model");
  std::vector<std::size_t> ids(corpus.size());
  std::iota(ids.begin(), ids.end(), 0);
  return run_epochs(model, std::move(ids), cfg, on_epoch, [&](ad::Tape& tape, std::size_t i, Rng&) {
    ad::Var loss = nlm_loss(tape, corpus[i].ids, model.editor);
    return StepLoss{loss, loss.value().item(), corpus[i].size() + 1};
  });
}

void write_metrics_header(std::ostream& out) { out << "epoch,mean_loss,tokens_per_sec\n"; }

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", m.mean_loss);
  out << m.epoch << ',' << buf << ',';
  if (m.tokens_per_sec) {
    std::snprintf(buf, sizeof buf, "%.1f", *m.tokens_per_sec);
    out << buf;
  } else {
    out << "NA";
  }
  out << '\n';
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'T', 'O', 'E', 'D', 'T'};
enum : std::uint8_t { kF64 = 1, kU64 = 2, kBytes = 3 };

struct Section {
  std::string name;
  std::uint8_t dtype = kF64;
  std::vector<std::uint64_t> shape;
  std::string payload;  // raw little-endian bytes
};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) fail(ErrorCode::kFormat, "checkpoint truncated");
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (1ULL << 36)) fail(ErrorCode::kFormat, "checkpoint section length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) fail(ErrorCode::kFormat, "checkpoint truncated");
  return s;
}

Section tensor_section(const std::string& name, const ad::Tensor& t) {
  Section s{name, kF64, {}, {}};
  for (std::size_t i = 0; i < t.rank(); ++i) s.shape.push_back(t.shape()[i]);
  s.payload.assign(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  return s;
}

Section u64_section(const std::string& name, std::uint64_t v) {
  Section s{name, kU64, {1}, {}};
  s.payload.assign(reinterpret_cast<const char*>(&v), sizeof v);
  return s;
}

Section bytes_section(const std::string& name, const std::string& bytes) {
  return Section{name, kBytes, {bytes.size()}, bytes};
}

void write_section(std::ostream& out, const Section& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
  out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
  put<std::uint8_t>(out, s.dtype);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.shape.size()));
  for (auto d : s.shape) put<std::uint64_t>(out, d);
  put<std::uint64_t>(out, s.payload.size());
  out.write(s.payload.data(), static_cast<std::streamsize>(s.payload.size()));
}

Section read_section(std::istream& in) {
  Section s;
  s.name = get_bytes(in, get<std::uint32_t>(in));
  s.dtype = get<std::uint8_t>(in);
  const auto rank = get<std::uint32_t>(in);
  if (rank > 8) fail(ErrorCode::kFormat, "checkpoint section '" + s.name + "' has rank " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) s.shape.push_back(get<std::uint64_t>(in));
  s.payload = get_bytes(in, get<std::uint64_t>(in));
  return s;
}

void fill_tensor(ad::Tensor& t, const Section& s) {
  if (s.dtype != kF64) fail(ErrorCode::kFormat, "section '" + s.name + "' is not f64");
  bool same = s.shape.size() == t.rank() && s.payload.size() == t.size() * sizeof(double);
  for (std::size_t i = 0; same && i < t.rank(); ++i) same = s.shape[i] == t.shape()[i];
  if (!same) fail(ErrorCode::kFormat, "section '" + s.name + "' does not match shape " + t.shape().str());
  std::memcpy(t.data(), s.payload.data(), s.payload.size());
}

std::uint64_t read_u64(const Section& s) {
  if (s.dtype != kU64 || s.payload.size() != 8) fail(ErrorCode::kFormat, "section '" + s.name + "' is not a u64");
  std::uint64_t v;
  std::memcpy(&v, s.payload.data(), 8);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, Model& model) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string echo = model.config.echo();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(echo.size()));
  out.write(echo.data(), static_cast<std::streamsize>(echo.size()));

  std::vector<Section> sections;
  sections.push_back(bytes_section("meta/kind", model.kind == ModelKind::kEditor ? "editor" : "nlm"));
  sections.push_back(u64_section("meta/vocab_size", model.editor.config().vocab_size));
  sections.push_back(u64_section("state/epoch", model.epoch));
  sections.push_back(u64_section("state/optimizer_steps", model.optimizer.steps()));
  sections.push_back(bytes_section("state/rng", model.rng_state));
  auto params = model.trainable();
  // The NLM does not train Phi but still stores it, so both kinds share one
  // parameter layout.
  for (std::size_t i = 0; i < model.editor.params().size(); ++i) {
    const auto& p = model.editor.params()[i];
    sections.push_back(tensor_section("param/" + p.name, p.value));
  }
  sections.push_back(tensor_section("param/" + model.embeddings.phi().name, model.embeddings.phi().value));
  if (model.optimizer.kind() == "adam") {
    for (std::size_t k = 0; k < params.size(); ++k) {
      sections.push_back(tensor_section("adam_m/" + params[k]->name, model.optimizer.first_moments()[k]));
      sections.push_back(tensor_section("adam_v/" + params[k]->name, model.optimizer.second_moments()[k]));
    }
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) write_section(out, s);
  if (!out) fail(ErrorCode::kIo, "failed writing checkpoint");
}

Model read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    fail(ErrorCode::kFormat, "not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kVersion, "checkpoint format version " + std::to_string(version) +
                                  " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const RunConfig config = RunConfig::parse(get_bytes(in, get<std::uint32_t>(in)));
  const auto count = get<std::uint32_t>(in);
  std::map<std::string, Section> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s = read_section(in);
    std::string name = s.name;
    sections.emplace(std::move(name), std::move(s));
  }
  auto need = [&](const std::string& name) -> const Section& {
    auto it = sections.find(name);
    if (it == sections.end()) fail(ErrorCode::kFormat, "checkpoint is missing section '" + name + "'");
    return it->second;
  };
  const std::string kind = need("meta/kind").payload;
  if (kind != "editor" && kind != "nlm") fail(ErrorCode::kFormat, "unknown model kind '" + kind + "'");
  Model m = Model::create(kind == "editor" ? ModelKind::kEditor : ModelKind::kNlm, config,
                          read_u64(need("meta/vocab_size")));
  m.epoch = read_u64(need("state/epoch"));
  m.optimizer.set_steps(read_u64(need("state/optimizer_steps")));
  m.rng_state = need("state/rng").payload;
  for (std::size_t i = 0; i < m.editor.params().size(); ++i) {
    auto& p = m.editor.params()[i];
    fill_tensor(p.value, need("param/" + p.name));
  }
  fill_tensor(m.embeddings.phi().value, need("param/" + m.embeddings.phi().name));
  auto params = m.trainable();
  if (m.optimizer.kind() == "adam") {
    for (std::size_t k = 0; k < params.size(); ++k) {
      fill_tensor(m.optimizer.first_moments()[k], need("adam_m/" + params[k]->name));
      fill_tensor(m.optimizer.second_moments()[k], need("adam_v/" + params[k]->name));
    }
  }
  return m;
}

void save_checkpoint(const std::string& path, Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint '" + path + "'");
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace protoedit::train
