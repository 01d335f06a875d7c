#include "protoedit/protoedit.h"

#include <fmt/format.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <new>
#include <optional>
#include <sstream>
#include <string>

#include "config.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "log.hpp"
#include "neighbors.hpp"
#include "parallel.hpp"
#include "train.hpp"

using namespace protoedit;

struct pe_config {
  RunConfig value;
};
struct pe_vocab {
  corpus::Vocabulary value;
};
struct pe_corpus {
  corpus::Corpus value;
};
struct pe_pairs {
  std::vector<neighbors::NeighborEdge> value;
};
struct pe_model {
  train::Model value;
};

namespace {

thread_local std::string g_last_error;

pe_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return PE_ERR_INVALID_ARGUMENT;
    case ErrorCode::kIo: return PE_ERR_IO;
    case ErrorCode::kFormat: return PE_ERR_FORMAT;
    case ErrorCode::kVersion: return PE_ERR_VERSION;
    case ErrorCode::kNumeric: return PE_ERR_NUMERIC;
    case ErrorCode::kState: return PE_ERR_STATE;
    case ErrorCode::kInternal: return PE_ERR_INTERNAL;
  }
  return PE_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into a status and the last-error text.
template <typename Fn>
pe_status guarded(Fn&& fn) {
  try {
    log::init_from_env();
    fn();
    return PE_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PE_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PE_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PE_ERR_INTERNAL;
  }
}

template <typename T>
T& deref(T* p, const char* what) {
  if (p == nullptr) fail(ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
  return *p;
}

const char* text_arg(const char* s, const char* what) {
  if (s == nullptr) fail(ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
  return s;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::size_t thread_count(const RunConfig& c) {
  const auto t = c.get_uint("threads");
  return t == 0 ? default_threads() : static_cast<std::size_t>(t);
}

std::ofstream open_out(const char* path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, std::string("cannot write ") + path);
  return out;
}

void finish(std::ofstream& out, const char* path) {
  out.close();
  if (!out) fail(ErrorCode::kIo, std::string("error writing ") + path);
}

corpus::IngestOptions ingest_options(const RunConfig& c) {
  return {static_cast<std::size_t>(c.get_uint("max_length")), c.get_bool("dates")};
}

std::vector<TokenId> encode_text(const RunConfig& c, const corpus::Vocabulary& vocab,
                                 const char* text, const char* what) {
  const corpus::Placeholders ph(c.get_bool("dates"));
  return corpus::encode(ph.apply(text_arg(text, what)), vocab).ids;
}

void check_vocab(const pe_model& m, const corpus::Vocabulary& vocab) {
  if (m.value.editor.config().vocab_size != vocab.size())
    fail(ErrorCode::kInvalidArgument,
         fmt::format("model vocabulary size {} does not match vocabulary file size {}",
                     m.value.editor.config().vocab_size, vocab.size()));
}

neighbors::MinHashParams lsh_params(const RunConfig& c) {
  neighbors::MinHashParams p;
  p.n_hash = c.get_uint("n_hash");
  p.bands = c.get_uint("bands");
  p.rows = c.get_uint("rows");
  p.seed = c.get_uint("lsh_seed");
  p.validate();
  return p;
}

void train_common(pe_model* model, uint64_t epochs, const char* metrics_path,
                  pe_epoch_callback callback, void* user, train::ModelKind kind,
                  const std::function<void(const train::TrainConfig&, const train::EpochCallback&)>& run) {
  auto& m = deref(model, "model").value;
  if (m.kind != kind)
    fail(ErrorCode::kInvalidArgument, kind == train::ModelKind::kEditor
                                          ? "this checkpoint is an NLM; use the NLM trainer"
                                          : "this checkpoint is an editor; use the editor trainer");
  auto cfg = train::TrainConfig::from_run_config(m.config, m.editor.config().vocab_size);
  cfg.epochs = epochs;
  std::ofstream metrics;
  if (metrics_path) {
    metrics = open_out(metrics_path);
    train::write_metrics_header(metrics);
  }
  run(cfg, [&](const train::EpochMetrics& e) {
    if (metrics_path) {
      train::write_metrics_row(metrics, e);
      metrics.flush();
    }
    if (callback) {
      pe_epoch_metrics pm{e.epoch, e.mean_loss, e.mean_token_nll, e.tokens_per_sec.value_or(-1.0)};
      callback(&pm, user);
    }
  });
  if (metrics_path) finish(metrics, metrics_path);
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace

extern "C" {

const char* pe_last_error(void) { return g_last_error.c_str(); }

const char* pe_status_name(pe_status status) {
  switch (status) {
    case PE_OK: return "ok";
    case PE_ERR_INVALID_ARGUMENT: return "invalid argument";
    case PE_ERR_IO: return "i/o error";
    case PE_ERR_FORMAT: return "format error";
    case PE_ERR_VERSION: return "version mismatch";
    case PE_ERR_NUMERIC: return "numeric failure";
    case PE_ERR_STATE: return "invalid state";
    case PE_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* pe_version(void) { return "1.0.0"; }

void pe_string_free(char* s) { std::free(s); }

// ---- configuration ----

pe_status pe_config_new(pe_config** out) {
  return guarded([&] { deref(out, "out") = new pe_config{RunConfig{}}; });
}

pe_status pe_config_load(const char* path, pe_config** out) {
  return guarded([&] {
    auto c = RunConfig::load(text_arg(path, "path"));
    deref(out, "out") = new pe_config{std::move(c)};
  });
}

pe_status pe_config_parse(const char* text, pe_config** out) {
  return guarded([&] {
    auto c = RunConfig::parse(text_arg(text, "text"));
    deref(out, "out") = new pe_config{std::move(c)};
  });
}

pe_status pe_config_copy(const pe_config* config, pe_config** out) {
  return guarded([&] { deref(out, "out") = new pe_config{deref(config, "config").value}; });
}

pe_status pe_config_set(pe_config* config, const char* key, const char* value) {
  return guarded([&] { deref(config, "config").value.set(text_arg(key, "key"), text_arg(value, "value")); });
}

pe_status pe_config_get(const pe_config* config, const char* key, char** value) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const std::string k = text_arg(key, "key");
    // The echo holds the canonical text of every key.
    std::istringstream lines(c.echo());
    for (std::string line; std::getline(lines, line);) {
      if (line.compare(0, k.size() + 1, k + "=") == 0) {
        deref(value, "value") = dup_string(line.substr(k.size() + 1));
        return;
      }
    }
    fail(ErrorCode::kInvalidArgument, "unknown config key '" + k + "'");
  });
}

pe_status pe_config_echo(const pe_config* config, char** text) {
  return guarded([&] { deref(text, "text") = dup_string(deref(config, "config").value.echo()); });
}

void pe_config_free(pe_config* config) { delete config; }

// ---- corpus ----

pe_status pe_preprocess(const pe_config* config, const char* raw_path, const char* corpus_out,
                        const char* vocab_out, pe_ingest_stats* stats) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    std::ifstream in(text_arg(raw_path, "raw_path"));
    if (!in) fail(ErrorCode::kIo, std::string("cannot open ") + raw_path);
    corpus::IngestStats st;
    const auto lines = corpus::preprocess_lines(in, ingest_options(c), &st);
    if (lines.empty()) fail(ErrorCode::kInvalidArgument, std::string("no usable sentences in ") + raw_path);
    auto out = open_out(text_arg(corpus_out, "corpus_out"));
    for (const auto& l : lines) out << l << '\n';
    finish(out, corpus_out);
    std::size_t vocab_size = 0;
    double oov = 0.0;
    if (vocab_out) {
      const auto vocab = corpus::build_vocab(lines, c.get_uint("vocab_size"));
      vocab.save(vocab_out);
      vocab_size = vocab.size();
      oov = corpus::oov_rate(corpus::Corpus::from_lines(lines, vocab, ingest_options(c)));
    }
    if (stats) *stats = {st.lines_read, st.empty_dropped, st.too_long_dropped, lines.size(), vocab_size, oov};
  });
}

pe_status pe_vocab_load(const char* path, pe_vocab** out) {
  return guarded([&] {
    auto v = corpus::Vocabulary::load(text_arg(path, "path"));
    deref(out, "out") = new pe_vocab{std::move(v)};
  });
}

size_t pe_vocab_size(const pe_vocab* vocab) { return vocab ? vocab->value.size() : 0; }

void pe_vocab_free(pe_vocab* vocab) { delete vocab; }

pe_status pe_corpus_load(const pe_config* config, const pe_vocab* vocab, const char* path,
                         pe_corpus** out) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    auto corp = corpus::Corpus::load(text_arg(path, "path"), deref(vocab, "vocab").value, ingest_options(c));
    deref(out, "out") = new pe_corpus{std::move(corp)};
  });
}

size_t pe_corpus_size(const pe_corpus* corpus) { return corpus ? corpus->value.size() : 0; }

pe_status pe_corpus_sentence(const pe_corpus* corpus, const pe_vocab* vocab, size_t index,
                             char** text) {
  return guarded([&] {
    const auto& corp = deref(corpus, "corpus").value;
    require(index < corp.size(), "sentence index out of range");
    deref(text, "text") = dup_string(corpus::decode(corp[index].ids, deref(vocab, "vocab").value));
  });
}

void pe_corpus_free(pe_corpus* corpus) { delete corpus; }

// ---- pair mining ----

pe_status pe_mine(const pe_config* config, const pe_corpus* corpus, pe_pairs** out,
                  pe_mine_stats* stats) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const auto& corp = deref(corpus, "corpus").value;
    const std::size_t threads = thread_count(c);
    const auto index = neighbors::LshIndex::build(corp, lsh_params(c), threads);
    Rng rng(c.get_uint("seed"));
    neighbors::MiningOptions opt{c.get_bool("include_identity"), threads};
    auto result = neighbors::mine_pairs_bfs(index, corp, c.get_uint("n_seeds"), c.get_uint("budget"), rng, opt);
    if (stats) *stats = {result.visited_nodes, result.encountered_edges, result.edges.size()};
    deref(out, "out") = new pe_pairs{std::move(result.edges)};
  });
}

pe_status pe_pairs_load(const char* path, pe_pairs** out) {
  return guarded([&] {
    auto edges = neighbors::load_pairs(text_arg(path, "path"));
    deref(out, "out") = new pe_pairs{std::move(edges)};
  });
}

pe_status pe_pairs_save(const pe_pairs* pairs, const char* path) {
  return guarded([&] { neighbors::save_pairs(text_arg(path, "path"), deref(pairs, "pairs").value); });
}

size_t pe_pairs_size(const pe_pairs* pairs) { return pairs ? pairs->value.size() : 0; }

pe_status pe_pairs_get(const pe_pairs* pairs, size_t index, size_t* proto_id, size_t* target_id,
                       double* distance) {
  return guarded([&] {
    const auto& v = deref(pairs, "pairs").value;
    require(index < v.size(), "pair index out of range");
    if (proto_id) *proto_id = v[index].proto_id;
    if (target_id) *target_id = v[index].target_id;
    if (distance) *distance = v[index].distance;
  });
}

void pe_pairs_free(pe_pairs* pairs) { delete pairs; }

// ---- models and training ----

pe_status pe_model_new(const pe_config* config, pe_model_kind kind, size_t vocab_size,
                       pe_model** out) {
  return guarded([&] {
    require(kind == PE_MODEL_EDITOR || kind == PE_MODEL_NLM, "unknown model kind");
    const auto k = kind == PE_MODEL_EDITOR ? train::ModelKind::kEditor : train::ModelKind::kNlm;
    auto m = train::Model::create(k, deref(config, "config").value, vocab_size);
    deref(out, "out") = new pe_model{std::move(m)};
  });
}

pe_status pe_model_load(const char* path, pe_model** out) {
  return guarded([&] {
    auto m = train::load_checkpoint(text_arg(path, "path"));
    deref(out, "out") = new pe_model{std::move(m)};
  });
}

pe_status pe_model_save(pe_model* model, const char* path) {
  return guarded([&] { train::save_checkpoint(text_arg(path, "path"), deref(model, "model").value); });
}

pe_model_kind pe_model_get_kind(const pe_model* model) {
  return model && model->value.kind == train::ModelKind::kNlm ? PE_MODEL_NLM : PE_MODEL_EDITOR;
}

uint64_t pe_model_epoch(const pe_model* model) { return model ? model->value.epoch : 0; }

size_t pe_model_vocab_size(const pe_model* model) {
  return model ? model->value.editor.config().vocab_size : 0;
}

pe_status pe_model_config(const pe_model* model, pe_config** out) {
  return guarded([&] { deref(out, "out") = new pe_config{deref(model, "model").value.config}; });
}

void pe_model_free(pe_model* model) { delete model; }

pe_status pe_train_editor(pe_model* model, const pe_corpus* corpus, const pe_pairs* pairs,
                          uint64_t epochs, const char* metrics_path, pe_epoch_callback callback,
                          void* user) {
  return guarded([&] {
    const auto& corp = deref(corpus, "corpus").value;
    const auto train_pairs = neighbors::both_orderings(deref(pairs, "pairs").value);
    train_common(model, epochs, metrics_path, callback, user, train::ModelKind::kEditor,
                 [&](const train::TrainConfig& cfg, const train::EpochCallback& cb) {
                   train::train_editor(model->value, corp, train_pairs, cfg, cb);
                 });
  });
}

pe_status pe_train_nlm(pe_model* model, const pe_corpus* corpus, uint64_t epochs,
                       const char* metrics_path, pe_epoch_callback callback, void* user) {
  return guarded([&] {
    const auto& corp = deref(corpus, "corpus").value;
    train_common(model, epochs, metrics_path, callback, user, train::ModelKind::kNlm,
                 [&](const train::TrainConfig& cfg, const train::EpochCallback& cb) {
                   train::train_nlm(model->value, corp, cfg, cb);
                 });
  });
}

// ---- evaluation ----

pe_status pe_eval_perplexity(const pe_config* config, const pe_model* editor, const pe_model* nlm,
                             const pe_corpus* train, const pe_corpus* valid,
                             const pe_corpus* test, const char* csv_path,
                             const char* summary_path, pe_perplexity_summary* summary) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const auto& ed = deref(editor, "editor").value;
    const auto& lm = deref(nlm, "nlm").value;
    require(ed.kind == train::ModelKind::kEditor, "the editor checkpoint holds an NLM");
    require(lm.kind == train::ModelKind::kNlm, "the NLM checkpoint holds an editor");
    require(ed.editor.config().vocab_size == lm.editor.config().vocab_size,
            "editor and NLM vocabularies differ in size");
    const auto& tr = deref(train, "train").value;
    const auto& te = deref(test, "test").value;
    const auto grid = c.get_real_list("lambda_grid");
    require(valid != nullptr || grid.size() == 1, "a validation corpus is needed to choose lambda");

    const std::size_t threads = thread_count(c);
    const auto index = neighbors::LshIndex::build(tr, lsh_params(c), threads);
    eval::ScoreOptions opt;
    opt.bound.noise = ed.noise();
    opt.bound.samples = c.get_uint("samples");
    opt.bound.include_identity = c.get_bool("include_identity");
    opt.threads = threads;
    opt.seed = c.get_uint("seed");
    auto test_scores = eval::score_sentences(te, index, tr, ed.editor, ed.embeddings, lm.editor, opt);
    std::vector<eval::SentenceScore> valid_scores;
    if (valid != nullptr && grid.size() > 1) {
      // A separate stream so validation and test draws never coincide.
      opt.seed = splitmix64(opt.seed ^ 0x76616c6964ULL);
      valid_scores = eval::score_sentences(valid->value, index, tr, ed.editor, ed.embeddings, lm.editor, opt);
    }
    const auto report = eval::smoothed_perplexity(std::move(test_scores), valid_scores, grid);
    if (csv_path) {
      auto out = open_out(csv_path);
      eval::write_perplexity_csv(out, report);
      finish(out, csv_path);
    }
    if (summary_path) {
      auto out = open_out(summary_path);
      eval::write_perplexity_summary(out, report);
      finish(out, summary_path);
    }
    if (summary) {
      *summary = {report.lambda, report.editor_perplexity, report.nlm_perplexity,
                  report.smoothed_perplexity, report.coverage, report.sentences.size(),
                  report.total_tokens};
    }
  });
}

pe_status pe_generate(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                      const char* prototype, char** text) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const auto& m = deref(model, "model").value;
    const auto& v = deref(vocab, "vocab").value;
    check_vocab(*model, v);
    const bool nlm = m.kind == train::ModelKind::kNlm;
    const auto memory = nlm ? m.editor.nlm_memory_tensor()
                            : m.editor.encode(encode_text(c, v, prototype, "prototype"));
    const double temperature = c.get_real("temperature");
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < c.get_uint("n_gen"); ++i) {
      Rng rng = derive_rng(c.get_uint("seed"), i);
      std::vector<double> z;
      if (!nlm) z = editvec::sample_prior(m.editor.config().word_dim, rng, m.noise().norm_max).z;
      const auto hyp = editor::sample(m.editor, memory, z, temperature, rng);
      lines.push_back(corpus::decode(hyp.tokens, v));
    }
    deref(text, "text") = dup_string(join_lines(lines));
  });
}

pe_status pe_walk(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                  const char* seed_sentence, char** text) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const auto& m = deref(model, "model").value;
    const auto& v = deref(vocab, "vocab").value;
    require(m.kind == train::ModelKind::kEditor, "random walks need an editor checkpoint");
    check_vocab(*model, v);
    Rng rng = derive_rng(c.get_uint("seed"), 0);
    const auto w = eval::random_walk(encode_text(c, v, seed_sentence, "seed sentence"),
                                     c.get_uint("steps"), c.get_real("temperature"), m.editor,
                                     m.noise().norm_max, rng);
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < w.sentences.size(); ++i)
      lines.push_back(fmt::format("{}\t{}", i, corpus::decode(w.sentences[i], v)));
    deref(text, "text") = dup_string(join_lines(lines));
  });
}

pe_status pe_control(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                     const char* prototype, char** text, int* found) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const auto& m = deref(model, "model").value;
    const auto& v = deref(vocab, "vocab").value;
    require(m.kind == train::ModelKind::kEditor, "controlled editing needs an editor checkpoint");
    check_vocab(*model, v);
    auto& out_text = deref(text, "text");
    auto& out_found = deref(found, "found");
    const auto max_tokens = c.get_uint("max_tokens");
    const auto& keyword = c.get_text("keyword");
    require((max_tokens > 0) != !keyword.empty(), "set exactly one of max_tokens and keyword");
    std::optional<TokenId> kw;
    if (!keyword.empty() && v.contains(keyword)) kw = v.id(keyword);
    const auto pred = max_tokens > 0 ? eval::ControlPredicate::shorter_than(max_tokens)
                                     : eval::ControlPredicate::contains(kw);
    eval::ControlOptions opt;
    opt.n_seq = c.get_uint("n_seq");
    opt.steps = c.get_uint("steps");
    opt.temperature = c.get_real("temperature");
    opt.norm_max = m.noise().norm_max;
    opt.seed = c.get_uint("seed");
    opt.threads = thread_count(c);
    const auto r = eval::controlled_edit(encode_text(c, v, prototype, "prototype"), pred, m.editor, opt);
    out_found = r ? 1 : 0;
    out_text = r ? dup_string(corpus::decode(r->sentence, v)) : nullptr;
  });
}

pe_status pe_analogy(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                     const pe_corpus* corpus, const char* word_pairs_path,
                     const char* stopwords_path, const char* quads_path, const char* csv_path,
                     pe_analogy_summary* summary) {
  return guarded([&] {
    const auto& c = deref(config, "config").value;
    const auto& m = deref(model, "model").value;
    const auto& v = deref(vocab, "vocab").value;
    const auto& corp = deref(corpus, "corpus").value;
    require(m.kind == train::ModelKind::kEditor, "analogy evaluation needs an editor checkpoint");
    check_vocab(*model, v);
    const auto pairs = eval::load_word_pairs(text_arg(word_pairs_path, "word_pairs_path"), v);
    std::vector<std::string> stop_words = eval::default_stop_words();
    if (stopwords_path) {
      std::ifstream in(stopwords_path);
      if (!in) fail(ErrorCode::kIo, std::string("cannot open ") + stopwords_path);
      stop_words.clear();
      for (std::string w; in >> w;) stop_words.push_back(w);
    }
    const auto quads = eval::mine_analogy_quads(corp, pairs, eval::stop_word_ids(stop_words, v),
                                                c.get_uint("max_quads"));
    if (quads_path) {
      auto out = open_out(quads_path);
      out << "relation\tx1\tx2\ty1\ty2\n";
      for (const auto& q : quads)
        out << pairs[q.word_pair].relation << '\t' << corpus::decode(corp[q.x1].ids, v) << '\t'
            << corpus::decode(corp[q.x2].ids, v) << '\t' << corpus::decode(corp[q.y1].ids, v) << '\t'
            << corpus::decode(corp[q.y2].ids, v) << '\n';
      finish(out, quads_path);
    }
    eval::AnalogyOptions opt;
    opt.ks = {1, static_cast<std::size_t>(c.get_uint("topk"))};
    opt.beam = c.get_uint("beam");
    opt.noise = m.noise();
    opt.seed = c.get_uint("seed");
    opt.threads = thread_count(c);
    const auto report = eval::analogy_eval(quads, corp, pairs, m.editor, m.embeddings, opt);
    if (csv_path) {
      auto out = open_out(csv_path);
      eval::write_analogy_csv(out, report);
      finish(out, csv_path);
    }
    if (summary) {
      const auto& o = report.overall;
      *summary = {quads.size(), o.edit[0], o.edit[1], o.random[0], o.random[1]};
    }
  });
}

}  // extern "C"
