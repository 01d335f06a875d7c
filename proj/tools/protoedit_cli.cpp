// Command-line front end. Everything goes through the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoedit/protoedit.h"

namespace {

// Raised for any failed API call; carries the one-line reason.
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(pe_status s) {
  if (s != PE_OK) throw Failure(std::string(pe_status_name(s)) + ": " + pe_last_error());
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<pe_config, Deleter<pe_config, pe_config_free>>;
using Vocab = std::unique_ptr<pe_vocab, Deleter<pe_vocab, pe_vocab_free>>;
using Corpus = std::unique_ptr<pe_corpus, Deleter<pe_corpus, pe_corpus_free>>;
using Pairs = std::unique_ptr<pe_pairs, Deleter<pe_pairs, pe_pairs_free>>;
using Model = std::unique_ptr<pe_model, Deleter<pe_model, pe_model_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  pe_string_free(s);
  return out;
}

std::string get(const pe_config* c, const char* key) {
  char* v = nullptr;
  check(pe_config_get(c, key, &v));
  return take(v);
}

std::uint64_t get_uint(const pe_config* c, const char* key) { return std::stoull(get(c, key)); }

Vocab load_vocab(const std::string& path) {
  pe_vocab* v = nullptr;
  check(pe_vocab_load(path.c_str(), &v));
  return Vocab(v);
}

Corpus load_corpus(const pe_config* c, const pe_vocab* v, const std::string& path) {
  pe_corpus* out = nullptr;
  check(pe_corpus_load(c, v, path.c_str(), &out));
  return Corpus(out);
}

Model load_model(const std::string& path) {
  pe_model* m = nullptr;
  check(pe_model_load(path.c_str(), &m));
  return Model(m);
}

void print_config(const pe_config* c) {
  char* text = nullptr;
  check(pe_config_echo(c, &text));
  std::cout << "# resolved config\n" << take(text) << std::flush;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure("cannot open " + path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (l.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(l);
  return lines;
}

// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Failure("cannot write " + path);
}

const char* opt_path(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void print_epoch(const pe_epoch_metrics* m, void*) {
  std::fprintf(stderr, "epoch %llu loss %.6f token_nll %.6f\n",
               static_cast<unsigned long long>(m->epoch), m->mean_loss, m->mean_token_nll);
}

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> seed, threads, kappa, epsilon, temperature, beam, steps, n_seq,
      lambda_grid, epochs;
};

Config resolve(const Globals& g) {
  pe_config* raw = nullptr;
  check(g.config_path.empty() ? pe_config_new(&raw) : pe_config_load(g.config_path.c_str(), &raw));
  Config c(raw);
  for (const auto& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Failure("--set expects key=value, got '" + kv + "'");
    check(pe_config_set(c.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  const std::pair<const char*, const std::optional<std::string>*> flags[] = {
      {"seed", &g.seed},   {"threads", &g.threads},
      {"kappa", &g.kappa}, {"epsilon", &g.epsilon},
      {"temperature", &g.temperature}, {"beam", &g.beam},
      {"steps", &g.steps}, {"n_seq", &g.n_seq},
      {"lambda_grid", &g.lambda_grid}, {"epochs", &g.epochs}};
  for (const auto& [key, value] : flags)
    if (*value) check(pe_config_set(c.get(), key, (*value)->c_str()));
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-then-edit sentence models: mining, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "override any config key (key=value, repeatable)");
  app.add_option("--seed", g.seed, "global random seed");
  app.add_option("--threads", g.threads, "worker threads for mining and evaluation (0 = all cores)");
  app.add_option("--kappa", g.kappa, "vMF posterior concentration");
  app.add_option("--epsilon", g.epsilon, "posterior norm window width");
  app.add_option("--temperature", g.temperature, "sampling temperature (0 = greedy)");
  app.add_option("--beam", g.beam, "beam width for analogy decoding");
  app.add_option("--steps", g.steps, "edits per random walk");
  app.add_option("--n-seq", g.n_seq, "walks tried by control");
  app.add_option("--lambda-grid", g.lambda_grid, "comma-separated interpolation weights");
  app.add_option("--epochs", g.epochs, "training epochs to run");

  std::string input, corpus_path, vocab_path, pairs_path, out_path, resume, metrics, editor_path,
      nlm_path, train_path, valid_path, test_path, csv_path, summary_path, model_path, prototype,
      word_pairs, stopwords, quads_out;

  auto* pre = app.add_subcommand("preprocess", "placeholder substitution, filtering and vocabulary");
  pre->add_option("--input", input, "raw text, one sentence per line")->required();
  pre->add_option("--corpus-out", corpus_path, "preprocessed sentences")->required();
  pre->add_option("--vocab-out", vocab_path, "vocabulary file")->required();

  auto* mine = app.add_subcommand("mine", "mine lexically similar training pairs");
  mine->add_option("--corpus", corpus_path)->required();
  mine->add_option("--vocab", vocab_path)->required();
  mine->add_option("--out", out_path, "pairs TSV")->required();

  auto add_train = [&](const char* name, const char* help, bool pairs) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--corpus", corpus_path)->required();
    s->add_option("--vocab", vocab_path)->required();
    if (pairs) s->add_option("--pairs", pairs_path, "pairs TSV from mine")->required();
    s->add_option("--out", out_path, "checkpoint to write")->required();
    s->add_option("--resume", resume, "continue from this checkpoint");
    s->add_option("--metrics", metrics, "per-epoch metrics CSV");
    return s;
  };
  auto* tr = add_train("train", "train the neural editor", true);
  auto* tr_nlm = add_train("train-nlm", "train the NLM baseline", false);

  auto* ppl = app.add_subcommand("eval-ppl", "smoothed perplexity bound");
  ppl->add_option("--editor", editor_path)->required();
  ppl->add_option("--nlm", nlm_path)->required();
  ppl->add_option("--vocab", vocab_path)->required();
  ppl->add_option("--train", train_path)->required();
  ppl->add_option("--valid", valid_path);
  ppl->add_option("--test", test_path)->required();
  ppl->add_option("--csv", csv_path, "per-sentence scores");
  ppl->add_option("--summary", summary_path, "text summary");

  auto add_decode = [&](const char* name, const char* help, const char* text_flag) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--model", model_path)->required();
    s->add_option("--vocab", vocab_path)->required();
    auto* t = s->add_option(text_flag, prototype, "input sentence");
    auto* f = s->add_option("--input", input, "file of input sentences");
    t->excludes(f);
    s->add_option("--out", out_path, "output file (default stdout)");
    return s;
  };
  auto* gen = add_decode("generate", "sample edits of a prototype", "--prototype");
  auto* walk = add_decode("walk", "random walk of prior edits", "--from");
  auto* ctl = add_decode("control", "attribute-controlled editing", "--prototype");
  std::optional<std::string> max_tokens, keyword;
  ctl->add_option("--max-tokens", max_tokens, "endpoint must be shorter than this");
  ctl->add_option("--keyword", keyword, "endpoint must contain this word");

  auto* ana = app.add_subcommand("analogy", "sentence analogy evaluation");
  ana->add_option("--model", model_path)->required();
  ana->add_option("--vocab", vocab_path)->required();
  ana->add_option("--corpus", corpus_path)->required();
  ana->add_option("--word-pairs", word_pairs, "`w1 w2 [relation]` lines")->required();
  ana->add_option("--stopwords", stopwords, "stop-word file (default: built-in list)");
  ana->add_option("--quads-out", quads_out, "mined quads TSV");
  ana->add_option("--csv", csv_path, "accuracy table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (app.get_subcommands().empty()) {
      std::string names;
      for (const auto* s : app.get_subcommands({})) names += (names.empty() ? "" : ", ") + s->get_name();
      std::cerr << "protoedit: error: missing or unknown subcommand (expected one of: " << names << ")\n";
    } else {
      std::cerr << "protoedit: error: " << e.what() << '\n';
    }
    return 2;
  }

  try {
    Config cfg = resolve(g);
    if (ctl->parsed()) {
      if (max_tokens) check(pe_config_set(cfg.get(), "max_tokens", max_tokens->c_str()));
      if (keyword) check(pe_config_set(cfg.get(), "keyword", keyword->c_str()));
    }

    if (pre->parsed()) {
      print_config(cfg.get());
      pe_ingest_stats st{};
      check(pe_preprocess(cfg.get(), input.c_str(), corpus_path.c_str(), vocab_path.c_str(), &st));
      std::printf("lines %llu, empty %llu, too long %llu, kept %llu, vocab %llu, oov rate %.6f\n",
                  (unsigned long long)st.lines_read, (unsigned long long)st.empty_dropped,
                  (unsigned long long)st.too_long_dropped, (unsigned long long)st.sentences,
                  (unsigned long long)st.vocab_size, st.oov_rate);
    } else if (mine->parsed()) {
      print_config(cfg.get());
      auto v = load_vocab(vocab_path);
      auto c = load_corpus(cfg.get(), v.get(), corpus_path);
      pe_pairs* p = nullptr;
      pe_mine_stats st{};
      check(pe_mine(cfg.get(), c.get(), &p, &st));
      Pairs pairs(p);
      check(pe_pairs_save(pairs.get(), out_path.c_str()));
      std::printf("visited %llu, encountered %llu edges, kept %llu\n",
                  (unsigned long long)st.visited_nodes, (unsigned long long)st.encountered_edges,
                  (unsigned long long)st.kept_edges);
    } else if (tr->parsed() || tr_nlm->parsed()) {
      const bool nlm = tr_nlm->parsed();
      auto v = load_vocab(vocab_path);
      Model model;
      Config run;
      if (!resume.empty()) {
        // Hyperparameters come from the checkpoint; only the epoch count is new.
        model = load_model(resume);
        pe_config* mc = nullptr;
        check(pe_model_config(model.get(), &mc));
        run.reset(mc);
        check(pe_config_set(run.get(), "epochs", get(cfg.get(), "epochs").c_str()));
        if (pe_model_vocab_size(model.get()) != pe_vocab_size(v.get()))
          throw Failure("checkpoint vocabulary size does not match " + vocab_path);
      } else {
        pe_model* m = nullptr;
        check(pe_model_new(cfg.get(), nlm ? PE_MODEL_NLM : PE_MODEL_EDITOR, pe_vocab_size(v.get()), &m));
        model.reset(m);
      }
      print_config(run ? run.get() : cfg.get());
      auto c = load_corpus(run ? run.get() : cfg.get(), v.get(), corpus_path);
      const auto epochs = get_uint(run ? run.get() : cfg.get(), "epochs");
      if (nlm) {
        check(pe_train_nlm(model.get(), c.get(), epochs, opt_path(metrics), print_epoch, nullptr));
      } else {
        pe_pairs* p = nullptr;
        check(pe_pairs_load(pairs_path.c_str(), &p));
        Pairs pairs(p);
        check(pe_train_editor(model.get(), c.get(), pairs.get(), epochs, opt_path(metrics), print_epoch, nullptr));
      }
      check(pe_model_save(model.get(), out_path.c_str()));
    } else if (ppl->parsed()) {
      print_config(cfg.get());
      auto v = load_vocab(vocab_path);
      auto editor = load_model(editor_path);
      auto lm = load_model(nlm_path);
      auto train = load_corpus(cfg.get(), v.get(), train_path);
      auto test = load_corpus(cfg.get(), v.get(), test_path);
      Corpus valid;
      if (!valid_path.empty()) valid = load_corpus(cfg.get(), v.get(), valid_path);
      pe_perplexity_summary s{};
      check(pe_eval_perplexity(cfg.get(), editor.get(), lm.get(), train.get(), valid.get(), test.get(),
                               opt_path(csv_path), opt_path(summary_path), &s));
      std::printf("lambda %.9f\neditor_perplexity %.9f\nnlm_perplexity %.9f\nsmoothed_perplexity %.9f\n"
                  "coverage %.9f\nsentences %llu\ntokens %llu\n",
                  s.lambda, s.editor_perplexity, s.nlm_perplexity, s.smoothed_perplexity, s.coverage,
                  (unsigned long long)s.sentences, (unsigned long long)s.tokens);
    } else if (gen->parsed() || walk->parsed() || ctl->parsed()) {
      print_config(cfg.get());
      auto v = load_vocab(vocab_path);
      auto model = load_model(model_path);
      std::vector<std::string> inputs;
      if (!input.empty()) inputs = read_lines(input);
      else if (!prototype.empty()) inputs.push_back(prototype);
      const bool nlm_gen = gen->parsed() && pe_model_get_kind(model.get()) == PE_MODEL_NLM;
      if (inputs.empty() && nlm_gen) inputs.push_back("");
      if (inputs.empty()) throw Failure("no input sentence given");
      std::string text;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        char* out = nullptr;
        const char* in = inputs[i].c_str();
        if (gen->parsed()) {
          check(pe_generate(cfg.get(), model.get(), v.get(), nlm_gen ? "" : in, &out));
          text += take(out);
        } else if (walk->parsed()) {
          check(pe_walk(cfg.get(), model.get(), v.get(), in, &out));
          text += take(out);
        } else {
          int found = 0;
          check(pe_control(cfg.get(), model.get(), v.get(), in, &out, &found));
          text += found ? take(out) + "\n" : "<none>\n";
        }
        if (inputs.size() > 1 && i + 1 < inputs.size()) text += "\n";
      }
      emit(out_path, text);
    } else if (ana->parsed()) {
      print_config(cfg.get());
      auto v = load_vocab(vocab_path);
      auto model = load_model(model_path);
      auto c = load_corpus(cfg.get(), v.get(), corpus_path);
      pe_analogy_summary s{};
      check(pe_analogy(cfg.get(), model.get(), v.get(), c.get(), word_pairs.c_str(), opt_path(stopwords),
                       opt_path(quads_out), opt_path(csv_path), &s));
      std::printf("quads %llu\nedit top1 %.9f\nedit topk %.9f\nrandom top1 %.9f\nrandom topk %.9f\n",
                  (unsigned long long)s.quads, s.edit_top1, s.edit_topk, s.random_top1, s.random_topk);
    }
  } catch (const std::exception& e) {
    std::cerr << "protoedit: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
