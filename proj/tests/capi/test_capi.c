/* Exercises the C interface from plain C. */

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "protoedit/protoedit.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

#define OK(call)                                                              \
  do {                                                                        \
    pe_status s_ = (call);                                                    \
    if (s_ != PE_OK) {                                                        \
      fprintf(stderr, "%s:%d: %s failed: %s\n", __FILE__, __LINE__, #call,    \
              pe_last_error());                                               \
      exit(1);                                                                \
    }                                                                         \
  } while (0)

static int epochs_seen = 0;

static void on_epoch(const pe_epoch_metrics* m, void* user) {
  (void)user;
  EXPECT(m->epoch == (uint64_t)(epochs_seen + 1));
  EXPECT(isfinite(m->mean_loss));
  EXPECT(m->tokens_per_sec < 0.0);
  ++epochs_seen;
}

static void test_config(void) {
  pe_config* c = NULL;
  OK(pe_config_new(&c));
  char* v = NULL;
  OK(pe_config_get(c, "kappa", &v));
  EXPECT(strcmp(v, "25") == 0);
  pe_string_free(v);

  EXPECT(pe_config_set(c, "no_such_key", "1") == PE_ERR_INVALID_ARGUMENT);
  EXPECT(strstr(pe_last_error(), "no_such_key") != NULL);
  EXPECT(pe_config_set(c, "hidden", "abc") == PE_ERR_INVALID_ARGUMENT);
  EXPECT(pe_config_set(NULL, "hidden", "3") == PE_ERR_INVALID_ARGUMENT);
  OK(pe_config_set(c, "hidden", "12"));

  char* echo = NULL;
  OK(pe_config_echo(c, &echo));
  EXPECT(strstr(echo, "hidden=12\n") != NULL);
  pe_config* again = NULL;
  OK(pe_config_parse(echo, &again));
  OK(pe_config_get(again, "hidden", &v));
  EXPECT(strcmp(v, "12") == 0);
  pe_string_free(v);
  pe_string_free(echo);
  pe_config_free(again);
  pe_config_free(c);
  pe_config_free(NULL);

  EXPECT(strcmp(pe_status_name(PE_ERR_VERSION), "version mismatch") == 0);
  EXPECT(pe_version()[0] != '\0');
}

static void test_errors(const char* dir) {
  pe_model* m = NULL;
  EXPECT(pe_model_load("/nonexistent/model.bin", &m) == PE_ERR_IO);
  EXPECT(m == NULL);
  pe_vocab* v = NULL;
  EXPECT(pe_vocab_load("/nonexistent/vocab.txt", &v) == PE_ERR_IO);

  char path[1024];
  snprintf(path, sizeof path, "%s/garbage.bin", dir);
  FILE* f = fopen(path, "wb");
  fputs("NOTACHECKPOINT", f);
  fclose(f);
  EXPECT(pe_model_load(path, &m) == PE_ERR_FORMAT);
}

static void test_pipeline(const char* data, const char* dir) {
  char raw[1024], corpus_path[1024], vocab_path[1024], pairs_path[1024], model_path[1024],
      metrics_path[1024], bad_path[1024];
  snprintf(raw, sizeof raw, "%s/fixture_train.txt", data);
  snprintf(corpus_path, sizeof corpus_path, "%s/corpus.txt", dir);
  snprintf(vocab_path, sizeof vocab_path, "%s/vocab.txt", dir);
  snprintf(pairs_path, sizeof pairs_path, "%s/pairs.tsv", dir);
  snprintf(model_path, sizeof model_path, "%s/editor.bin", dir);
  snprintf(metrics_path, sizeof metrics_path, "%s/metrics.csv", dir);
  snprintf(bad_path, sizeof bad_path, "%s/version.bin", dir);

  pe_config* c = NULL;
  OK(pe_config_parse("hidden=8\nword_dim=4\ndecode_length=12\nbatch_size=64\n"
                     "n_seeds=20\nbudget=300\nthreads=2\nlearning_rate=0.01\n",
                     &c));
  pe_ingest_stats st;
  OK(pe_preprocess(c, raw, corpus_path, vocab_path, &st));
  EXPECT(st.lines_read == 400);
  EXPECT(st.sentences == 400);
  EXPECT(st.oov_rate == 0.0);

  pe_vocab* v = NULL;
  OK(pe_vocab_load(vocab_path, &v));
  EXPECT(pe_vocab_size(v) == st.vocab_size);
  pe_corpus* corpus = NULL;
  OK(pe_corpus_load(c, v, corpus_path, &corpus));
  EXPECT(pe_corpus_size(corpus) == 400);
  char* s0 = NULL;
  OK(pe_corpus_sentence(corpus, v, 0, &s0));
  EXPECT(strlen(s0) > 0);
  pe_string_free(s0);
  EXPECT(pe_corpus_sentence(corpus, v, 400, &s0) == PE_ERR_INVALID_ARGUMENT);

  pe_pairs* pairs = NULL;
  pe_mine_stats ms;
  OK(pe_mine(c, corpus, &pairs, &ms));
  EXPECT(pe_pairs_size(pairs) == 300);
  EXPECT(ms.kept_edges == 300);
  for (size_t i = 0; i < pe_pairs_size(pairs); ++i) {
    size_t a, b;
    double d;
    OK(pe_pairs_get(pairs, i, &a, &b, &d));
    EXPECT(a < b);
    EXPECT(d < 0.5);
  }
  OK(pe_pairs_save(pairs, pairs_path));
  pe_pairs* loaded = NULL;
  OK(pe_pairs_load(pairs_path, &loaded));
  EXPECT(pe_pairs_size(loaded) == pe_pairs_size(pairs));

  pe_model* m = NULL;
  OK(pe_model_new(c, PE_MODEL_EDITOR, pe_vocab_size(v), &m));
  EXPECT(pe_model_get_kind(m) == PE_MODEL_EDITOR);
  EXPECT(pe_train_nlm(m, corpus, 1, NULL, NULL, NULL) == PE_ERR_INVALID_ARGUMENT);
  OK(pe_train_editor(m, corpus, loaded, 2, metrics_path, on_epoch, NULL));
  EXPECT(epochs_seen == 2);
  EXPECT(pe_model_epoch(m) == 2);
  OK(pe_model_save(m, model_path));

  /* Version field follows the 8-byte magic. */
  FILE* in = fopen(model_path, "rb");
  FILE* out = fopen(bad_path, "wb");
  int ch;
  long pos = 0;
  while ((ch = fgetc(in)) != EOF) {
    fputc(pos == 8 ? ch + 1 : ch, out);
    ++pos;
  }
  fclose(in);
  fclose(out);
  pe_model* bad = NULL;
  EXPECT(pe_model_load(bad_path, &bad) == PE_ERR_VERSION);

  pe_model* back = NULL;
  OK(pe_model_load(model_path, &back));
  EXPECT(pe_model_epoch(back) == 2);
  pe_config* mc = NULL;
  OK(pe_model_config(back, &mc));
  char* hv = NULL;
  OK(pe_config_get(mc, "hidden", &hv));
  EXPECT(strcmp(hv, "8") == 0);
  pe_string_free(hv);

  char* text = NULL;
  OK(pe_config_set(c, "n_gen", "3"));
  OK(pe_generate(c, back, v, "the pizza was good", &text));
  int lines = 0;
  for (const char* p = text; *p; ++p) lines += *p == '\n';
  EXPECT(lines == 3);
  pe_string_free(text);

  OK(pe_config_set(c, "steps", "2"));
  OK(pe_walk(c, back, v, "the pizza was good", &text));
  EXPECT(strncmp(text, "0\tthe pizza was good\n", 21) == 0);
  pe_string_free(text);

  int found = -1;
  EXPECT(pe_control(c, back, v, "the pizza was good", &text, &found) == PE_ERR_INVALID_ARGUMENT);
  OK(pe_config_set(c, "keyword", "zebra"));
  OK(pe_control(c, back, v, "the pizza was good", &text, &found));
  EXPECT(found == 0);
  EXPECT(text == NULL);
  OK(pe_config_set(c, "keyword", "pizza"));
  OK(pe_control(c, back, v, "the pizza was good", &text, &found));
  EXPECT(found == 1);
  EXPECT(text != NULL && strcmp(text, "the pizza was good") == 0);
  pe_string_free(text);

  pe_config_free(mc);
  pe_model_free(back);
  pe_model_free(m);
  pe_pairs_free(loaded);
  pe_pairs_free(pairs);
  pe_corpus_free(corpus);
  pe_vocab_free(v);
  pe_config_free(c);
}

int main(int argc, char** argv) {
  if (argc != 3) {
    fprintf(stderr, "usage: test_capi DATA_DIR WORK_DIR\n");
    return 2;
  }
  test_config();
  test_errors(argv[2]);
  test_pipeline(argv[1], argv[2]);
  if (failures) {
    fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  printf("all C API checks passed\n");
  return 0;
}
