#ifndef PROTOEDIT_PROTOEDIT_H
#define PROTOEDIT_PROTOEDIT_H

/*
 * C interface to the prototype-then-edit sentence model.
 *
 * Every function returns a pe_status. On failure the message is available
 * from pe_last_error() on the same thread until the next failing call.
 * Objects are opaque handles released with their *_free function; passing
 * NULL to a *_free function is a no-op. Strings returned through `char**`
 * are heap-allocated and released with pe_string_free.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PE_API __declspec(dllexport)
#else
#define PE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pe_status {
  PE_OK = 0,
  PE_ERR_INVALID_ARGUMENT = 1,
  PE_ERR_IO = 2,
  PE_ERR_FORMAT = 3,
  PE_ERR_VERSION = 4,
  PE_ERR_NUMERIC = 5,
  PE_ERR_STATE = 6,
  PE_ERR_INTERNAL = 7
} pe_status;

typedef enum pe_model_kind { PE_MODEL_EDITOR = 0, PE_MODEL_NLM = 1 } pe_model_kind;

typedef struct pe_config pe_config;
typedef struct pe_vocab pe_vocab;
typedef struct pe_corpus pe_corpus;
typedef struct pe_pairs pe_pairs;
typedef struct pe_model pe_model;

PE_API const char* pe_last_error(void);
PE_API const char* pe_status_name(pe_status status);
PE_API const char* pe_version(void);
PE_API void pe_string_free(char* s);

/* ---- configuration ---- */

/* All keys at their defaults. */
PE_API pe_status pe_config_new(pe_config** out);
/* `key=value` lines; `#` starts a comment. */
PE_API pe_status pe_config_load(const char* path, pe_config** out);
PE_API pe_status pe_config_parse(const char* text, pe_config** out);
PE_API pe_status pe_config_copy(const pe_config* config, pe_config** out);
PE_API pe_status pe_config_set(pe_config* config, const char* key, const char* value);
PE_API pe_status pe_config_get(const pe_config* config, const char* key, char** value);
/* Every key in schema order, one `key=value` per line. */
PE_API pe_status pe_config_echo(const pe_config* config, char** text);
PE_API void pe_config_free(pe_config* config);

/* ---- corpus ---- */

typedef struct pe_ingest_stats {
  uint64_t lines_read;
  uint64_t empty_dropped;
  uint64_t too_long_dropped;
  uint64_t sentences;
  uint64_t vocab_size;
  double oov_rate;
} pe_ingest_stats;

/*
 * Applies placeholder substitution to `raw_path`, drops empty and
 * over-length lines, writes the surviving lines to `corpus_out` and, when
 * `vocab_out` is not NULL, builds a vocabulary of at most `vocab_size`
 * entries and saves it. `stats` may be NULL.
 */
PE_API pe_status pe_preprocess(const pe_config* config, const char* raw_path,
                               const char* corpus_out, const char* vocab_out,
                               pe_ingest_stats* stats);

PE_API pe_status pe_vocab_load(const char* path, pe_vocab** out);
PE_API size_t pe_vocab_size(const pe_vocab* vocab);
PE_API void pe_vocab_free(pe_vocab* vocab);

/* Loads and encodes a one-sentence-per-line file. */
PE_API pe_status pe_corpus_load(const pe_config* config, const pe_vocab* vocab, const char* path,
                                pe_corpus** out);
PE_API size_t pe_corpus_size(const pe_corpus* corpus);
PE_API pe_status pe_corpus_sentence(const pe_corpus* corpus, const pe_vocab* vocab, size_t index,
                                    char** text);
PE_API void pe_corpus_free(pe_corpus* corpus);

/* ---- pair mining ---- */

typedef struct pe_mine_stats {
  uint64_t visited_nodes;
  uint64_t encountered_edges;
  uint64_t kept_edges;
} pe_mine_stats;

/* LSH index plus BFS mining with the configured hash, seed and budget keys. */
PE_API pe_status pe_mine(const pe_config* config, const pe_corpus* corpus, pe_pairs** out,
                         pe_mine_stats* stats);
PE_API pe_status pe_pairs_load(const char* path, pe_pairs** out);
PE_API pe_status pe_pairs_save(const pe_pairs* pairs, const char* path);
PE_API size_t pe_pairs_size(const pe_pairs* pairs);
PE_API pe_status pe_pairs_get(const pe_pairs* pairs, size_t index, size_t* proto_id,
                              size_t* target_id, double* distance);
PE_API void pe_pairs_free(pe_pairs* pairs);

/* ---- models and training ---- */

PE_API pe_status pe_model_new(const pe_config* config, pe_model_kind kind, size_t vocab_size,
                              pe_model** out);
PE_API pe_status pe_model_load(const char* path, pe_model** out);
PE_API pe_status pe_model_save(pe_model* model, const char* path);
PE_API pe_model_kind pe_model_get_kind(const pe_model* model);
PE_API uint64_t pe_model_epoch(const pe_model* model);
PE_API size_t pe_model_vocab_size(const pe_model* model);
/* A copy of the configuration the model was created with. */
PE_API pe_status pe_model_config(const pe_model* model, pe_config** out);
PE_API void pe_model_free(pe_model* model);

typedef struct pe_epoch_metrics {
  uint64_t epoch;
  double mean_loss;
  double mean_token_nll;
  double tokens_per_sec; /* negative when timing is off */
} pe_epoch_metrics;

typedef void (*pe_epoch_callback)(const pe_epoch_metrics* metrics, void* user);

/*
 * Runs `epochs` more epochs using the hyperparameters stored in the model,
 * so a resumed run continues exactly where the saved one stopped. When
 * `metrics_path` is not NULL the per-epoch CSV is written there.
 */
PE_API pe_status pe_train_editor(pe_model* model, const pe_corpus* corpus, const pe_pairs* pairs,
                                 uint64_t epochs, const char* metrics_path,
                                 pe_epoch_callback callback, void* user);
PE_API pe_status pe_train_nlm(pe_model* model, const pe_corpus* corpus, uint64_t epochs,
                              const char* metrics_path, pe_epoch_callback callback, void* user);

/* ---- evaluation ---- */

typedef struct pe_perplexity_summary {
  double lambda;
  double editor_perplexity;
  double nlm_perplexity;
  double smoothed_perplexity;
  double coverage;
  uint64_t sentences;
  uint64_t tokens;
} pe_perplexity_summary;

/*
 * Neighborhood bound of `editor` against `train`, smoothed with `nlm`, with
 * the interpolation weight chosen on `valid` from the lambda_grid key.
 * `valid` may be NULL when the grid has a single value. Either output path
 * may be NULL.
 */
PE_API pe_status pe_eval_perplexity(const pe_config* config, const pe_model* editor,
                                    const pe_model* nlm, const pe_corpus* train,
                                    const pe_corpus* valid, const pe_corpus* test,
                                    const char* csv_path, const char* summary_path,
                                    pe_perplexity_summary* summary);

/*
 * n_gen edits of `prototype`, each with z drawn from the prior and decoded
 * at the configured temperature; an NLM ignores the prototype. Output is
 * one sentence per line.
 */
PE_API pe_status pe_generate(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                             const char* prototype, char** text);

/* One random walk of `steps` edits; lines are `step<TAB>sentence`. */
PE_API pe_status pe_walk(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                         const char* seed_sentence, char** text);

/*
 * Controlled edit of `prototype` toward max_tokens (shorter than) or
 * keyword (contains); exactly one of the two keys must be set. `*found` is
 * 0 and `*text` NULL when no walk qualifies.
 */
PE_API pe_status pe_control(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                            const char* prototype, char** text, int* found);

typedef struct pe_analogy_summary {
  uint64_t quads;
  double edit_top1;
  double edit_topk;
  double random_top1;
  double random_topk;
} pe_analogy_summary;

/*
 * Mines analogy quads for the `w1 w2 [relation]` lines of `word_pairs_path`
 * and scores them with beam search. `stopwords_path` may be NULL for the
 * built-in list. `quads_path` (optional) receives the mined quads as TSV and
 * `csv_path` (optional) the per-relation accuracies.
 */
PE_API pe_status pe_analogy(const pe_config* config, const pe_model* model, const pe_vocab* vocab,
                            const pe_corpus* corpus, const char* word_pairs_path,
                            const char* stopwords_path, const char* quads_path,
                            const char* csv_path, pe_analogy_summary* summary);

#ifdef __cplusplus
}
#endif

#endif /* PROTOEDIT_PROTOEDIT_H */
