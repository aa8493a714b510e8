/* C interface to the PRIME extreme multi-label retrieval engine.
 *
 * Every call returns a prime_status; on failure prime_last_error() describes
 * the error for the calling thread until its next failing call. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with prime_string_free. Handles are released with their _free
 * function, which accepts NULL.
 */
#ifndef PRIME_PRIME_H
#define PRIME_PRIME_H

#include <stddef.h>
#include <stdint.h>

#if defined(PRIME_BUILDING_LIBRARY)
#define PRIME_API __attribute__((visibility("default")))
#else
#define PRIME_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum prime_status {
    PRIME_OK = 0,
    PRIME_ERR_USAGE = 1,
    PRIME_ERR_DATA = 2,
    PRIME_ERR_NUMERIC = 3,
    PRIME_ERR_IO = 4,
    PRIME_ERR_INTERNAL = 5
} prime_status;

typedef enum prime_loss_mode {
    PRIME_LOSS_DYNAMIC = 0,
    PRIME_LOSS_FIXED = 1,
    PRIME_LOSS_DYNAMIC_DERIVED = 2 /* Uncertain-region gradient (-1, +1) */
} prime_loss_mode;
typedef enum prime_loss_terms { PRIME_TERMS_FULL = 0, PRIME_TERMS_PROTOTYPE_ONLY = 1 } prime_loss_terms;
typedef enum prime_score_mode { PRIME_SCORE_PROTOTYPE = 0, PRIME_SCORE_TEXT = 1 } prime_score_mode;
typedef enum prime_metric {
    PRIME_METRIC_P = 0,
    PRIME_METRIC_PSP = 1,
    PRIME_METRIC_SP = 2,
    PRIME_METRIC_R = 3
} prime_metric;

typedef struct prime_corpus prime_corpus;
typedef struct prime_propensity prime_propensity;
typedef struct prime_model prime_model;
typedef struct prime_predictions prime_predictions;
typedef struct prime_eval prime_eval;

typedef struct prime_train_config {
    double lr;
    double weight_decay;
    size_t epochs;
    size_t batch_size;
    size_t positives_per_query;
    double gamma_min;
    double gamma_max;
    double fixed_margin;
    double reg_margin;
    double lambda;
    prime_loss_mode loss_mode;
    prime_loss_terms loss_terms;
    double alpha;
    size_t bank_size; /* 0 = automatic */
    uint64_t seed;
    int decay_bias;        /* nonzero: apply weight decay to biases */
    int decay_layernorm;   /* nonzero: apply weight decay to layernorm parameters */
    int decay_free_vectors;
    size_t dim;
    size_t vocab_size;
    size_t max_seq_len;
    size_t ffn_dim; /* 0 = 4 * dim */
    double dropout;
    size_t refresh_period;
    size_t warmup_steps;
    unsigned threads;
} prime_train_config;

/* Receives each step's loss report as a JSON object. */
typedef void (*prime_step_callback)(const char* report_json, size_t labels_encoded, void* user);
/* Receives each epoch's mean loss report as a JSON object. */
typedef void (*prime_epoch_callback)(const char* report_json, void* user);

PRIME_API const char* prime_version(void);
PRIME_API const char* prime_last_error(void);
PRIME_API void prime_string_free(char* s);
PRIME_API prime_status prime_hash_bytes(const char* data, size_t len, uint64_t* out);

/* Corpus */
PRIME_API prime_status prime_corpus_ingest(const char* query_path, const char* label_path,
                                           int allow_empty, prime_corpus** out);
PRIME_API void prime_corpus_free(prime_corpus* c);
PRIME_API prime_status prime_corpus_stats(const prime_corpus* c, size_t* queries, size_t* labels,
                                          size_t* nnz);
PRIME_API prime_status prime_corpus_serialize(const prime_corpus* c, char** queries, char** labels);

/* Propensity */
PRIME_API prime_status prime_propensity_compute(const prime_corpus* c, double a, double b,
                                                prime_propensity** out);
PRIME_API prime_status prime_propensity_load(const prime_corpus* c, const char* path,
                                             prime_propensity** out);
PRIME_API prime_status prime_propensity_serialize(const prime_propensity* p, const prime_corpus* c,
                                                  char** out);
PRIME_API void prime_propensity_free(prime_propensity* p);

/* Training and checkpoints */
PRIME_API void prime_train_config_default(prime_train_config* cfg);
PRIME_API prime_status prime_train_config_validate(const prime_train_config* cfg);
PRIME_API prime_status prime_train(const prime_corpus* c, const prime_propensity* p,
                                   const prime_train_config* cfg, prime_step_callback on_step,
                                   prime_epoch_callback on_epoch, void* user, prime_model** out);
PRIME_API prime_status prime_model_save(const prime_model* m, const char* path);
PRIME_API prime_status prime_model_load(const char* path, prime_model** out);
PRIME_API void prime_model_free(prime_model* m);
/* `id<TAB>hex f32 row` lines for every label of `c`. */
PRIME_API prime_status prime_model_export_prototypes(const prime_model* m, const prime_corpus* c,
                                                     unsigned threads, char** out);

/* Retrieval */
PRIME_API prime_status prime_predict(const prime_model* m, const prime_corpus* c,
                                     prime_score_mode mode, size_t k, unsigned threads,
                                     prime_predictions** out);
PRIME_API prime_status prime_predictions_format(const prime_predictions* p, const prime_corpus* c,
                                                char** out);
PRIME_API prime_status prime_predictions_parse(const prime_corpus* c, const char* text,
                                               prime_predictions** out);
PRIME_API void prime_predictions_free(prime_predictions* p);

/* Metrics */
PRIME_API prime_status prime_evaluate(const prime_predictions* p, const prime_corpus* c,
                                      const prime_propensity* prop, const size_t* ks, size_t num_ks,
                                      prime_eval** out);
PRIME_API prime_status prime_eval_get(const prime_eval* e, prime_metric metric, size_t k,
                                      double* out);
PRIME_API prime_status prime_eval_json(const prime_eval* e, char** out);
PRIME_API prime_status prime_eval_table(const prime_eval* e, char** out);
PRIME_API void prime_eval_free(prime_eval* e);

/* Loss landscape CSV over a points x points grid of [lo, hi]^2. */
PRIME_API prime_status prime_loss_landscape(size_t points, double lo, double hi, double gamma_min,
                                            double gamma_max, double fixed_margin, char** out);

#ifdef __cplusplus
}
#endif

#endif /* PRIME_PRIME_H */
