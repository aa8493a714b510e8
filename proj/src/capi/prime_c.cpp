#include "prime/prime.h"

#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <new>

#include "prime/landscape.hpp"
#include "prime/metrics.hpp"
#include "prime/retrieval.hpp"
#include "prime/trainer.hpp"

struct prime_corpus {
    prime::Corpus corpus;
};
struct prime_propensity {
    prime::PropensityTable table;
};
struct prime_model {
    prime::Model model;
};
struct prime_predictions {
    std::vector<prime::Ranking> rankings;  // scores are NaN when parsed from text
    std::vector<std::string> query_ids;
};
struct prime_eval {
    prime::EvalResult result;
};

namespace {

thread_local std::string g_last_error;

prime_status status_of(prime::ErrorKind k) {
    switch (k) {
        case prime::ErrorKind::Usage: return PRIME_ERR_USAGE;
        case prime::ErrorKind::Data: return PRIME_ERR_DATA;
        case prime::ErrorKind::Numeric: return PRIME_ERR_NUMERIC;
        case prime::ErrorKind::Io: return PRIME_ERR_IO;
    }
    return PRIME_ERR_INTERNAL;
}

template <class F>
prime_status guarded(F&& fn) {
    try {
        fn();
        return PRIME_OK;
    } catch (const prime::Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
    } catch (const std::exception& e) {
        g_last_error = e.what();
    } catch (...) {
        g_last_error = "unknown error";
    }
    return PRIME_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
    if (!p) prime::fail(prime::ErrorKind::Usage, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

prime::TrainConfig to_config(const prime_train_config& c) {
    prime::TrainConfig t;
    t.lr = c.lr;
    t.weight_decay = c.weight_decay;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.positives_per_query = c.positives_per_query;
    t.margin.gamma_min = c.gamma_min;
    t.margin.gamma_max = c.gamma_max;
    t.margin.fixed_margin = c.fixed_margin;
    t.margin.reg_margin = c.reg_margin;
    t.margin.lambda = c.lambda;
    switch (c.loss_mode) {
        case PRIME_LOSS_DYNAMIC: t.loss_mode = prime::LossMode::Dynamic; break;
        case PRIME_LOSS_FIXED: t.loss_mode = prime::LossMode::Fixed; break;
        case PRIME_LOSS_DYNAMIC_DERIVED: t.loss_mode = prime::LossMode::DynamicDerived; break;
        default: prime::fail(prime::ErrorKind::Usage, "unknown loss mode");
    }
    t.loss_terms = c.loss_terms == PRIME_TERMS_PROTOTYPE_ONLY ? prime::LossTerms::PrototypeOnly
                                                              : prime::LossTerms::Full;
    t.alpha = c.alpha;
    t.bank_size = c.bank_size;
    t.seed = c.seed;
    t.decay_exclusions.clear();
    if (!c.decay_bias) t.decay_exclusions.insert(prime::ParamGroup::Bias);
    if (!c.decay_layernorm) t.decay_exclusions.insert(prime::ParamGroup::LayerNorm);
    if (!c.decay_free_vectors) t.decay_exclusions.insert(prime::ParamGroup::FreeVectors);
    t.encoder.dim = c.dim;
    t.encoder.vocab_size = c.vocab_size;
    t.encoder.max_seq_len = c.max_seq_len;
    t.ffn_dim = c.ffn_dim;
    t.dropout = c.dropout;
    t.refresh_period = c.refresh_period;
    t.warmup_steps = c.warmup_steps;
    t.threads = c.threads;
    return t;
}

}  // namespace

extern "C" {

const char* prime_version(void) { return PRIME_GIT_DESCRIBE; }

const char* prime_last_error(void) { return g_last_error.c_str(); }

void prime_string_free(char* s) { std::free(s); }

prime_status prime_hash_bytes(const char* data, size_t len, uint64_t* out) {
    return guarded([&] {
        require(out, "out");
        if (len > 0) require(data, "data");
        *out = prime::fnv1a64(std::string_view(data ? data : "", len));
    });
}

prime_status prime_corpus_ingest(const char* query_path, const char* label_path, int allow_empty,
                                 prime_corpus** out) {
    return guarded([&] {
        require(query_path, "query_path");
        require(label_path, "label_path");
        require(out, "out");
        prime::IngestOptions opts;
        opts.allow_empty = allow_empty != 0;
        *out = new prime_corpus{prime::ingest(query_path, label_path, opts)};
    });
}

void prime_corpus_free(prime_corpus* c) { delete c; }

prime_status prime_corpus_stats(const prime_corpus* c, size_t* queries, size_t* labels, size_t* nnz) {
    return guarded([&] {
        require(c, "corpus");
        if (queries) *queries = c->corpus.num_queries();
        if (labels) *labels = c->corpus.num_labels();
        if (nnz) *nnz = c->corpus.nnz();
    });
}

prime_status prime_corpus_serialize(const prime_corpus* c, char** queries, char** labels) {
    return guarded([&] {
        require(c, "corpus");
        require(queries, "queries");
        require(labels, "labels");
        char* q = dup_string(c->corpus.serialize_queries());
        try {
            *labels = dup_string(c->corpus.serialize_labels());
        } catch (...) {
            std::free(q);
            throw;
        }
        *queries = q;
    });
}

prime_status prime_propensity_compute(const prime_corpus* c, double a, double b,
                                      prime_propensity** out) {
    return guarded([&] {
        require(c, "corpus");
        require(out, "out");
        *out = new prime_propensity{prime::compute_propensities(c->corpus, a, b)};
    });
}

prime_status prime_propensity_load(const prime_corpus* c, const char* path, prime_propensity** out) {
    return guarded([&] {
        require(c, "corpus");
        require(path, "path");
        require(out, "out");
        *out = new prime_propensity{prime::PropensityTable::parse(prime::read_file(path), c->corpus)};
    });
}

prime_status prime_propensity_serialize(const prime_propensity* p, const prime_corpus* c, char** out) {
    return guarded([&] {
        require(p, "propensity");
        require(c, "corpus");
        require(out, "out");
        *out = dup_string(p->table.serialize(c->corpus));
    });
}

void prime_propensity_free(prime_propensity* p) { delete p; }

void prime_train_config_default(prime_train_config* cfg) {
    if (!cfg) return;
    const prime::TrainConfig t;
    cfg->lr = t.lr;
    cfg->weight_decay = t.weight_decay;
    cfg->epochs = t.epochs;
    cfg->batch_size = t.batch_size;
    cfg->positives_per_query = t.positives_per_query;
    cfg->gamma_min = t.margin.gamma_min;
    cfg->gamma_max = t.margin.gamma_max;
    cfg->fixed_margin = t.margin.fixed_margin;
    cfg->reg_margin = t.margin.reg_margin;
    cfg->lambda = t.margin.lambda;
    cfg->loss_mode = PRIME_LOSS_DYNAMIC;
    cfg->loss_terms = PRIME_TERMS_FULL;
    cfg->alpha = t.alpha;
    cfg->bank_size = t.bank_size;
    cfg->seed = t.seed;
    cfg->decay_bias = 0;
    cfg->decay_layernorm = 0;
    cfg->decay_free_vectors = 0;
    cfg->dim = t.encoder.dim;
    cfg->vocab_size = t.encoder.vocab_size;
    cfg->max_seq_len = t.encoder.max_seq_len;
    cfg->ffn_dim = t.ffn_dim;
    cfg->dropout = t.dropout;
    cfg->refresh_period = t.refresh_period;
    cfg->warmup_steps = t.warmup_steps;
    cfg->threads = t.threads;
}

prime_status prime_train_config_validate(const prime_train_config* cfg) {
    return guarded([&] {
        require(cfg, "config");
        to_config(*cfg).validate();
    });
}

prime_status prime_train(const prime_corpus* c, const prime_propensity* p,
                         const prime_train_config* cfg, prime_step_callback on_step,
                         prime_epoch_callback on_epoch, void* user, prime_model** out) {
    return guarded([&] {
        require(c, "corpus");
        require(p, "propensity");
        require(cfg, "config");
        require(out, "out");
        const prime::TrainConfig tc = to_config(*cfg);
        tc.validate();
        prime::TrainCallbacks cb;
        if (on_step)
            cb.on_step = [&](const prime::LossReport& r, const prime::StepStats& s) {
                on_step(r.to_json().c_str(), s.labels_encoded, user);
            };
        if (on_epoch)
            cb.on_epoch = [&](const prime::LossReport& r) { on_epoch(r.to_json().c_str(), user); };
        auto result = prime::train(c->corpus, p->table, tc, cb);
        *out = new prime_model{std::move(result.model)};
    });
}

prime_status prime_model_save(const prime_model* m, const char* path) {
    return guarded([&] {
        require(m, "model");
        require(path, "path");
        prime::save_checkpoint(m->model, path);
    });
}

prime_status prime_model_load(const char* path, prime_model** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new prime_model{prime::load_checkpoint(path)};
    });
}

void prime_model_free(prime_model* m) { delete m; }

prime_status prime_model_export_prototypes(const prime_model* m, const prime_corpus* c,
                                           unsigned threads, char** out) {
    return guarded([&] {
        require(m, "model");
        require(c, "corpus");
        require(out, "out");
        std::vector<std::string> ids;
        for (const auto& l : c->corpus.labels()) ids.push_back(l.id);
        const auto index = prime::PrototypeIndex::build(
            prime::materialize_all_prototypes(m->model, c->corpus, threads), std::move(ids));
        *out = dup_string(index.export_text());
    });
}

prime_status prime_predict(const prime_model* m, const prime_corpus* c, prime_score_mode mode,
                           size_t k, unsigned threads, prime_predictions** out) {
    return guarded([&] {
        require(m, "model");
        require(c, "corpus");
        require(out, "out");
        if (threads < 1) prime::fail(prime::ErrorKind::Usage, "threads must be >= 1");
        const prime::Corpus& corpus = c->corpus;
        if (k == 0 || k > corpus.num_labels())
            prime::fail(prime::ErrorKind::Usage, "k = " + std::to_string(k) + " must lie in [1, " +
                                                     std::to_string(corpus.num_labels()) + "]");
        prime::Matrix rows =
            mode == PRIME_SCORE_TEXT
                ? prime::embed_texts(m->model.encoder, corpus.labels(), threads)
                : prime::materialize_all_prototypes(m->model, corpus, threads);
        if (mode == PRIME_SCORE_TEXT && corpus.num_labels() != m->model.num_labels())
            prime::fail(prime::ErrorKind::Data, "checkpoint/corpus label count mismatch");
        std::vector<std::string> ids;
        for (const auto& l : corpus.labels()) ids.push_back(l.id);
        const auto index = prime::PrototypeIndex::build(rows, std::move(ids));
        const prime::Matrix q = prime::embed_texts(m->model.encoder, corpus.queries(), threads);
        auto* p = new prime_predictions{index.topk_batch(q, k, threads), {}};
        for (const auto& r : corpus.queries()) p->query_ids.push_back(r.id);
        *out = p;
    });
}

prime_status prime_predictions_format(const prime_predictions* p, const prime_corpus* c, char** out) {
    return guarded([&] {
        require(p, "predictions");
        require(c, "corpus");
        require(out, "out");
        if (p->rankings.size() != c->corpus.num_queries())
            prime::fail(prime::ErrorKind::Usage, "predictions do not match the corpus queries");
        std::vector<std::string> ids;
        for (const auto& l : c->corpus.labels()) ids.push_back(l.id);
        *out = dup_string(prime::format_predictions(c->corpus.queries(), p->rankings, ids));
    });
}

prime_status prime_predictions_parse(const prime_corpus* c, const char* text, prime_predictions** out) {
    return guarded([&] {
        require(c, "corpus");
        require(text, "text");
        require(out, "out");
        const auto lists = prime::parse_predictions(text, c->corpus);
        auto* p = new prime_predictions;
        for (const auto& l : lists) {
            prime::Ranking r;
            for (std::uint32_t id : l) r.push_back({id, std::numeric_limits<double>::quiet_NaN()});
            p->rankings.push_back(std::move(r));
        }
        for (const auto& r : c->corpus.queries()) p->query_ids.push_back(r.id);
        *out = p;
    });
}

void prime_predictions_free(prime_predictions* p) { delete p; }

prime_status prime_evaluate(const prime_predictions* p, const prime_corpus* c,
                            const prime_propensity* prop, const size_t* ks, size_t num_ks,
                            prime_eval** out) {
    return guarded([&] {
        require(p, "predictions");
        require(c, "corpus");
        require(prop, "propensity");
        require(out, "out");
        if (num_ks == 0) prime::fail(prime::ErrorKind::Usage, "at least one k is required");
        require(ks, "ks");
        if (prop->table.size() != c->corpus.num_labels())
            prime::fail(prime::ErrorKind::Data, "propensity table does not match the corpus labels");
        std::vector<std::size_t> kv(ks, ks + num_ks);
        *out = new prime_eval{prime::evaluate(prime::ranking_labels(p->rankings),
                                              prime::truth_lists(c->corpus), prop->table.p, kv)};
    });
}

prime_status prime_eval_get(const prime_eval* e, prime_metric metric, size_t k, double* out) {
    return guarded([&] {
        require(e, "eval");
        require(out, "out");
        const auto& r = e->result;
        const std::map<std::size_t, double>* m = nullptr;
        switch (metric) {
            case PRIME_METRIC_P: m = &r.p_at; break;
            case PRIME_METRIC_PSP: m = &r.psp_at; break;
            case PRIME_METRIC_SP: m = &r.sp_at; break;
            case PRIME_METRIC_R: m = &r.r_at; break;
            default: prime::fail(prime::ErrorKind::Usage, "unknown metric");
        }
        const auto it = m->find(k);
        if (it == m->end()) prime::fail(prime::ErrorKind::Usage, "metric not computed at k = " + std::to_string(k));
        *out = it->second;
    });
}

prime_status prime_eval_json(const prime_eval* e, char** out) {
    return guarded([&] {
        require(e, "eval");
        require(out, "out");
        *out = dup_string(e->result.to_json());
    });
}

prime_status prime_eval_table(const prime_eval* e, char** out) {
    return guarded([&] {
        require(e, "eval");
        require(out, "out");
        *out = dup_string(e->result.to_table());
    });
}

void prime_eval_free(prime_eval* e) { delete e; }

prime_status prime_loss_landscape(size_t points, double lo, double hi, double gamma_min,
                                  double gamma_max, double fixed_margin, char** out) {
    return guarded([&] {
        require(out, "out");
        prime::LandscapeConfig cfg;
        cfg.points = points;
        cfg.lo = lo;
        cfg.hi = hi;
        cfg.margin.gamma_min = gamma_min;
        cfg.margin.gamma_max = gamma_max;
        cfg.margin.fixed_margin = fixed_margin;
        *out = dup_string(prime::loss_landscape_csv(cfg));
    });
}

}  // extern "C"
