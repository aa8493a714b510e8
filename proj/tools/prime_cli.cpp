// `prime` command-line driver. Talks to the engine only through the C API.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prime/prime.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct Failure {
    int code;
    std::string message;
};

int exit_code(prime_status s) {
    switch (s) {
        case PRIME_OK: return kOk;
        case PRIME_ERR_USAGE: return kUsage;
        case PRIME_ERR_DATA:
        case PRIME_ERR_IO: return kData;
        case PRIME_ERR_NUMERIC: return kNumeric;
        default: return kInternal;
    }
}

void check(prime_status s) {
    if (s != PRIME_OK) throw Failure{exit_code(s), prime_last_error()};
}

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kUsage, msg}; }

template <class T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using CorpusPtr = std::unique_ptr<prime_corpus, Deleter<prime_corpus, prime_corpus_free>>;
using PropPtr = std::unique_ptr<prime_propensity, Deleter<prime_propensity, prime_propensity_free>>;
using ModelPtr = std::unique_ptr<prime_model, Deleter<prime_model, prime_model_free>>;
using PredPtr = std::unique_ptr<prime_predictions, Deleter<prime_predictions, prime_predictions_free>>;
using EvalPtr = std::unique_ptr<prime_eval, Deleter<prime_eval, prime_eval_free>>;

// Takes ownership of a C API string.
std::string take(char* s) {
    std::string out = s ? s : "";
    prime_string_free(s);
    return out;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{kData, "cannot read " + path};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Failure{kData, "cannot write " + path};
        out << content;
        if (!out.flush()) throw Failure{kData, "cannot write " + path};
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Failure{kData, "cannot write " + path + ": " + ec.message()};
}

std::string hash_hex(const std::string& bytes) {
    std::uint64_t h = 0;
    check(prime_hash_bytes(bytes.data(), bytes.size(), &h));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json file_entry(const std::string& path) {
    return json{{"path", path}, {"fnv1a64", hash_hex(read_text(path))}};
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Failure{kData, "cannot create directory " + dir + ": " + ec.message()};
}

CorpusPtr load_corpus(const std::string& queries, const std::string& labels, bool allow_empty) {
    prime_corpus* c = nullptr;
    check(prime_corpus_ingest(queries.c_str(), labels.c_str(), allow_empty ? 1 : 0, &c));
    return CorpusPtr(c);
}

PropPtr load_or_compute_propensity(const prime_corpus* c, const std::string& path, double a, double b) {
    prime_propensity* p = nullptr;
    if (path.empty()) check(prime_propensity_compute(c, a, b, &p));
    else check(prime_propensity_load(c, path.c_str(), &p));
    return PropPtr(p);
}

prime_score_mode parse_mode(const std::string& m) {
    if (m == "prototype") return PRIME_SCORE_PROTOTYPE;
    if (m == "text-embedding") return PRIME_SCORE_TEXT;
    usage_error("unknown --mode '" + m + "' (expected prototype or text-embedding)");
}

std::uint64_t resolve_seed(std::uint64_t flag_seed) {
    const char* env = std::getenv("PRIME_SEED");
    if (!env || !*env) return flag_seed;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || *end != '\0' || env[0] == '-') usage_error("PRIME_SEED must be an unsigned integer");
    return v;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
    std::string queries, labels, out_dir;
    bool allow_empty = false;
    double a = 0.55, b = 1.5;
};

int run_ingest(const IngestArgs& args) {
    CorpusPtr corpus = load_corpus(args.queries, args.labels, args.allow_empty);
    PropPtr prop = load_or_compute_propensity(corpus.get(), "", args.a, args.b);
    std::size_t q = 0, l = 0, nnz = 0;
    check(prime_corpus_stats(corpus.get(), &q, &l, &nnz));
    char *qs = nullptr, *ls = nullptr, *ps = nullptr;
    check(prime_corpus_serialize(corpus.get(), &qs, &ls));
    const std::string qtext = take(qs), ltext = take(ls);
    check(prime_propensity_serialize(prop.get(), corpus.get(), &ps));
    const std::string ptext = take(ps);

    ensure_dir(args.out_dir);
    const std::string qpath = (fs::path(args.out_dir) / "queries.tsv").string();
    const std::string lpath = (fs::path(args.out_dir) / "labels.tsv").string();
    const std::string ppath = (fs::path(args.out_dir) / "propensity.tsv").string();
    write_text(qpath, qtext);
    write_text(lpath, ltext);
    write_text(ppath, ptext);

    json stats{{"queries", q},
               {"labels", l},
               {"nnz", nnz},
               {"outputs", json::array({file_entry(qpath), file_entry(lpath), file_entry(ppath)})}};
    const std::string spath = (fs::path(args.out_dir) / "stats.json").string();
    write_text(spath, stats.dump(2) + "\n");
    std::cout << "queries " << q << "\nlabels " << l << "\nnnz " << nnz << "\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string queries, labels, out_dir, propensity;
    std::string loss_mode = "dynamic", loss_terms = "full";
    double a = 0.55, b = 1.5;
    prime_train_config cfg{};
};

struct TrainLog {
    std::ofstream* steps;
    std::ofstream* epochs;
    bool verbose;
};

void on_step(const char* report, size_t, void* user) {
    auto* log = static_cast<TrainLog*>(user);
    *log->steps << report << '\n';
}

void on_epoch(const char* report, void* user) {
    auto* log = static_cast<TrainLog*>(user);
    *log->epochs << report << '\n';
    if (log->verbose) std::cerr << report << '\n';
}

json config_json(const TrainArgs& a) {
    const auto& c = a.cfg;
    return json{{"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"positives_per_query", c.positives_per_query},
                {"gamma_min", c.gamma_min},
                {"gamma_max", c.gamma_max},
                {"fixed_margin", c.fixed_margin},
                {"reg_margin", c.reg_margin},
                {"lambda", c.lambda},
                {"loss_mode", a.loss_mode},
                {"loss_terms", a.loss_terms},
                {"alpha", c.alpha},
                {"bank_size", c.bank_size},
                {"seed", c.seed},
                {"decay_bias", c.decay_bias != 0},
                {"decay_layernorm", c.decay_layernorm != 0},
                {"decay_free_vectors", c.decay_free_vectors != 0},
                {"dim", c.dim},
                {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len},
                {"ffn_dim", c.ffn_dim},
                {"dropout", c.dropout},
                {"refresh_period", c.refresh_period},
                {"warmup_steps", c.warmup_steps},
                {"threads", c.threads},
                {"propensity_a", a.a},
                {"propensity_b", a.b}};
}

int run_train(TrainArgs args, bool verbose) {
    if (args.loss_mode == "dynamic") args.cfg.loss_mode = PRIME_LOSS_DYNAMIC;
    else if (args.loss_mode == "fixed") args.cfg.loss_mode = PRIME_LOSS_FIXED;
    else if (args.loss_mode == "dynamic-derived") args.cfg.loss_mode = PRIME_LOSS_DYNAMIC_DERIVED;
    else usage_error("unknown --loss-mode '" + args.loss_mode + "' (expected dynamic, fixed or dynamic-derived)");
    if (args.loss_terms == "full") args.cfg.loss_terms = PRIME_TERMS_FULL;
    else if (args.loss_terms == "prototype-only") args.cfg.loss_terms = PRIME_TERMS_PROTOTYPE_ONLY;
    else usage_error("unknown --loss-terms '" + args.loss_terms + "' (expected full or prototype-only)");
    args.cfg.seed = resolve_seed(args.cfg.seed);
    check(prime_train_config_validate(&args.cfg));

    const std::string started = utc_now();
    CorpusPtr corpus = load_corpus(args.queries, args.labels, false);
    PropPtr prop = load_or_compute_propensity(corpus.get(), args.propensity, args.a, args.b);

    ensure_dir(args.out_dir);
    const std::string ckpt = (fs::path(args.out_dir) / "model.ckpt").string();
    const std::string step_log = (fs::path(args.out_dir) / "loss.jsonl").string();
    const std::string epoch_log = (fs::path(args.out_dir) / "epochs.jsonl").string();
    const std::string manifest_path = (fs::path(args.out_dir) / "manifest.json").string();

    ModelPtr model;
    {
        std::ofstream steps(step_log, std::ios::trunc), epochs(epoch_log, std::ios::trunc);
        if (!steps || !epochs) throw Failure{kData, "cannot write logs under " + args.out_dir};
        TrainLog log{&steps, &epochs, verbose};
        prime_model* m = nullptr;
        check(prime_train(corpus.get(), prop.get(), &args.cfg, on_step, on_epoch, &log, &m));
        model.reset(m);
    }
    check(prime_model_save(model.get(), ckpt.c_str()));

    // Summary metrics come from the checkpoint as saved (f32 parameters).
    prime_model* reloaded = nullptr;
    check(prime_model_load(ckpt.c_str(), &reloaded));
    ModelPtr saved(reloaded);
    std::size_t num_labels = 0;
    check(prime_corpus_stats(corpus.get(), nullptr, &num_labels, nullptr));
    std::vector<std::size_t> ks{1};
    for (std::size_t k : {3, 5})
        if (k <= num_labels) ks.push_back(k);
    prime_predictions* pr = nullptr;
    check(prime_predict(saved.get(), corpus.get(), PRIME_SCORE_PROTOTYPE, ks.back(), args.cfg.threads, &pr));
    PredPtr preds(pr);
    prime_eval* ev = nullptr;
    check(prime_evaluate(preds.get(), corpus.get(), prop.get(), ks.data(), ks.size(), &ev));
    EvalPtr eval(ev);
    char* ej = nullptr;
    check(prime_eval_json(eval.get(), &ej));

    json manifest{{"command", "train"},
                  {"git_describe", prime_version()},
                  {"seed", args.cfg.seed},
                  {"config", config_json(args)},
                  {"inputs", json::array({file_entry(args.queries), file_entry(args.labels)})},
                  {"started_at", started},
                  {"finished_at", utc_now()},
                  {"outputs", json::array({file_entry(ckpt), file_entry(step_log), file_entry(epoch_log)})},
                  {"summary", json::parse(take(ej))}};
    if (!args.propensity.empty()) manifest["inputs"].push_back(file_entry(args.propensity));
    write_text(manifest_path, manifest.dump(2) + "\n");
    double p1 = 0.0;
    check(prime_eval_get(eval.get(), PRIME_METRIC_P, 1, &p1));
    std::cout << "checkpoint " << ckpt << "\ntrain P@1 " << p1 << "\n";
    return kOk;
}

// ---------------------------------------------------------------- eval / predict

struct RetrievalArgs {
    std::string checkpoint, queries, labels, propensity, predictions, out, mode = "prototype";
    std::string export_prototypes;
    std::vector<std::size_t> ks{1, 3, 5};
    std::size_t k = 5;
    double a = 0.55, b = 1.5;
    unsigned threads = 1;
};

int run_eval(const RetrievalArgs& args) {
    const prime_score_mode mode = parse_mode(args.mode);
    CorpusPtr corpus = load_corpus(args.queries, args.labels, true);
    std::size_t num_labels = 0;
    check(prime_corpus_stats(corpus.get(), nullptr, &num_labels, nullptr));
    std::size_t kmax = 0;
    for (std::size_t k : args.ks) {
        if (k == 0 || k > num_labels)
            usage_error("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(num_labels) + "]");
        kmax = std::max(kmax, k);
    }
    PropPtr prop = load_or_compute_propensity(corpus.get(), args.propensity, args.a, args.b);

    prime_predictions* pr = nullptr;
    if (!args.predictions.empty()) {
        check(prime_predictions_parse(corpus.get(), read_text(args.predictions).c_str(), &pr));
    } else {
        if (args.checkpoint.empty()) usage_error("eval needs --checkpoint or --predictions");
        prime_model* m = nullptr;
        check(prime_model_load(args.checkpoint.c_str(), &m));
        ModelPtr model(m);
        check(prime_predict(model.get(), corpus.get(), mode, kmax, args.threads, &pr));
    }
    PredPtr preds(pr);
    prime_eval* ev = nullptr;
    check(prime_evaluate(preds.get(), corpus.get(), prop.get(), args.ks.data(), args.ks.size(), &ev));
    EvalPtr eval(ev);
    char *tj = nullptr, *tt = nullptr;
    check(prime_eval_json(eval.get(), &tj));
    check(prime_eval_table(eval.get(), &tt));
    const std::string js = take(tj);
    if (!args.out.empty()) write_text(args.out, js + "\n");
    std::cout << take(tt);
    return kOk;
}

int run_predict(const RetrievalArgs& args) {
    const prime_score_mode mode = parse_mode(args.mode);
    CorpusPtr corpus = load_corpus(args.queries, args.labels, true);
    prime_model* m = nullptr;
    check(prime_model_load(args.checkpoint.c_str(), &m));
    ModelPtr model(m);
    const auto t0 = std::chrono::steady_clock::now();
    prime_predictions* pr = nullptr;
    check(prime_predict(model.get(), corpus.get(), mode, args.k, args.threads, &pr));
    PredPtr preds(pr);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char* text = nullptr;
    check(prime_predictions_format(preds.get(), corpus.get(), &text));
    const std::string out = take(text);
    if (args.out.empty()) std::cout << out;
    else write_text(args.out, out);
    if (!args.export_prototypes.empty()) {
        char* ex = nullptr;
        check(prime_model_export_prototypes(model.get(), corpus.get(), args.threads, &ex));
        write_text(args.export_prototypes, take(ex));
    }
    std::cerr << "predicted in " << secs << " s\n";
    return kOk;
}

// ---------------------------------------------------------------- loss-landscape

struct LandscapeArgs {
    std::size_t points = 201;
    double lo = -1.0, hi = 1.0, gamma_min = 0.1, gamma_max = 0.3, fixed_margin = 0.3;
    std::string out;
};

int run_landscape(const LandscapeArgs& a) {
    char* csv = nullptr;
    check(prime_loss_landscape(a.points, a.lo, a.hi, a.gamma_min, a.gamma_max, a.fixed_margin, &csv));
    const std::string text = take(csv);
    if (a.out.empty()) std::cout << text;
    else write_text(a.out, text);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    std::locale::global(std::locale::classic());
    CLI::App app{"PRIME extreme multi-label retrieval"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(prime_version()));
    bool verbose = false;

    IngestArgs ing;
    auto* ingest = app.add_subcommand("ingest", "Validate a corpus and write its canonical form");
    ingest->add_option("--queries", ing.queries, "Query file")->required();
    ingest->add_option("--labels", ing.labels, "Label file")->required();
    ingest->add_option("--out-dir", ing.out_dir, "Output directory")->required();
    ingest->add_flag("--allow-empty", ing.allow_empty, "Accept queries without positives");
    ingest->add_option("--propensity-a", ing.a, "Propensity constant A")->capture_default_str();
    ingest->add_option("--propensity-b", ing.b, "Propensity constant B")->capture_default_str();

    TrainArgs tr;
    prime_train_config_default(&tr.cfg);
    auto* train = app.add_subcommand("train", "Train a model");
    train->set_config("--config", "", "TOML/INI file of option values (flags take precedence)");
    train->add_option("--queries", tr.queries, "Training query file")->required();
    train->add_option("--labels", tr.labels, "Label file")->required();
    train->add_option("--out-dir", tr.out_dir, "Output directory")->required();
    train->add_option("--propensity", tr.propensity, "Propensity table from ingest (default: computed)");
    train->add_option("--propensity-a", tr.a, "Propensity constant A")->capture_default_str();
    train->add_option("--propensity-b", tr.b, "Propensity constant B")->capture_default_str();
    train->add_option("--lr", tr.cfg.lr, "Learning rate")->capture_default_str();
    train->add_option("--weight-decay", tr.cfg.weight_decay, "AdamW weight decay")->capture_default_str();
    train->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
    train->add_option("--batch-size", tr.cfg.batch_size, "Queries per batch")->capture_default_str();
    train->add_option("--positives", tr.cfg.positives_per_query, "Sampled positives per query (1 or 2)")
        ->capture_default_str();
    train->add_option("--gamma-min", tr.cfg.gamma_min, "Lower margin clip")->capture_default_str();
    train->add_option("--gamma-max", tr.cfg.gamma_max, "Upper margin clip")->capture_default_str();
    train->add_option("--fixed-margin", tr.cfg.fixed_margin, "Margin of the fixed-margin loss")
        ->capture_default_str();
    train->add_option("--reg-margin", tr.cfg.reg_margin, "Prototype regularizer margin")->capture_default_str();
    train->add_option("--lambda", tr.cfg.lambda, "Regularizer weight")->capture_default_str();
    train->add_option("--loss-mode", tr.loss_mode, "dynamic, fixed or dynamic-derived")->capture_default_str();
    train->add_option("--loss-terms", tr.loss_terms, "full or prototype-only")->capture_default_str();
    train->add_option("--alpha", tr.cfg.alpha, "Centroid EMA momentum")->capture_default_str();
    train->add_option("--bank-size", tr.cfg.bank_size, "Free vectors (0 = automatic)")->capture_default_str();
    train->add_option("--seed", tr.cfg.seed, "Seed (PRIME_SEED overrides)")->capture_default_str();
    train->add_option("--decay-bias", tr.cfg.decay_bias, "Apply weight decay to biases (0/1)")
        ->capture_default_str();
    train->add_option("--decay-layernorm", tr.cfg.decay_layernorm, "Apply weight decay to layernorm (0/1)")
        ->capture_default_str();
    train->add_option("--decay-free-vectors", tr.cfg.decay_free_vectors,
                      "Apply weight decay to the free-vector bank (0/1)")
        ->capture_default_str();
    train->add_option("--dim", tr.cfg.dim, "Embedding dimension")->capture_default_str();
    train->add_option("--vocab-size", tr.cfg.vocab_size, "Hashed vocabulary size")->capture_default_str();
    train->add_option("--max-seq-len", tr.cfg.max_seq_len, "Tokens kept per text")->capture_default_str();
    train->add_option("--ffn-dim", tr.cfg.ffn_dim, "Prototype FFN width (0 = 4 * dim)")->capture_default_str();
    train->add_option("--dropout", tr.cfg.dropout, "Prototype network dropout")->capture_default_str();
    train->add_option("--refresh-period", tr.cfg.refresh_period, "Epochs between batch re-clustering")
        ->capture_default_str();
    train->add_option("--warmup-steps", tr.cfg.warmup_steps, "Linear warmup steps (0 = off)")
        ->capture_default_str();
    train->add_option("--threads", tr.cfg.threads, "Worker threads")->capture_default_str();
    train->add_flag("--verbose", verbose, "Print epoch reports to stderr");

    RetrievalArgs ev;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
    eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint");
    eval->add_option("--predictions", ev.predictions, "Predictions file to score instead of a checkpoint");
    eval->add_option("--queries", ev.queries, "Evaluation query file")->required();
    eval->add_option("--labels", ev.labels, "Label file")->required();
    eval->add_option("--propensity", ev.propensity, "Propensity table (default: from the evaluation corpus)");
    eval->add_option("--k", ev.ks, "Cutoffs")->capture_default_str()->delimiter(',');
    eval->add_option("--mode", ev.mode, "prototype or text-embedding")->capture_default_str();
    eval->add_option("--out", ev.out, "Write the EvalResult JSON here");
    eval->add_option("--threads", ev.threads, "Worker threads")->capture_default_str();

    RetrievalArgs pd;
    auto* predict = app.add_subcommand("predict", "Write top-k predictions");
    predict->add_option("--checkpoint", pd.checkpoint, "Checkpoint")->required();
    predict->add_option("--queries", pd.queries, "Query file")->required();
    predict->add_option("--labels", pd.labels, "Label file")->required();
    predict->add_option("--k", pd.k, "Labels per query")->capture_default_str();
    predict->add_option("--mode", pd.mode, "prototype or text-embedding")->capture_default_str();
    predict->add_option("--out", pd.out, "Predictions file (default: stdout)");
    predict->add_option("--export-prototypes", pd.export_prototypes, "Also write the prototype matrix");
    predict->add_option("--threads", pd.threads, "Worker threads")->capture_default_str();

    LandscapeArgs la;
    auto* land = app.add_subcommand("loss-landscape", "Tabulate both triplet kernels over a grid");
    land->add_option("--points", la.points, "Grid points per axis")->capture_default_str();
    land->add_option("--lo", la.lo, "Grid lower bound")->capture_default_str();
    land->add_option("--hi", la.hi, "Grid upper bound")->capture_default_str();
    land->add_option("--gamma-min", la.gamma_min, "Lower margin clip")->capture_default_str();
    land->add_option("--gamma-max", la.gamma_max, "Upper margin clip")->capture_default_str();
    land->add_option("--fixed-margin", la.fixed_margin, "Fixed margin")->capture_default_str();
    land->add_option("--out", la.out, "CSV path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*ingest) return run_ingest(ing);
        if (*train) return run_train(tr, verbose);
        if (*eval) return run_eval(ev);
        if (*predict) return run_predict(pd);
        if (*land) return run_landscape(la);
    } catch (const Failure& f) {
        std::cerr << "prime: " << f.message << '\n';
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "prime: " << e.what() << '\n';
        return kInternal;
    }
    return kUsage;
}
