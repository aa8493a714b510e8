#include "prime/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "prime/sampling.hpp"

namespace prime {

namespace {

// Seed stream tags.
constexpr std::uint64_t kEncoderInit = 1;
constexpr std::uint64_t kProtoInit = 2;
constexpr std::uint64_t kBankInit = 3;
constexpr std::uint64_t kLabelClusters = 4;
constexpr std::uint64_t kQueryClusters = 5;
constexpr std::uint64_t kSampling = 6;
constexpr std::uint64_t kDropout = 7;

// out = a * b^T; a is n x d, b is m x d.
Matrix matmul_abt(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

// out = a * b; a is n x m, b is m x d.
Matrix matmul_ab(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        auto o = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double s = a(i, k);
            if (s == 0.0) continue;
            const auto br = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) o[j] += s * br[j];
        }
    }
    return out;
}

// out = a^T * b; a is n x m, b is n x d.
Matrix matmul_atb(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const auto br = b.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double s = a(i, k);
            if (s == 0.0) continue;
            auto o = out.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) o[j] += s * br[j];
        }
    }
    return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::uint32_t> rows) {
    Matrix out(rows.size(), m.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::vector<TokenIds> tokenize_all(const EncoderParams& enc, const std::vector<TextRecord>& recs,
                                   unsigned threads) {
    std::vector<TokenIds> out(recs.size());
    parallel_for(recs.size(), threads, [&](std::size_t i) { out[i] = enc.tokenize(recs[i].text); });
    return out;
}

Matrix embed_all(const EncoderParams& enc, const std::vector<TokenIds>& tokens, unsigned threads) {
    return encode_forward(enc, tokens, threads).vectors;
}

void check_state(Model& model) {
    for (const auto& t : model.trainable())
        if (!t.value->all_finite())
            fail(ErrorKind::Numeric, "non-finite parameter after optimizer step in group '" +
                                         std::string(to_string(t.group)) + "' (" + t.name + ")");
    const auto& cs = model.centroids;
    for (std::size_t l = 0; l < cs.centroids.rows; ++l)
        if (cs.touched[l] > 0 && std::abs(norm2(cs.centroids.row(l)) - 1.0) > 1e-6)
            fail(ErrorKind::Numeric, "centroid lost unit norm for label index " + std::to_string(l));
}

class EpochAccumulator {
public:
    void add(const LossReport& r) {
        if (count_ == 0) sum_ = r;
        else {
            sum_.query_prototype += r.query_prototype;
            sum_.query_label += r.query_label;
            sum_.label_query += r.label_query;
            sum_.regularizer += r.regularizer;
            sum_.total += r.total;
            for (std::size_t i = 0; i < 3; ++i) sum_.regions[i] += r.regions[i];
            sum_.triplets += r.triplets;
            sum_.step = r.step;
        }
        ++count_;
    }
    LossReport mean(std::uint64_t epoch) const {
        LossReport m = sum_;
        m.epoch = epoch;
        if (count_ == 0) return m;
        const double n = static_cast<double>(count_);
        m.query_prototype /= n;
        m.query_label /= n;
        m.label_query /= n;
        m.regularizer /= n;
        m.total /= n;
        return m;
    }

private:
    LossReport sum_;
    std::size_t count_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::Usage, "lr must be finite and >= 0");
    if (!(weight_decay >= 0.0)) fail(ErrorKind::Usage, "weight decay must be >= 0");
    if (epochs < 1) fail(ErrorKind::Usage, "epochs must be >= 1");
    if (batch_size < 2) fail(ErrorKind::Usage, "batch size must be >= 2");
    if (positives_per_query != 1 && positives_per_query != 2)
        fail(ErrorKind::Usage, "positives per query must be 1 or 2");
    margin.validate();
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::Usage, "alpha must lie in (0, 1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::Usage, "dropout must lie in [0, 1)");
    if (encoder.dim < 2) fail(ErrorKind::Usage, "dim must be >= 2");
    if (encoder.vocab_size < 1) fail(ErrorKind::Usage, "vocab size must be >= 1");
    if (encoder.max_seq_len < 1) fail(ErrorKind::Usage, "max sequence length must be >= 1");
    if (ffn_dim != 0 && ffn_dim < encoder.dim) fail(ErrorKind::Usage, "ffn dim must be >= dim");
    if (refresh_period < 1) fail(ErrorKind::Usage, "refresh period must be >= 1");
    if (threads < 1) fail(ErrorKind::Usage, "threads must be >= 1");
}

std::size_t default_bank_size(std::size_t num_labels) {
    const std::size_t half = std::max<std::size_t>(1, num_labels / 2);
    std::size_t m = 1;
    while (m * 2 <= half) m *= 2;
    return m;
}

Model initialize_model(const Corpus& corpus, const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t L = corpus.num_labels();
    if (L == 0) fail(ErrorKind::Data, "corpus has no labels");
    const std::size_t M = cfg.bank_size == 0 ? default_bank_size(L) : cfg.bank_size;
    if (M > L)
        fail(ErrorKind::Usage, "bank size " + std::to_string(M) + " exceeds label count " +
                                   std::to_string(L));

    Model model;
    model.encoder = EncoderParams::init(cfg.encoder, derive_seed(cfg.seed, kEncoderInit));
    PrototypeNetConfig pc{cfg.encoder.dim, cfg.resolved_ffn_dim(), cfg.dropout};
    model.proto = PrototypeNetParams::init(pc, derive_seed(cfg.seed, kProtoInit));

    const auto label_tokens = tokenize_all(model.encoder, corpus.labels(), cfg.threads);
    Matrix label_emb = embed_all(model.encoder, label_tokens, cfg.threads);
    model.bank.assignment = cluster_labels(label_emb, M, derive_seed(cfg.seed, kLabelClusters));
    model.centroids = CentroidStore(std::move(label_emb), cfg.alpha);

    model.bank.bank = Matrix(M, cfg.encoder.dim);
    Rng rng(derive_seed(cfg.seed, kBankInit));
    for (double& v : model.bank.bank.data) v = rng.normal();
    return model;
}

TrainResult train(const Corpus& corpus, const PropensityTable& propensity, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks) {
    if (propensity.size() != corpus.num_labels())
        fail(ErrorKind::Data, "propensity table does not match the corpus label count");
    if (corpus.num_queries() == 0) fail(ErrorKind::Data, "corpus has no queries");
    for (std::size_t q = 0; q < corpus.num_queries(); ++q)
        if (corpus.positives(q).empty())
            fail(ErrorKind::Data, "training query '" + corpus.queries()[q].id +
                                      "' has an empty positive set");

    TrainResult result;
    result.model = initialize_model(corpus, cfg);
    Model& model = result.model;
    Model grads = model.zeros_like();
    AdamW optimizer(AdamWConfig{0.9, 0.999, 1e-8, cfg.decay_exclusions});

    const auto query_tokens = tokenize_all(model.encoder, corpus.queries(), cfg.threads);
    const auto label_tokens = tokenize_all(model.encoder, corpus.labels(), cfg.threads);

    BatchPlan plan = build_batch_plan(embed_all(model.encoder, query_tokens, cfg.threads),
                                      cfg.batch_size, derive_seed(cfg.seed, kQueryClusters),
                                      cfg.refresh_period);

    auto params = model.trainable();
    auto grad_refs = grads.trainable();
    std::uint64_t step = 0;
    LossReport last;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch > 0 && epoch % cfg.refresh_period == 0) {
            plan = build_batch_plan(embed_all(model.encoder, query_tokens, cfg.threads),
                                    cfg.batch_size, derive_seed(cfg.seed, kQueryClusters, epoch),
                                    cfg.refresh_period);
            model.centroids.refresh_untouched(embed_all(model.encoder, label_tokens, cfg.threads));
        }
        shuffle_plan(plan, cfg.seed, epoch);
        Rng sampler(derive_seed(cfg.seed, kSampling, epoch));
        EpochAccumulator acc;

        for (const auto& queries : plan.batches()) {
            std::vector<std::vector<std::int64_t>> sampled;
            sampled.reserve(queries.size());
            for (std::uint32_t q : queries)
                sampled.push_back(
                    sample_positives(q, corpus, propensity, cfg.positives_per_query, sampler));
            const TripletBatch tb = assemble_triplet_batch(queries, sampled, corpus);

            std::vector<TokenIds> qseq, lseq;
            for (std::uint32_t q : queries) qseq.push_back(query_tokens[q]);
            for (std::uint32_t l : tb.pool) lseq.push_back(label_tokens[l]);
            const EmbeddingBatch qb = encode_forward(model.encoder, qseq, cfg.threads);
            const EmbeddingBatch lb = encode_forward(model.encoder, lseq, cfg.threads);

            const Matrix c = gather_rows(model.centroids.centroids, tb.pool);
            const Matrix v = gather_free_vectors(model.bank, tb.pool);
            const PrototypeBatch pb =
                prototype_forward(model.proto, lb.vectors, c, v, true,
                                  derive_seed(cfg.seed, kDropout, step), cfg.threads);

            CombinedInputs in;
            in.query_proto = matmul_abt(qb.vectors, pb.z);
            in.query_label = matmul_abt(qb.vectors, lb.vectors);
            in.positives = tb.positives;
            in.neg_mask = tb.negative_mask;
            in.label_query_relevance = tb.label_query_relevance;
            CombinedResult cr = combined_loss(in, cfg.margin, cfg.loss_mode, cfg.loss_terms);
            cr.report.step = step;
            cr.report.epoch = epoch;
            if (!std::isfinite(cr.report.total))
                fail(ErrorKind::Numeric, "non-finite training loss; last report: " +
                                             (step == 0 ? cr.report : last).to_json());

            for (auto& g : grad_refs) g.value->set_zero();
            Matrix d_hq = matmul_ab(cr.grad_query_proto, pb.z);
            const Matrix d_hq_label = matmul_ab(cr.grad_query_label, lb.vectors);
            for (std::size_t i = 0; i < d_hq.size(); ++i) d_hq.data[i] += d_hq_label.data[i];
            const Matrix d_z = matmul_atb(cr.grad_query_proto, qb.vectors);
            Matrix d_hl = matmul_atb(cr.grad_query_label, qb.vectors);

            const PrototypeInputGrads pg = prototype_backward(model.proto, pb, d_z, grads.proto);
            for (std::size_t i = 0; i < d_hl.size(); ++i) d_hl.data[i] += pg.dh.data[i];
            scatter_free_vector_grads(model.bank, tb.pool, pg.dv, grads.bank.bank);
            encode_backward(model.encoder, lb, d_hl, grads.encoder);
            encode_backward(model.encoder, qb, d_hq, grads.encoder);

            double lr = cfg.lr;
            if (cfg.warmup_steps > 0)
                lr *= std::min(1.0, static_cast<double>(step + 1) /
                                        static_cast<double>(cfg.warmup_steps));
            optimizer.step(params, grad_refs, lr, cfg.weight_decay);

            for (std::size_t i = 0; i < queries.size(); ++i)
                for (std::uint32_t l : corpus.positives(queries[i]))
                    model.centroids.update(l, qb.vectors.row(i));
            check_state(model);

            if (callbacks.on_step) {
                StepStats st{step, epoch, queries.size(), lseq.size(), lr};
                callbacks.on_step(cr.report, st);
            }
            acc.add(cr.report);
            last = cr.report;
            ++step;
        }
        LossReport er = acc.mean(epoch);
        if (callbacks.on_epoch) callbacks.on_epoch(er);
        result.epoch_reports.push_back(er);
    }
    model.centroids.refresh_untouched(embed_all(model.encoder, label_tokens, cfg.threads));
    result.steps = step;
    return result;
}

}  // namespace prime
