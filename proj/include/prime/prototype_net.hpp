#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "prime/params.hpp"
#include "prime/util.hpp"

namespace prime {

class Corpus;
struct EncoderParams;

struct PrototypeNetConfig {
    std::size_t dim = 64;
    std::size_t ffn_dim = 256;
    double dropout = 0.1;
};

/// Single-head pre-norm transformer encoder block over the three-token
/// sequence (h_l, c_l, v_l), followed by a final LayerNorm, mean pooling over
/// the tokens and L2 normalization.
///
/// Row-vector convention: a token x (1 x d) is projected as x * W.
struct PrototypeNetParams {
    Matrix wq, wk, wv, wo;           // d x d
    Matrix ffn_in;                   // d x f
    Matrix ffn_in_bias;              // 1 x f
    Matrix ffn_out;                  // f x d
    Matrix ffn_out_bias;             // 1 x d
    Matrix ln1_gain, ln1_bias;       // 1 x d, before attention
    Matrix ln2_gain, ln2_bias;       // 1 x d, before the FFN
    Matrix lnf_gain, lnf_bias;       // 1 x d, before pooling
    double dropout_rate = 0.1;

    std::size_t dim() const noexcept { return wq.rows; }
    std::size_t ffn_dim() const noexcept { return ffn_in.cols; }
    PrototypeNetConfig config() const { return {dim(), ffn_dim(), dropout_rate}; }

    /// All matrices zero, LayerNorm gains zero too.
    static PrototypeNetParams zeros(const PrototypeNetConfig& cfg);
    /// Xavier-uniform weights, zero biases, unit LayerNorm gains.
    static PrototypeNetParams init(const PrototypeNetConfig& cfg, std::uint64_t seed);

    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;
};

/// EMA label centroids c_l (stop-gradient state).
struct CentroidStore {
    Matrix centroids;                    // L x d
    std::vector<std::uint32_t> touched;  // EMA updates applied per label
    double alpha = 0.95;

    CentroidStore() = default;
    CentroidStore(Matrix initial, double alpha);

    /// c_l <- normalize(alpha * c_l + (1 - alpha) * h_q).
    void update(std::size_t label, std::span<const double> query_embedding);
    /// Resets rows that have never received an EMA update.
    void refresh_untouched(const Matrix& label_embeddings);
};

/// Learnable free vectors shared by clusters of labels.
struct FreeVectorBank {
    Matrix bank;                             // M x d, raw (unnormalized)
    std::vector<std::uint32_t> assignment;   // label -> bank row

    std::size_t size() const noexcept { return bank.rows; }
};

/// Balanced recursive 2-means over unit-normalized rows. Returns a cluster
/// index per row in [0, num_clusters). When num_clusters is not a power of two
/// the largest clusters are split further until the count is reached.
std::vector<std::uint32_t> cluster_labels(const Matrix& embeddings, std::size_t num_clusters,
                                          std::uint64_t seed);

/// Same procedure, returning member lists in cluster order.
std::vector<std::vector<std::uint32_t>> balanced_clusters(const Matrix& embeddings,
                                                          std::size_t num_clusters,
                                                          std::uint64_t seed);

/// Per-label activations retained for the backward pass.
struct PrototypeCache {
    Matrix x;                  // 3 x d input tokens
    Matrix ln1_hat;            // normalized (pre-gain) tokens
    std::vector<double> ln1_rstd;
    Matrix a;                  // LN1 output
    Matrix q, k, v;            // 3 x d
    Matrix attn;               // 3 x 3 softmax weights
    Matrix ctx;                // 3 x d attention-weighted values
    Matrix drop_attn;          // 3 x d scaled dropout mask (empty in eval)
    Matrix r1;                 // first residual
    Matrix ln2_hat;
    std::vector<double> ln2_rstd;
    Matrix b2;                 // LN2 output
    Matrix f1;                 // 3 x f pre-activation
    Matrix g;                  // GELU(f1)
    Matrix drop_hidden;        // 3 x f
    Matrix drop_out;           // 3 x d
    Matrix r2;                 // second residual
    Matrix lnf_hat;
    std::vector<double> lnf_rstd;
    std::vector<double> pooled;
    double pooled_norm = 0.0;
};

struct PrototypeBatch {
    Matrix z;                            // n x d unit rows
    std::vector<PrototypeCache> caches;  // empty when produced without caching
    bool train_mode = false;
};

/// Forward over n labels. Inputs must be unit rows. Dropout is applied to the
/// attention output, FFN hidden activations and FFN output in train mode only;
/// masks are drawn from streams derived from `rng_seed` and the row index.
PrototypeBatch prototype_forward(const PrototypeNetParams& params, const Matrix& h,
                                 const Matrix& c, const Matrix& v, bool train_mode,
                                 std::uint64_t rng_seed, unsigned threads = 1,
                                 bool keep_cache = true);

struct PrototypeInputGrads {
    Matrix dh;  // n x d
    Matrix dv;  // n x d, w.r.t. the normalized free-vector inputs
};

/// Accumulates (+=) into `grads`. The centroid-slot gradient is computed and
/// dropped: centroids are updated by EMA only.
PrototypeInputGrads prototype_backward(const PrototypeNetParams& params,
                                       const PrototypeBatch& batch, const Matrix& upstream,
                                       PrototypeNetParams& grads);

/// Gathers normalized free vectors for `labels`, returning the raw norms.
Matrix gather_free_vectors(const FreeVectorBank& bank, std::span<const std::uint32_t> labels,
                           std::vector<double>* norms = nullptr);

/// Back-propagates through the row normalization and scatter-adds into the
/// bank gradient (labels sharing a row sum their contributions).
void scatter_free_vector_grads(const FreeVectorBank& bank, std::span<const std::uint32_t> labels,
                               const Matrix& dv_normalized, Matrix& bank_grad);

/// Eval-mode prototypes for every label, in label order.
Matrix materialize_all_prototypes(const PrototypeNetParams& params, const Matrix& label_embeddings,
                                  const CentroidStore& centroids, const FreeVectorBank& bank,
                                  unsigned threads = 1);

}  // namespace prime
