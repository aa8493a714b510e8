#include "prime/prototype_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prime {
namespace {

constexpr std::size_t kTokens = 3;
constexpr double kLayerNormEps = 1e-5;
constexpr int kTwoMeansIters = 10;

// out(rows x m) = in(rows x n) * w(n x m) [+ bias]
void matmul(const Matrix& in, const Matrix& w, Matrix& out, const Matrix* bias = nullptr) {
    out = Matrix(in.rows, w.cols);
    for (std::size_t r = 0; r < in.rows; ++r) {
        auto o = out.row(r);
        if (bias) std::copy(bias->data.begin(), bias->data.end(), o.begin());
        for (std::size_t i = 0; i < in.cols; ++i) {
            const double a = in(r, i);
            if (a == 0.0) continue;
            const auto wrow = w.row(i);
            for (std::size_t j = 0; j < w.cols; ++j) o[j] += a * wrow[j];
        }
    }
}

// dW += in^T * dout ; din = dout * W^T (din accumulated when provided)
void matmul_backward(const Matrix& in, const Matrix& w, const Matrix& dout, Matrix& dw,
                     Matrix* din) {
    for (std::size_t r = 0; r < in.rows; ++r) {
        const auto drow = dout.row(r);
        for (std::size_t i = 0; i < in.cols; ++i) {
            const double a = in(r, i);
            auto dwrow = dw.row(i);
            for (std::size_t j = 0; j < w.cols; ++j) dwrow[j] += a * drow[j];
        }
        if (din) {
            auto dirow = din->row(r);
            for (std::size_t i = 0; i < in.cols; ++i) dirow[i] += dot(w.row(i), drow);
        }
    }
}

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& out, Matrix& hat,
                std::vector<double>& rstd) {
    const std::size_t d = x.cols;
    out = Matrix(x.rows, d);
    hat = Matrix(x.rows, d);
    rstd.assign(x.rows, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd[r] = rs;
        for (std::size_t k = 0; k < d; ++k) {
            hat(r, k) = (xr[k] - mean) * rs;
            out(r, k) = gain.data[k] * hat(r, k) + bias.data[k];
        }
    }
}

// Accumulates parameter grads and adds the input gradient into dx.
void layer_norm_backward(const Matrix& hat, const std::vector<double>& rstd, const Matrix& gain,
                         const Matrix& dout, Matrix& dgain, Matrix& dbias, Matrix& dx) {
    const std::size_t d = hat.cols;
    std::vector<double> dhat(d);
    for (std::size_t r = 0; r < hat.rows; ++r) {
        double mean_dhat = 0.0, mean_dhat_hat = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dgain.data[k] += dout(r, k) * hat(r, k);
            dbias.data[k] += dout(r, k);
            dhat[k] = dout(r, k) * gain.data[k];
            mean_dhat += dhat[k];
            mean_dhat_hat += dhat[k] * hat(r, k);
        }
        mean_dhat /= static_cast<double>(d);
        mean_dhat_hat /= static_cast<double>(d);
        for (std::size_t k = 0; k < d; ++k)
            dx(r, k) += rstd[r] * (dhat[k] - mean_dhat - hat(r, k) * mean_dhat_hat);
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
    return cdf + x * pdf;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    Matrix m(rows, cols);
    const double scale = 1.0 / (1.0 - rate);
    for (double& v : m.data) v = rng.uniform() < rate ? 0.0 : scale;
    return m;
}

void apply_mask(Matrix& x, const Matrix& mask) {
    if (mask.size() == 0) return;
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] *= mask.data[i];
}

void check_unit_rows(const Matrix& m, const char* what) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        if (std::abs(norm2(m.row(r)) - 1.0) > 1e-6)
            fail(ErrorKind::Usage, std::string("prototype_forward: ") + what + " rows must be unit-norm");
    }
}

// Forward for a single label; fills `cache` when non-null. Returns false when a
// non-finite value appears.
bool forward_one(const PrototypeNetParams& p, std::span<const double> h, std::span<const double> c,
                 std::span<const double> v, bool train, std::uint64_t seed, std::span<double> z,
                 PrototypeCache* cache) {
    const std::size_t d = p.dim();
    PrototypeCache local;
    PrototypeCache& s = cache ? *cache : local;

    s.x = Matrix(kTokens, d);
    std::copy(h.begin(), h.end(), s.x.row(0).begin());
    std::copy(c.begin(), c.end(), s.x.row(1).begin());
    std::copy(v.begin(), v.end(), s.x.row(2).begin());

    layer_norm(s.x, p.ln1_gain, p.ln1_bias, s.a, s.ln1_hat, s.ln1_rstd);
    matmul(s.a, p.wq, s.q);
    matmul(s.a, p.wk, s.k);
    matmul(s.a, p.wv, s.v);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    s.attn = Matrix(kTokens, kTokens);
    for (std::size_t i = 0; i < kTokens; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < kTokens; ++j) {
            s.attn(i, j) = dot(s.q.row(i), s.k.row(j)) * scale;
            mx = std::max(mx, s.attn(i, j));
        }
        double total = 0.0;
        for (std::size_t j = 0; j < kTokens; ++j) {
            s.attn(i, j) = std::exp(s.attn(i, j) - mx);
            total += s.attn(i, j);
        }
        for (std::size_t j = 0; j < kTokens; ++j) s.attn(i, j) /= total;
    }
    matmul(s.attn, s.v, s.ctx);

    const bool use_dropout = train && p.dropout_rate > 0.0;
    Rng rng(seed);
    if (use_dropout) {
        s.drop_attn = dropout_mask(kTokens, d, p.dropout_rate, rng);
        s.drop_hidden = dropout_mask(kTokens, p.ffn_dim(), p.dropout_rate, rng);
        s.drop_out = dropout_mask(kTokens, d, p.dropout_rate, rng);
    } else {
        s.drop_attn = Matrix();
        s.drop_hidden = Matrix();
        s.drop_out = Matrix();
    }

    Matrix attn_out;
    matmul(s.ctx, p.wo, attn_out);
    apply_mask(attn_out, s.drop_attn);
    s.r1 = s.x;
    for (std::size_t i = 0; i < s.r1.size(); ++i) s.r1.data[i] += attn_out.data[i];

    layer_norm(s.r1, p.ln2_gain, p.ln2_bias, s.b2, s.ln2_hat, s.ln2_rstd);
    matmul(s.b2, p.ffn_in, s.f1, &p.ffn_in_bias);
    s.g = Matrix(s.f1.rows, s.f1.cols);
    for (std::size_t i = 0; i < s.f1.size(); ++i) s.g.data[i] = gelu(s.f1.data[i]);
    Matrix hidden = s.g;
    apply_mask(hidden, s.drop_hidden);
    Matrix ffn;
    matmul(hidden, p.ffn_out, ffn, &p.ffn_out_bias);
    apply_mask(ffn, s.drop_out);
    s.r2 = s.r1;
    for (std::size_t i = 0; i < s.r2.size(); ++i) s.r2.data[i] += ffn.data[i];

    Matrix y;
    layer_norm(s.r2, p.lnf_gain, p.lnf_bias, y, s.lnf_hat, s.lnf_rstd);
    s.pooled.assign(d, 0.0);
    for (std::size_t r = 0; r < kTokens; ++r)
        for (std::size_t k = 0; k < d; ++k) s.pooled[k] += y(r, k) / static_cast<double>(kTokens);
    s.pooled_norm = norm2(s.pooled);
    if (!std::isfinite(s.pooled_norm) || s.pooled_norm < 1e-300) return false;
    for (std::size_t k = 0; k < d; ++k) z[k] = s.pooled[k] / s.pooled_norm;
    return std::all_of(z.begin(), z.end(), [](double x) { return std::isfinite(x); });
}

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& v : m.data) v = rng.uniform(-bound, bound);
    return m;
}

// Splits `members` into balanced halves by iterated 2-means on unit rows.
std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> two_means_split(
    const Matrix& unit, const std::vector<std::uint32_t>& members, Rng& rng) {
    const std::size_t n = members.size();
    const std::size_t d = unit.cols;
    const std::size_t i0 = rng.below(n);
    std::size_t i1 = rng.below(n - 1);
    if (i1 >= i0) ++i1;
    std::vector<double> mu1(unit.row(members[i0]).begin(), unit.row(members[i0]).end());
    std::vector<double> mu2(unit.row(members[i1]).begin(), unit.row(members[i1]).end());

    std::vector<std::size_t> order(n);
    std::vector<double> score(n);
    std::vector<char> side(n, 2), prev(n, 3);
    for (int iter = 0; iter < kTwoMeansIters; ++iter) {
        for (std::size_t m = 0; m < n; ++m) {
            const auto x = unit.row(members[m]);
            score[m] = dot(x, mu1) - dot(x, mu2);
        }
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (score[a] != score[b]) return score[a] > score[b];
            return members[a] < members[b];
        });
        const std::size_t left = (n + 1) / 2;
        for (std::size_t r = 0; r < n; ++r) side[order[r]] = r < left ? 0 : 1;
        if (side == prev) break;
        prev = side;

        std::vector<double> s1(d, 0.0), s2(d, 0.0);
        for (std::size_t m = 0; m < n; ++m) {
            auto& acc = side[m] == 0 ? s1 : s2;
            const auto x = unit.row(members[m]);
            for (std::size_t k = 0; k < d; ++k) acc[k] += x[k];
        }
        if (normalize_inplace(s1) > 0.0) mu1 = s1;
        if (normalize_inplace(s2) > 0.0) mu2 = s2;
    }
    std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> out;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t m = order[r];
        (side[m] == 0 ? out.first : out.second).push_back(members[m]);
    }
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

}  // namespace

PrototypeNetParams PrototypeNetParams::zeros(const PrototypeNetConfig& cfg) {
    if (cfg.dim < 2) fail(ErrorKind::Usage, "prototype network requires dim >= 2");
    if (cfg.ffn_dim < cfg.dim) fail(ErrorKind::Usage, "prototype network requires ffn_dim >= dim");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
        fail(ErrorKind::Usage, "dropout must lie in [0, 1)");
    const std::size_t d = cfg.dim, f = cfg.ffn_dim;
    PrototypeNetParams p;
    p.wq = p.wk = p.wv = p.wo = Matrix(d, d);
    p.ffn_in = Matrix(d, f);
    p.ffn_in_bias = Matrix(1, f);
    p.ffn_out = Matrix(f, d);
    p.ffn_out_bias = Matrix(1, d);
    p.ln1_gain = p.ln1_bias = p.ln2_gain = p.ln2_bias = p.lnf_gain = p.lnf_bias = Matrix(1, d);
    p.dropout_rate = cfg.dropout;
    return p;
}

PrototypeNetParams PrototypeNetParams::init(const PrototypeNetConfig& cfg, std::uint64_t seed) {
    PrototypeNetParams p = zeros(cfg);
    Rng rng(seed);
    const std::size_t d = cfg.dim, f = cfg.ffn_dim;
    p.wq = xavier(d, d, rng);
    p.wk = xavier(d, d, rng);
    p.wv = xavier(d, d, rng);
    p.wo = xavier(d, d, rng);
    p.ffn_in = xavier(d, f, rng);
    p.ffn_out = xavier(f, d, rng);
    for (Matrix* g : {&p.ln1_gain, &p.ln2_gain, &p.lnf_gain})
        std::fill(g->data.begin(), g->data.end(), 1.0);
    return p;
}

std::vector<TensorRef> PrototypeNetParams::tensors() {
    return {{"proto.wq", &wq, ParamGroup::Weight},
            {"proto.wk", &wk, ParamGroup::Weight},
            {"proto.wv", &wv, ParamGroup::Weight},
            {"proto.wo", &wo, ParamGroup::Weight},
            {"proto.ffn_in", &ffn_in, ParamGroup::Weight},
            {"proto.ffn_in_bias", &ffn_in_bias, ParamGroup::Bias},
            {"proto.ffn_out", &ffn_out, ParamGroup::Weight},
            {"proto.ffn_out_bias", &ffn_out_bias, ParamGroup::Bias},
            {"proto.ln1_gain", &ln1_gain, ParamGroup::LayerNorm},
            {"proto.ln1_bias", &ln1_bias, ParamGroup::LayerNorm},
            {"proto.ln2_gain", &ln2_gain, ParamGroup::LayerNorm},
            {"proto.ln2_bias", &ln2_bias, ParamGroup::LayerNorm},
            {"proto.lnf_gain", &lnf_gain, ParamGroup::LayerNorm},
            {"proto.lnf_bias", &lnf_bias, ParamGroup::LayerNorm}};
}

std::vector<ConstTensorRef> PrototypeNetParams::tensors() const {
    std::vector<ConstTensorRef> out;
    for (const auto& t : const_cast<PrototypeNetParams*>(this)->tensors())
        out.push_back({t.name, t.value, t.group});
    return out;
}

CentroidStore::CentroidStore(Matrix initial, double a)
    : centroids(std::move(initial)), touched(centroids.rows, 0), alpha(a) {
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::Usage, "EMA alpha must lie in (0, 1)");
}

void CentroidStore::update(std::size_t label, std::span<const double> query_embedding) {
    auto c = centroids.row(label);
    for (std::size_t k = 0; k < c.size(); ++k)
        c[k] = alpha * c[k] + (1.0 - alpha) * query_embedding[k];
    if (normalize_inplace(c) == 0.0) fail(ErrorKind::Numeric, "centroid collapsed to zero");
    ++touched[label];
}

void CentroidStore::refresh_untouched(const Matrix& label_embeddings) {
    for (std::size_t l = 0; l < centroids.rows; ++l) {
        if (touched[l] == 0) {
            const auto src = label_embeddings.row(l);
            std::copy(src.begin(), src.end(), centroids.row(l).begin());
        }
    }
}

std::vector<std::vector<std::uint32_t>> balanced_clusters(const Matrix& embeddings,
                                                          std::size_t num_clusters,
                                                          std::uint64_t seed) {
    const std::size_t n = embeddings.rows;
    if (num_clusters == 0) fail(ErrorKind::Usage, "cluster count must be positive");
    if (num_clusters > n)
        fail(ErrorKind::Usage, "cannot form " + std::to_string(num_clusters) + " clusters from " +
                                   std::to_string(n) + " points");
    Matrix unit = embeddings;
    for (std::size_t r = 0; r < n; ++r) normalize_inplace(unit.row(r));

    std::vector<std::vector<std::uint32_t>> clusters(1);
    clusters[0].resize(n);
    std::iota(clusters[0].begin(), clusters[0].end(), 0u);

    std::uint64_t split_counter = 0;
    auto split_at = [&](std::size_t idx) {
        Rng rng(derive_seed(seed, split_counter++));
        auto [left, right] = two_means_split(unit, clusters[idx], rng);
        clusters[idx] = std::move(left);
        clusters.insert(clusters.begin() + static_cast<std::ptrdiff_t>(idx) + 1, std::move(right));
    };

    std::size_t full_levels = 1;
    while (full_levels * 2 <= num_clusters) full_levels *= 2;
    while (clusters.size() < full_levels) {
        const std::size_t count = clusters.size();
        for (std::size_t i = count; i-- > 0;) split_at(i);
    }
    while (clusters.size() < num_clusters) {
        std::size_t largest = 0;
        for (std::size_t i = 1; i < clusters.size(); ++i)
            if (clusters[i].size() > clusters[largest].size()) largest = i;
        split_at(largest);
    }
    return clusters;
}

std::vector<std::uint32_t> cluster_labels(const Matrix& embeddings, std::size_t num_clusters,
                                          std::uint64_t seed) {
    std::vector<std::uint32_t> assignment(embeddings.rows, 0);
    const auto clusters = balanced_clusters(embeddings, num_clusters, seed);
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (std::uint32_t m : clusters[c]) assignment[m] = static_cast<std::uint32_t>(c);
    return assignment;
}

PrototypeBatch prototype_forward(const PrototypeNetParams& params, const Matrix& h,
                                 const Matrix& c, const Matrix& v, bool train_mode,
                                 std::uint64_t rng_seed, unsigned threads, bool keep_cache) {
    const std::size_t d = params.dim();
    const std::size_t n = h.rows;
    if (n == 0) fail(ErrorKind::Usage, "prototype_forward: empty batch");
    if (h.cols != d || !c.same_shape(h) || !v.same_shape(h))
        fail(ErrorKind::Usage, "prototype_forward: input shape mismatch");
    check_unit_rows(h, "label embedding");
    check_unit_rows(c, "centroid");
    check_unit_rows(v, "free vector");

    PrototypeBatch out;
    out.z = Matrix(n, d);
    out.train_mode = train_mode;
    if (keep_cache) out.caches.resize(n);
    std::vector<char> ok(n, 1);
    parallel_for(n, threads, [&](std::size_t i) {
        ok[i] = forward_one(params, h.row(i), c.row(i), v.row(i), train_mode,
                            derive_seed(rng_seed, i), out.z.row(i),
                            keep_cache ? &out.caches[i] : nullptr);
    });
    if (std::find(ok.begin(), ok.end(), 0) != ok.end()) fail(ErrorKind::Numeric, "prototype overflow");
    return out;
}

PrototypeInputGrads prototype_backward(const PrototypeNetParams& p, const PrototypeBatch& batch,
                                       const Matrix& upstream, PrototypeNetParams& g) {
    const std::size_t d = p.dim();
    const std::size_t n = batch.z.rows;
    if (batch.caches.size() != n) fail(ErrorKind::Usage, "prototype_backward: batch has no cache");
    if (upstream.rows != n || upstream.cols != d)
        fail(ErrorKind::Usage, "prototype_backward: upstream shape mismatch");
    if (!g.wq.same_shape(p.wq) || !g.ffn_in.same_shape(p.ffn_in))
        fail(ErrorKind::Usage, "prototype_backward: gradient buffer shape mismatch");

    PrototypeInputGrads out{Matrix(n, d), Matrix(n, d)};
    const double inv_tokens = 1.0 / static_cast<double>(kTokens);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    for (std::size_t i = 0; i < n; ++i) {
        const PrototypeCache& s = batch.caches[i];
        const auto z = batch.z.row(i);
        const auto dz = upstream.row(i);

        // z = pooled / |pooled|
        const double radial = dot(z, dz);
        Matrix dy(kTokens, d);
        for (std::size_t k = 0; k < d; ++k) {
            const double dpooled = (dz[k] - z[k] * radial) / s.pooled_norm;
            for (std::size_t r = 0; r < kTokens; ++r) dy(r, k) = dpooled * inv_tokens;
        }

        Matrix dr2(kTokens, d);
        layer_norm_backward(s.lnf_hat, s.lnf_rstd, p.lnf_gain, dy, g.lnf_gain, g.lnf_bias, dr2);

        // r2 = r1 + drop_out * (drop_hidden * g) W2 + b2
        Matrix dffn = dr2;
        apply_mask(dffn, s.drop_out);
        Matrix hidden = s.g;
        apply_mask(hidden, s.drop_hidden);
        Matrix dhidden(kTokens, p.ffn_dim());
        matmul_backward(hidden, p.ffn_out, dffn, g.ffn_out, &dhidden);
        for (std::size_t r = 0; r < kTokens; ++r)
            for (std::size_t k = 0; k < d; ++k) g.ffn_out_bias.data[k] += dffn(r, k);
        apply_mask(dhidden, s.drop_hidden);
        Matrix df1(kTokens, p.ffn_dim());
        for (std::size_t t = 0; t < df1.size(); ++t) df1.data[t] = dhidden.data[t] * gelu_grad(s.f1.data[t]);
        Matrix db2(kTokens, d);
        matmul_backward(s.b2, p.ffn_in, df1, g.ffn_in, &db2);
        for (std::size_t r = 0; r < kTokens; ++r)
            for (std::size_t k = 0; k < p.ffn_dim(); ++k) g.ffn_in_bias.data[k] += df1(r, k);

        Matrix dr1 = dr2;
        layer_norm_backward(s.ln2_hat, s.ln2_rstd, p.ln2_gain, db2, g.ln2_gain, g.ln2_bias, dr1);

        // r1 = x + drop_attn * (ctx Wo)
        Matrix dattn_out = dr1;
        apply_mask(dattn_out, s.drop_attn);
        Matrix dctx(kTokens, d);
        matmul_backward(s.ctx, p.wo, dattn_out, g.wo, &dctx);

        // ctx = attn * v
        Matrix dattn(kTokens, kTokens);
        Matrix dv(kTokens, d);
        for (std::size_t r = 0; r < kTokens; ++r) {
            for (std::size_t j = 0; j < kTokens; ++j) {
                dattn(r, j) = dot(dctx.row(r), s.v.row(j));
                for (std::size_t k = 0; k < d; ++k) dv(j, k) += s.attn(r, j) * dctx(r, k);
            }
        }
        // softmax rows
        Matrix dscore(kTokens, kTokens);
        for (std::size_t r = 0; r < kTokens; ++r) {
            double inner = 0.0;
            for (std::size_t j = 0; j < kTokens; ++j) inner += s.attn(r, j) * dattn(r, j);
            for (std::size_t j = 0; j < kTokens; ++j)
                dscore(r, j) = s.attn(r, j) * (dattn(r, j) - inner) * scale;
        }
        Matrix dq(kTokens, d), dk(kTokens, d);
        for (std::size_t r = 0; r < kTokens; ++r) {
            for (std::size_t j = 0; j < kTokens; ++j) {
                for (std::size_t k = 0; k < d; ++k) {
                    dq(r, k) += dscore(r, j) * s.k(j, k);
                    dk(j, k) += dscore(r, j) * s.q(r, k);
                }
            }
        }
        Matrix da(kTokens, d);
        matmul_backward(s.a, p.wq, dq, g.wq, &da);
        matmul_backward(s.a, p.wk, dk, g.wk, &da);
        matmul_backward(s.a, p.wv, dv, g.wv, &da);

        Matrix dx = dr1;
        layer_norm_backward(s.ln1_hat, s.ln1_rstd, p.ln1_gain, da, g.ln1_gain, g.ln1_bias, dx);

        std::copy(dx.row(0).begin(), dx.row(0).end(), out.dh.row(i).begin());
        std::copy(dx.row(2).begin(), dx.row(2).end(), out.dv.row(i).begin());
    }
    return out;
}

Matrix gather_free_vectors(const FreeVectorBank& bank, std::span<const std::uint32_t> labels,
                           std::vector<double>* norms) {
    Matrix out(labels.size(), bank.bank.cols);
    if (norms) norms->assign(labels.size(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto src = bank.bank.row(bank.assignment.at(labels[i]));
        auto dst = out.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
        const double n = normalize_inplace(dst);
        if (n < 1e-12) fail(ErrorKind::Numeric, "free vector collapsed to zero");
        if (norms) (*norms)[i] = n;
    }
    return out;
}

void scatter_free_vector_grads(const FreeVectorBank& bank, std::span<const std::uint32_t> labels,
                               const Matrix& dv_normalized, Matrix& bank_grad) {
    if (!bank_grad.same_shape(bank.bank) || dv_normalized.rows != labels.size())
        fail(ErrorKind::Usage, "scatter_free_vector_grads: shape mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::uint32_t m = bank.assignment.at(labels[i]);
        const auto raw = bank.bank.row(m);
        const double n = norm2(raw);
        const auto g = dv_normalized.row(i);
        double radial = 0.0;
        for (std::size_t k = 0; k < raw.size(); ++k) radial += raw[k] * g[k];
        radial /= n;
        auto dst = bank_grad.row(m);
        for (std::size_t k = 0; k < raw.size(); ++k) dst[k] += (g[k] - raw[k] / n * radial) / n;
    }
}

Matrix materialize_all_prototypes(const PrototypeNetParams& params, const Matrix& label_embeddings,
                                  const CentroidStore& centroids, const FreeVectorBank& bank,
                                  unsigned threads) {
    const std::size_t n = label_embeddings.rows;
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    const Matrix v = gather_free_vectors(bank, all);
    return prototype_forward(params, label_embeddings, centroids.centroids, v, false, 0, threads,
                             false)
        .z;
}

}  // namespace prime
