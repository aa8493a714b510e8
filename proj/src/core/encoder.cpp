#include "prime/encoder.hpp"

#include <cmath>

namespace prime {

namespace {

bool is_token_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

}  // namespace

TokenIds tokenize(std::string_view text, std::size_t vocab_size, std::size_t max_len) {
    TokenIds ids;
    std::string token;
    auto flush = [&] {
        if (!token.empty() && ids.size() < max_len)
            ids.push_back(static_cast<std::uint32_t>(fnv1a64(token) % vocab_size));
        token.clear();
    };
    for (unsigned char c : text) {
        if (is_token_byte(c)) {
            token += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
        } else {
            flush();
        }
    }
    flush();
    if (ids.empty()) ids.push_back(0);
    return ids;
}

EncoderParams EncoderParams::zeros(const EncoderConfig& cfg) {
    if (cfg.dim < 2 || cfg.vocab_size < 1 || cfg.max_seq_len < 1)
        fail(ErrorKind::Usage, "encoder requires dim >= 2, vocab >= 1, max_seq_len >= 1");
    EncoderParams p;
    p.token_table = Matrix(cfg.vocab_size, cfg.dim);
    p.proj = Matrix(cfg.dim, cfg.dim);
    p.proj_bias = Matrix(1, cfg.dim);
    p.max_seq_len = cfg.max_seq_len;
    return p;
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
    EncoderParams p = zeros(cfg);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    for (double& v : p.token_table.data) v = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < cfg.dim; ++i)
        for (std::size_t j = 0; j < cfg.dim; ++j)
            p.proj(i, j) = (i == j ? 1.0 : 0.0) + rng.uniform(-0.01, 0.01);
    return p;
}

std::vector<TensorRef> EncoderParams::tensors() {
    return {{"encoder.token_table", &token_table, ParamGroup::Weight},
            {"encoder.proj", &proj, ParamGroup::Weight},
            {"encoder.proj_bias", &proj_bias, ParamGroup::Bias}};
}

std::vector<ConstTensorRef> EncoderParams::tensors() const {
    return {{"encoder.token_table", &token_table, ParamGroup::Weight},
            {"encoder.proj", &proj, ParamGroup::Weight},
            {"encoder.proj_bias", &proj_bias, ParamGroup::Bias}};
}

EmbeddingBatch encode_forward(const EncoderParams& params, std::span<const TokenIds> sequences,
                              unsigned threads) {
    const std::size_t d = params.dim();
    const std::size_t n = sequences.size();
    EmbeddingBatch out;
    out.vectors = Matrix(n, d);
    out.pooled = Matrix(n, d);
    out.norms.assign(n, 0.0);
    out.token_ids.assign(sequences.begin(), sequences.end());

    parallel_for(n, threads, [&](std::size_t i) {
        const TokenIds& seq = sequences[i];
        if (seq.empty()) fail(ErrorKind::Usage, "empty token sequence");
        auto pooled = out.pooled.row(i);
        for (std::uint32_t t : seq) {
            if (t >= params.vocab_size()) fail(ErrorKind::Usage, "token id out of range");
            const auto e = params.token_table.row(t);
            for (std::size_t k = 0; k < d; ++k) pooled[k] += e[k];
        }
        const double inv_len = 1.0 / static_cast<double>(seq.size());
        for (double& v : pooled) v *= inv_len;

        auto h = out.vectors.row(i);
        for (std::size_t r = 0; r < d; ++r)
            h[r] = dot(params.proj.row(r), pooled) + params.proj_bias.data[r];
        const double norm = norm2(h);
        if (!(norm >= 1e-12)) fail(ErrorKind::Numeric, "degenerate embedding");
        for (double& v : h) v /= norm;
        out.norms[i] = norm;
    });
    return out;
}

void encode_backward(const EncoderParams& params, const EmbeddingBatch& batch,
                     const Matrix& upstream, EncoderParams& grads) {
    const std::size_t d = params.dim();
    if (upstream.rows != batch.vectors.rows || upstream.cols != d)
        fail(ErrorKind::Usage, "encode_backward: upstream shape mismatch");
    if (!grads.token_table.same_shape(params.token_table) || !grads.proj.same_shape(params.proj) ||
        !grads.proj_bias.same_shape(params.proj_bias))
        fail(ErrorKind::Usage, "encode_backward: gradient buffer shape mismatch");

    std::vector<double> gx(d), ge(d);
    for (std::size_t i = 0; i < batch.vectors.rows; ++i) {
        const auto h = batch.vectors.row(i);
        const auto g = upstream.row(i);
        // d(x/|x|)/dx = (I - h h^T) / |x|
        const double radial = dot(h, g);
        for (std::size_t k = 0; k < d; ++k) gx[k] = (g[k] - h[k] * radial) / batch.norms[i];

        const auto pooled = batch.pooled.row(i);
        for (std::size_t r = 0; r < d; ++r) {
            grads.proj_bias.data[r] += gx[r];
            auto grow = grads.proj.row(r);
            for (std::size_t c = 0; c < d; ++c) grow[c] += gx[r] * pooled[c];
        }
        std::fill(ge.begin(), ge.end(), 0.0);
        for (std::size_t r = 0; r < d; ++r) {
            const auto prow = params.proj.row(r);
            for (std::size_t c = 0; c < d; ++c) ge[c] += prow[c] * gx[r];
        }
        const auto& seq = batch.token_ids[i];
        const double inv_len = 1.0 / static_cast<double>(seq.size());
        for (std::uint32_t t : seq) {
            auto trow = grads.token_table.row(t);
            for (std::size_t k = 0; k < d; ++k) trow[k] += ge[k] * inv_len;
        }
    }
}

Matrix encode_texts(const EncoderParams& params, std::span<const std::string_view> texts,
                    unsigned threads) {
    std::vector<TokenIds> seqs;
    seqs.reserve(texts.size());
    for (auto t : texts) seqs.push_back(params.tokenize(t));
    return encode_forward(params, seqs, threads).vectors;
}

}  // namespace prime
