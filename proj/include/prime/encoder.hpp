#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "prime/params.hpp"
#include "prime/util.hpp"

namespace prime {

using TokenIds = std::vector<std::uint32_t>;

/// Lowercases ASCII, splits on runs of non-alphanumeric bytes (bytes >= 0x80
/// are kept inside tokens so UTF-8 words stay whole), hashes each token with
/// FNV-1a 64 modulo `vocab_size` and truncates to `max_len`. Empty input maps
/// to the reserved id 0.
TokenIds tokenize(std::string_view text, std::size_t vocab_size, std::size_t max_len);

struct EncoderConfig {
    std::size_t dim = 64;
    std::size_t vocab_size = std::size_t{1} << 16;
    std::size_t max_seq_len = 32;
};

/// Hashed bag-of-tokens encoder: h = normalize(proj * mean(token rows) + bias).
/// `proj` is stored row-major as dim x dim and applied as x = P e.
struct EncoderParams {
    Matrix token_table;  // V x d
    Matrix proj;         // d x d
    Matrix proj_bias;    // 1 x d
    std::size_t max_seq_len = 32;

    std::size_t dim() const noexcept { return proj.rows; }
    std::size_t vocab_size() const noexcept { return token_table.rows; }
    EncoderConfig config() const { return {dim(), vocab_size(), max_seq_len}; }

    static EncoderParams zeros(const EncoderConfig& cfg);
    /// token_table ~ U(-1/sqrt(d), 1/sqrt(d)); proj = I + U(-0.01, 0.01); bias = 0.
    static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);

    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;

    TokenIds tokenize(std::string_view text) const {
        return prime::tokenize(text, vocab_size(), max_seq_len);
    }
};

struct EmbeddingBatch {
    Matrix vectors;                 // B x d, unit rows
    std::vector<double> norms;      // pre-normalization L2 norms
    Matrix pooled;                  // B x d mean token embeddings
    std::vector<TokenIds> token_ids;
};

EmbeddingBatch encode_forward(const EncoderParams& params, std::span<const TokenIds> sequences,
                              unsigned threads = 1);

/// Accumulates (+=) parameter gradients for upstream dL/dh.
void encode_backward(const EncoderParams& params, const EmbeddingBatch& batch,
                     const Matrix& upstream, EncoderParams& grads);

/// Convenience: tokenize and encode texts.
Matrix encode_texts(const EncoderParams& params, std::span<const std::string_view> texts,
                    unsigned threads = 1);

}  // namespace prime
