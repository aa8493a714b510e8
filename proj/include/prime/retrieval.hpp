#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/util.hpp"

namespace prime {

struct Hit {
    std::uint32_t label = 0;
    double score = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

using Ranking = std::vector<Hit>;

/// Immutable exact inner-product index. Rows are held as f32, the precision
/// of checkpoints and exports, and scored in double.
class PrototypeIndex {
public:
    /// Rows must have unit L2 norm within 1e-6 after f32 rounding.
    static PrototypeIndex build(const Matrix& prototypes, std::vector<std::string> ids);

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }

    /// Exact top-k by dot product: descending score, ties by ascending index.
    Ranking topk(std::span<const double> query, std::size_t k) const;
    /// One ranking per query row; queries are independent.
    std::vector<Ranking> topk_batch(const Matrix& queries, std::size_t k,
                                    unsigned threads = 1) const;

    /// `id<TAB>hex` lines, where hex is the big-endian f32 bit pattern of each
    /// component (8 hex digits per value).
    std::string export_text() const;
    static PrototypeIndex import_text(std::string_view text);

private:
    std::vector<float> rows_;
    std::vector<std::string> ids_;
    std::size_t dim_ = 0;
};

/// `query_id<TAB>label_id:score,...` with scores at 6 decimals.
std::string format_predictions(const std::vector<TextRecord>& queries,
                               const std::vector<Ranking>& rankings,
                               const std::vector<std::string>& label_ids);

/// Parses a predictions file into label-index lists aligned with `corpus`
/// queries. Every corpus query must appear exactly once.
std::vector<std::vector<std::uint32_t>> parse_predictions(std::string_view text,
                                                          const Corpus& corpus);

std::vector<std::vector<std::uint32_t>> ranking_labels(const std::vector<Ranking>& rankings);

}  // namespace prime
