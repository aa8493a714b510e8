#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prime/util.hpp"

namespace prime {

struct TextRecord {
    std::string id;
    std::string text;

    friend bool operator==(const TextRecord&, const TextRecord&) = default;
};

/// Queries, labels and the binary query->label relevance in CSR form.
///
/// Positive sets keep their first-occurrence order from the input line;
/// duplicates are dropped at ingest.
class Corpus {
public:
    Corpus() = default;
    Corpus(std::vector<TextRecord> queries, std::vector<TextRecord> labels,
           std::vector<std::size_t> row_offsets, std::vector<std::uint32_t> label_indices);

    std::size_t num_queries() const noexcept { return queries_.size(); }
    std::size_t num_labels() const noexcept { return labels_.size(); }
    std::size_t nnz() const noexcept { return label_indices_.size(); }

    const std::vector<TextRecord>& queries() const noexcept { return queries_; }
    const std::vector<TextRecord>& labels() const noexcept { return labels_; }
    const std::vector<std::size_t>& row_offsets() const noexcept { return row_offsets_; }

    std::span<const std::uint32_t> positives(std::size_t query) const {
        return {label_indices_.data() + row_offsets_[query],
                row_offsets_[query + 1] - row_offsets_[query]};
    }
    bool is_positive(std::size_t query, std::uint32_t label) const;

    /// Number of queries in which each label is a positive.
    std::vector<std::size_t> label_frequencies() const;

    /// Canonical line-oriented serialization of the query and label files.
    std::string serialize_queries() const;
    std::string serialize_labels() const;

    friend bool operator==(const Corpus&, const Corpus&) = default;

private:
    std::vector<TextRecord> queries_;
    std::vector<TextRecord> labels_;
    std::vector<std::size_t> row_offsets_{0};
    std::vector<std::uint32_t> label_indices_;
};

struct IngestOptions {
    /// Accept queries with no positives (evaluation splits only).
    bool allow_empty = false;
};

Corpus parse_corpus(std::string_view query_text, std::string_view label_text,
                    const IngestOptions& options = {},
                    const std::string& query_source = "query file",
                    const std::string& label_source = "label file");
Corpus ingest(const std::string& query_file, const std::string& label_file,
              const IngestOptions& options = {});

/// Inverse propensities from the standard XMC marginal fit
///   p_l = 1 / (1 + C * exp(-a * ln(n_l + b))),  C = (ln Q - 1) * (b + 1)^a.
struct PropensityTable {
    double a_const = 0.55;
    double b_const = 1.5;
    double c_const = 0.0;
    std::vector<double> p;
    std::vector<double> gamma;

    std::size_t size() const noexcept { return p.size(); }

    /// `label_id<TAB>p<TAB>gamma` lines preceded by a `#` header.
    std::string serialize(const Corpus& corpus) const;
    static PropensityTable parse(std::string_view text, const Corpus& corpus);
};

PropensityTable compute_propensities(const Corpus& corpus, double a = 0.55, double b = 1.5);
PropensityTable propensities_from_frequencies(std::span<const std::size_t> freq,
                                              std::size_t num_queries, double a, double b);

}  // namespace prime
