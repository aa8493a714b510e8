#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "prime/corpus.hpp"
#include "prime/util.hpp"

namespace prime::testing {

/// Query and label file contents in the ingest format.
struct CorpusText {
    std::string queries;
    std::string labels;
};

/// Three clusters of three labels and ten queries each, with disjoint
/// vocabularies. Every query's positives are the three labels of its cluster.
CorpusText planted_corpus_text(std::uint64_t seed = 7);
Corpus planted_corpus(std::uint64_t seed = 7);

/// Topic-structured corpus for the ablation: 50 topics x 10 labels, 2000
/// training queries with 5% of relevance pairs dropped (never a query's last
/// positive), and 400 test queries with complete relevance.
struct SplitCorpus {
    Corpus train;
    Corpus test;
    std::size_t dropped_pairs = 0;
};
SplitCorpus ablation_corpus(std::uint64_t seed);

/// Labels only, each with a distinct text; queries cycle over labels.
Corpus wide_corpus(std::size_t num_labels, std::size_t num_queries, std::uint64_t seed);

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
Matrix random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng);

/// Deterministic, language-independent values for cross-checked fixtures:
///   m(i, j) = scale * sin(0.37 * (i * cols + j) + phase).
Matrix formula_matrix(std::size_t rows, std::size_t cols, double phase, double scale);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace prime::testing
