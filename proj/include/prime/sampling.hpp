#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/util.hpp"

namespace prime {

/// Query groups for in-batch negative mining. Clusters come from balanced
/// recursive 2-means over query embeddings with cluster size <= batch size;
/// each cluster is one batch, and the batch order is reshuffled per epoch.
struct BatchPlan {
    std::vector<std::vector<std::uint32_t>> clusters;
    std::vector<std::size_t> epoch_order;  // permutation of clusters
    std::size_t batch_size = 0;
    std::size_t refresh_period = 10;

    std::vector<std::vector<std::uint32_t>> batches() const;
};

BatchPlan build_batch_plan(const Matrix& query_embeddings, std::size_t batch_size,
                           std::uint64_t seed, std::size_t refresh_period = 10);

/// New cluster order for `epoch`, reproducible from (seed, epoch).
void shuffle_plan(BatchPlan& plan, std::uint64_t seed, std::uint64_t epoch);

/// P draws without replacement from P_i with probability gamma_l / sum gamma.
/// Returns exactly `count` slots; -1 marks a masked slot when |P_i| < count.
std::vector<std::int64_t> sample_positives(std::size_t query, const Corpus& corpus,
                                           const PropensityTable& propensity, std::size_t count,
                                           Rng& rng);

struct TripletBatch {
    std::vector<std::uint32_t> query_indices;          // B
    std::vector<std::uint32_t> pool;                   // K distinct corpus label ids
    std::vector<std::vector<std::uint32_t>> positives; // per query: pool columns
    std::vector<std::uint8_t> negative_mask;           // B x K
    /// K x B: pool label is a ground-truth positive of batch query.
    std::vector<std::uint8_t> label_query_relevance;
};

/// Pool = first-appearance union of the sampled positives. Negatives exclude
/// each query's full ground-truth positive set.
TripletBatch assemble_triplet_batch(const std::vector<std::uint32_t>& queries,
                                    const std::vector<std::vector<std::int64_t>>& sampled,
                                    const Corpus& corpus);

}  // namespace prime
