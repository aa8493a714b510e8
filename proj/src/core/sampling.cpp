#include "prime/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "prime/prototype_net.hpp"

namespace prime {

std::vector<std::vector<std::uint32_t>> BatchPlan::batches() const {
    std::vector<std::vector<std::uint32_t>> out;
    for (std::size_t c : epoch_order) {
        const auto& members = clusters[c];
        for (std::size_t start = 0; start < members.size(); start += batch_size) {
            const std::size_t end = std::min(members.size(), start + batch_size);
            out.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(start),
                             members.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return out;
}

BatchPlan build_batch_plan(const Matrix& query_embeddings, std::size_t batch_size,
                           std::uint64_t seed, std::size_t refresh_period) {
    const std::size_t q = query_embeddings.rows;
    if (batch_size < 2) fail(ErrorKind::Usage, "batch size must be at least 2");
    if (batch_size > q)
        fail(ErrorKind::Usage, "batch size " + std::to_string(batch_size) + " exceeds query count " +
                                   std::to_string(q));
    std::size_t num_clusters = 1;
    while (num_clusters * batch_size < q) num_clusters *= 2;

    BatchPlan plan;
    plan.batch_size = batch_size;
    plan.refresh_period = refresh_period;
    plan.clusters = balanced_clusters(query_embeddings, num_clusters, derive_seed(seed, 0xC1u));
    plan.epoch_order.resize(plan.clusters.size());
    std::iota(plan.epoch_order.begin(), plan.epoch_order.end(), 0);
    shuffle_plan(plan, seed, 0);
    return plan;
}

void shuffle_plan(BatchPlan& plan, std::uint64_t seed, std::uint64_t epoch) {
    std::iota(plan.epoch_order.begin(), plan.epoch_order.end(), 0);
    Rng rng(derive_seed(seed, 0xE0u, epoch));
    rng.shuffle(plan.epoch_order);
}

std::vector<std::int64_t> sample_positives(std::size_t query, const Corpus& corpus,
                                           const PropensityTable& propensity, std::size_t count,
                                           Rng& rng) {
    const auto pos = corpus.positives(query);
    if (pos.empty()) fail(ErrorKind::Data, "query has no positives to sample");
    std::vector<std::int64_t> out(count, -1);
    std::vector<std::uint32_t> remaining(pos.begin(), pos.end());
    std::vector<double> weights;
    for (std::size_t slot = 0; slot < count && !remaining.empty(); ++slot) {
        weights.clear();
        double total = 0.0;
        for (std::uint32_t l : remaining) {
            weights.push_back(propensity.gamma.at(l));
            total += weights.back();
        }
        double u = rng.uniform() * total;
        std::size_t pick = remaining.size() - 1;
        for (std::size_t j = 0; j < remaining.size(); ++j) {
            if (u < weights[j]) {
                pick = j;
                break;
            }
            u -= weights[j];
        }
        out[slot] = remaining[pick];
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
}

TripletBatch assemble_triplet_batch(const std::vector<std::uint32_t>& queries,
                                    const std::vector<std::vector<std::int64_t>>& sampled,
                                    const Corpus& corpus) {
    if (queries.size() != sampled.size())
        fail(ErrorKind::Usage, "assemble_triplet_batch: one sample list per query required");
    TripletBatch tb;
    tb.query_indices = queries;
    std::unordered_map<std::uint32_t, std::uint32_t> column;
    tb.positives.resize(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        for (std::int64_t l : sampled[i]) {
            if (l < 0) continue;
            const auto label = static_cast<std::uint32_t>(l);
            auto [it, inserted] = column.emplace(label, static_cast<std::uint32_t>(tb.pool.size()));
            if (inserted) tb.pool.push_back(label);
            tb.positives[i].push_back(it->second);
        }
        if (tb.positives[i].empty())
            fail(ErrorKind::Data, "query " + std::to_string(queries[i]) + " has no sampled positive");
    }
    const std::size_t b = queries.size();
    const std::size_t k = tb.pool.size();
    tb.negative_mask.assign(b * k, 0);
    tb.label_query_relevance.assign(k * b, 0);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const bool positive = corpus.is_positive(queries[i], tb.pool[j]);
            tb.negative_mask[i * k + j] = positive ? 0 : 1;
            tb.label_query_relevance[j * b + i] = positive ? 1 : 0;
        }
    }
    return tb;
}

}  // namespace prime
