#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "prime/sampling.hpp"

namespace prime {
namespace {

PropensityTable gamma_table(std::vector<double> gamma) {
    PropensityTable t;
    for (double g : gamma) t.p.push_back(1.0 / g);
    t.gamma = std::move(gamma);
    return t;
}

Corpus small_corpus(const std::string& queries, std::size_t labels) {
    std::string l;
    for (std::size_t i = 0; i < labels; ++i) l += "l" + std::to_string(i) + "\tlabel " + std::to_string(i) + "\n";
    return parse_corpus(queries, l);
}

TEST(SamplePositives, PropensityWeightedFirstDraw) {
    const Corpus c = small_corpus("q0\tl0,l1\tx\n", 2);
    const PropensityTable t = gamma_table({3.0, 1.0});
    Rng rng(1);
    const int n = 100000;
    int first_a = 0;
    for (int i = 0; i < n; ++i) {
        const auto s = sample_positives(0, c, t, 2, rng);
        ASSERT_NE(s[0], s[1]);
        first_a += s[0] == 0;
    }
    EXPECT_NEAR(static_cast<double>(first_a) / n, 0.75, 0.01);
}

TEST(SamplePositives, SinglePositiveMasksRemainder) {
    const Corpus c = small_corpus("q0\tl1\tx\n", 2);
    const PropensityTable t = gamma_table({1.0, 1.0});
    Rng rng(2);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_positives(0, c, t, 2, rng), (std::vector<std::int64_t>{1, -1}));
}

TEST(SamplePositives, UniformWeightsPassChiSquare) {
    const Corpus c = small_corpus("q0\tl0,l1,l2,l3\tx\n", 4);
    const PropensityTable t = gamma_table({2.0, 2.0, 2.0, 2.0});
    Rng rng(3);
    const int n = 100000;
    std::vector<int> counts(4, 0);
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_positives(0, c, t, 1, rng)[0])];
    double chi2 = 0;
    for (int k : counts) chi2 += (k - n / 4.0) * (k - n / 4.0) / (n / 4.0);
    // Upper 0.001 quantile of chi-square with 3 degrees of freedom.
    EXPECT_LT(chi2, 16.266);
}

TEST(AssembleBatch, SharedPositiveDeduplicatedAndMasked) {
    const Corpus c = small_corpus("q0\tl0,l1\ta\nq1\tl1,l2\tb\n", 3);
    const TripletBatch tb = assemble_triplet_batch({0, 1}, {{0, 1}, {1, 2}}, c);
    EXPECT_EQ(tb.pool, (std::vector<std::uint32_t>{0, 1, 2}));
    // Column 1 (label l1) is a positive of both queries, so neither may use it as a negative.
    EXPECT_EQ(tb.negative_mask, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0}));
}

TEST(AssembleBatch, DisjointPositivesCounting) {
    const Corpus c = small_corpus("q0\tl0,l1\ta\nq1\tl2,l3\tb\nq2\tl4,l5\tc\n", 6);
    const TripletBatch tb = assemble_triplet_batch({0, 1, 2}, {{0, 1}, {2, 3}, {4, 5}}, c);
    EXPECT_EQ(tb.pool.size(), 6u);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(std::count(tb.negative_mask.begin() + i * 6, tb.negative_mask.begin() + i * 6 + 6, 1), 4);
}

TEST(AssembleBatch, MaskMatchesFullRelevanceOnRandomFixtures) {
    Rng rng(4);
    for (int fixture = 0; fixture < 20; ++fixture) {
        const Corpus c = testing::wide_corpus(30, 40, 100 + fixture);
        const PropensityTable t = compute_propensities(c);
        std::vector<std::uint32_t> qs;
        for (std::size_t i = 0; i < 8; ++i) qs.push_back(static_cast<std::uint32_t>(rng.below(c.num_queries())));
        std::sort(qs.begin(), qs.end());
        qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
        std::vector<std::vector<std::int64_t>> sampled;
        for (std::uint32_t q : qs) sampled.push_back(sample_positives(q, c, t, 2, rng));
        const TripletBatch tb = assemble_triplet_batch(qs, sampled, c);
        const std::size_t k = tb.pool.size();
        EXPECT_LE(k, 2 * qs.size());
        for (std::size_t i = 0; i < qs.size(); ++i) {
            EXPECT_FALSE(tb.positives[i].empty());
            for (std::size_t j = 0; j < k; ++j) {
                const auto pos = c.positives(qs[i]);
                const bool member = std::find(pos.begin(), pos.end(), tb.pool[j]) != pos.end();
                EXPECT_EQ(tb.negative_mask[i * k + j], member ? 0 : 1);
                EXPECT_EQ(tb.label_query_relevance[j * qs.size() + i], member ? 1 : 0);
            }
        }
    }
}

Matrix two_blobs(Rng& rng) {
    Matrix m(8, 3);
    for (std::size_t r = 0; r < 8; ++r) {
        const double sign = r % 2 ? -1.0 : 1.0;
        m(r, 0) = sign + rng.uniform(-0.05, 0.05);
        m(r, 1) = rng.uniform(-0.05, 0.05);
        m(r, 2) = rng.uniform(-0.05, 0.05);
        normalize_inplace(m.row(r));
    }
    return m;
}

TEST(BatchPlan, BatchesArePureOnSeparatedBlobs) {
    Rng rng(5);
    const Matrix q = two_blobs(rng);
    const BatchPlan plan = build_batch_plan(q, 4, 9);
    const auto batches = plan.batches();
    ASSERT_EQ(batches.size(), 2u);
    for (const auto& b : batches) {
        EXPECT_EQ(b.size(), 4u);
        for (std::uint32_t i : b) EXPECT_EQ(i % 2, b[0] % 2);
    }
}

TEST(BatchPlan, FullBatchWhenSizeEqualsQueries) {
    Rng rng(6);
    const Matrix q = testing::random_unit_rows(10, 4, rng);
    const auto batches = build_batch_plan(q, 10, 1).batches();
    ASSERT_EQ(batches.size(), 1u);
    EXPECT_EQ(batches[0].size(), 10u);
    EXPECT_THROW(build_batch_plan(q, 11, 1), Error);
}

TEST(BatchPlan, EpochCoverageAndDeterminism) {
    Rng rng(7);
    const Matrix q = testing::random_unit_rows(100, 6, rng);
    BatchPlan a = build_batch_plan(q, 8, 42);
    BatchPlan b = build_batch_plan(q, 8, 42);
    bool any_order_differs = false;
    for (std::uint64_t epoch = 0; epoch < 4; ++epoch) {
        shuffle_plan(a, 42, epoch);
        shuffle_plan(b, 42, epoch);
        EXPECT_EQ(a.batches(), b.batches());
        std::vector<std::uint32_t> seen;
        for (const auto& batch : a.batches()) {
            EXPECT_LE(batch.size(), 8u);
            seen.insert(seen.end(), batch.begin(), batch.end());
        }
        std::sort(seen.begin(), seen.end());
        for (std::uint32_t i = 0; i < 100; ++i) ASSERT_EQ(seen.at(i), i);
        BatchPlan other = a;
        shuffle_plan(other, 43, epoch);
        any_order_differs |= other.epoch_order != a.epoch_order;
    }
    EXPECT_TRUE(any_order_differs);
}

}  // namespace
}  // namespace prime
