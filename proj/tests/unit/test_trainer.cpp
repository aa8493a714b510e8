#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "prime/trainer.hpp"

namespace prime {
namespace {

TensorRef ref(const char* name, Matrix& m, ParamGroup g) { return {name, &m, g}; }

TEST(AdamW, FirstStepMovesBySignOfGradient) {
    Matrix theta(1, 3, 0.5), g(1, 3);
    g.data = {0.2, -3.0, 1e-3};
    AdamW opt;
    opt.step({ref("w", theta, ParamGroup::Weight)}, {ref("w", g, ParamGroup::Weight)}, 0.01, 0.0);
    EXPECT_NEAR(theta(0, 0), 0.5 - 0.01, 1e-8);
    EXPECT_NEAR(theta(0, 1), 0.5 + 0.01, 1e-8);
    EXPECT_NEAR(theta(0, 2), 0.5 - 0.01, 1e-7);
    EXPECT_EQ(opt.step_count(), 1u);
}

TEST(AdamW, ZeroGradientIsPureDecay) {
    Matrix theta(2, 2, 1.5), g(2, 2);
    AdamW opt;
    opt.step({ref("w", theta, ParamGroup::Weight)}, {ref("w", g, ParamGroup::Weight)}, 0.1, 0.01);
    for (double v : theta.data) EXPECT_NEAR(v, 1.5 * (1 - 0.1 * 0.01), 1e-15);
}

TEST(AdamW, ExcludedGroupsAreNotDecayed) {
    Matrix bank(2, 2, 1.5), b(1, 2, 0.3), ln(1, 2, 1.0), g1(2, 2), g2(1, 2), g3(1, 2);
    const Matrix bank0 = bank, b0 = b, ln0 = ln;
    AdamW opt;
    opt.step({ref("bank", bank, ParamGroup::FreeVectors), ref("b", b, ParamGroup::Bias),
              ref("ln", ln, ParamGroup::LayerNorm)},
             {ref("bank", g1, ParamGroup::FreeVectors), ref("b", g2, ParamGroup::Bias),
              ref("ln", g3, ParamGroup::LayerNorm)},
             0.1, 0.01);
    EXPECT_EQ(bank.data, bank0.data);
    EXPECT_EQ(b.data, b0.data);
    EXPECT_EQ(ln.data, ln0.data);
}

TEST(AdamW, NonFiniteGradientNamesGroup) {
    Matrix theta(1, 1, 1.0), g(1, 1, std::nan(""));
    AdamW opt;
    try {
        opt.step({ref("bank", theta, ParamGroup::FreeVectors)}, {ref("bank", g, ParamGroup::FreeVectors)}, 0.1, 0.0);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Numeric);
        EXPECT_NE(std::string(e.what()).find("free_vectors"), std::string::npos);
    }
    EXPECT_EQ(theta(0, 0), 1.0);
}

TEST(AdamW, MatchesHandRolledRecurrence) {
    Matrix theta(1, 1, 0.7), g(1, 1);
    AdamW opt;
    double m = 0, v = 0, th = 0.7;
    const double grads[] = {0.3, -0.1, 0.25, 0.0, -0.4};
    for (int t = 1; t <= 5; ++t) {
        g(0, 0) = grads[t - 1];
        opt.step({ref("w", theta, ParamGroup::Weight)}, {ref("w", g, ParamGroup::Weight)}, 0.05, 0.01);
        m = 0.9 * m + 0.1 * grads[t - 1];
        v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        th -= 0.05 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * th);
        EXPECT_NEAR(theta(0, 0), th, 1e-14);
    }
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.encoder.dim = 16;
    cfg.encoder.vocab_size = 4096;
    cfg.batch_size = 8;
    cfg.epochs = 3;
    cfg.seed = 7;
    return cfg;
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.positives_per_query = 3;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.margin.gamma_min = 0.4;
    cfg.margin.gamma_max = 0.3;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.lr = -1e-3;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(TrainConfig, DefaultBankSize) {
    EXPECT_EQ(default_bank_size(1), 1u);
    EXPECT_EQ(default_bank_size(9), 4u);
    EXPECT_EQ(default_bank_size(16), 8u);
    EXPECT_EQ(default_bank_size(500), 128u);
}

TEST(Trainer, DecayExclusionAudit) {
    const Corpus c = testing::planted_corpus();
    Model m = initialize_model(c, small_config());
    const AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, TrainConfig{}.decay_exclusions});
    std::size_t decayed = 0;
    for (const auto& t : m.trainable()) {
        const bool is_bias = t.name.find("bias") != std::string::npos && t.name.find("ln") == std::string::npos;
        const bool is_ln = t.name.find("ln") != std::string::npos;
        const bool is_bank = t.value == &m.bank.bank;
        EXPECT_EQ(t.group == ParamGroup::Bias, is_bias) << t.name;
        EXPECT_EQ(t.group == ParamGroup::LayerNorm, is_ln) << t.name;
        EXPECT_EQ(t.group == ParamGroup::FreeVectors, is_bank) << t.name;
        EXPECT_EQ(opt.decays(t.group), !is_bias && !is_ln && !is_bank) << t.name;
        decayed += opt.decays(t.group);
    }
    // token table, projection, four attention matrices, two FFN matrices.
    EXPECT_EQ(decayed, 8u);
}

TEST(Trainer, InitialModelState) {
    const Corpus c = testing::planted_corpus();
    const Model m = initialize_model(c, small_config());
    EXPECT_EQ(m.num_labels(), 9u);
    EXPECT_EQ(m.bank.size(), 4u);
    for (std::uint32_t a : m.bank.assignment) EXPECT_LT(a, 4u);
    for (std::size_t l = 0; l < 9; ++l) EXPECT_NEAR(norm2(m.centroids.centroids.row(l)), 1.0, 1e-9);
}

TEST(Trainer, ZeroLearningRateFreezesParametersButNotCentroids) {
    const Corpus c = testing::planted_corpus();
    TrainConfig cfg = small_config();
    cfg.lr = 0.0;
    cfg.epochs = 1;
    const Model init = initialize_model(c, cfg);
    const TrainResult r = train(c, compute_propensities(c), cfg);
    Model trained = r.model;
    Model start = init;
    auto a = start.trainable();
    auto b = trained.trainable();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].value->data, b[t].value->data) << a[t].name;
    EXPECT_NE(trained.centroids.centroids.data, init.centroids.centroids.data);
    for (std::uint32_t n : trained.centroids.touched) EXPECT_GT(n, 0u);
}

TEST(Trainer, SameSeedSameCheckpointAcrossThreadCounts) {
    const Corpus c = testing::planted_corpus();
    const PropensityTable p = compute_propensities(c);
    TrainConfig cfg = small_config();
    const std::string a = serialize_checkpoint(train(c, p, cfg).model);
    const std::string b = serialize_checkpoint(train(c, p, cfg).model);
    cfg.threads = 4;
    const std::string d = serialize_checkpoint(train(c, p, cfg).model);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, d);
    cfg.seed = 8;
    EXPECT_NE(a, serialize_checkpoint(train(c, p, cfg).model));
}

TEST(Trainer, StepInvariantsAndPoolBound) {
    const Corpus c = testing::wide_corpus(200, 120, 3);
    TrainConfig cfg = small_config();
    cfg.epochs = 2;
    std::size_t steps = 0;
    TrainCallbacks cb;
    cb.on_step = [&](const LossReport& rep, const StepStats& st) {
        ++steps;
        EXPECT_TRUE(std::isfinite(rep.total));
        EXPECT_LE(st.batch_queries, cfg.batch_size);
        EXPECT_LE(st.labels_encoded, cfg.batch_size * cfg.positives_per_query);
    };
    const TrainResult r = train(c, compute_propensities(c), cfg, cb);
    EXPECT_EQ(steps, r.steps);
    EXPECT_EQ(r.epoch_reports.size(), 2u);
    Model m = r.model;
    for (const auto& t : m.trainable()) EXPECT_TRUE(t.value->all_finite()) << t.name;
    for (std::size_t l = 0; l < m.num_labels(); ++l)
        if (m.centroids.touched[l]) EXPECT_NEAR(norm2(m.centroids.centroids.row(l)), 1.0, 1e-6);
}

TEST(Trainer, RejectsEmptyPositiveSetsAndMismatchedPropensity) {
    const Corpus c = parse_corpus("q0\tl0\ta\nq1\t\tb\nq2\tl1\tc\n", "l0\tx\nl1\ty\n", {.allow_empty = true});
    EXPECT_THROW(train(c, compute_propensities(c), small_config()), Error);
    const Corpus ok = testing::planted_corpus();
    EXPECT_THROW(train(ok, compute_propensities(c), small_config()), Error);
}

TEST(Trainer, LossDecreasesOnPlantedCorpus) {
    const Corpus c = testing::planted_corpus();
    TrainConfig cfg;
    cfg.seed = 7;
    cfg.epochs = 10;
    const TrainResult r = train(c, compute_propensities(c), cfg);
    ASSERT_EQ(r.epoch_reports.size(), 10u);
    EXPECT_LT(r.epoch_reports[9].total, r.epoch_reports[0].total);
}

double easy_fraction(const LossReport& r) {
    return r.triplets ? static_cast<double>(r.regions[0]) / static_cast<double>(r.triplets) : 0.0;
}

TEST(Trainer, EasyFractionDriftsUpOnPlantedCorpus) {
    const Corpus c = testing::planted_corpus();
    int passing = 0;
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        TrainConfig cfg;
        cfg.seed = seed;
        const TrainResult r = train(c, compute_propensities(c), cfg);
        double early = 0, late = 0;
        for (std::size_t e = 0; e < 10; ++e) {
            early += easy_fraction(r.epoch_reports[e]);
            late += easy_fraction(r.epoch_reports[r.epoch_reports.size() - 1 - e]);
        }
        passing += late >= early;
    }
    EXPECT_GE(passing, 2);
}

}  // namespace
}  // namespace prime
