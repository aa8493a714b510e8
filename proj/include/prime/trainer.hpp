#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/losses.hpp"
#include "prime/model.hpp"
#include "prime/optimizer.hpp"

namespace prime {

struct TrainConfig {
    double lr = 0.01;
    double weight_decay = 0.01;
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    std::size_t positives_per_query = 2;
    MarginConfig margin;
    LossMode loss_mode = LossMode::Dynamic;
    LossTerms loss_terms = LossTerms::Full;
    double alpha = 0.95;
    /// 0 picks the largest power of two <= max(1, L / 2).
    std::size_t bank_size = 0;
    std::uint64_t seed = 0;
    std::set<ParamGroup> decay_exclusions{ParamGroup::Bias, ParamGroup::LayerNorm,
                                          ParamGroup::FreeVectors};
    EncoderConfig encoder;
    /// 0 means 4 * dim.
    std::size_t ffn_dim = 0;
    double dropout = 0.1;
    /// Epochs between query re-clustering for the batch plan.
    std::size_t refresh_period = 10;
    /// Linear warmup length in steps; 0 disables it.
    std::size_t warmup_steps = 0;
    unsigned threads = 1;

    /// Throws Usage on an invalid combination.
    void validate() const;
    std::size_t resolved_ffn_dim() const { return ffn_dim == 0 ? 4 * encoder.dim : ffn_dim; }
};

/// Largest power of two <= max(1, num_labels / 2).
std::size_t default_bank_size(std::size_t num_labels);

struct StepStats {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::size_t batch_queries = 0;
    /// Distinct labels passed through the encoder in this step.
    std::size_t labels_encoded = 0;
    double lr = 0.0;
};

struct TrainCallbacks {
    std::function<void(const LossReport&, const StepStats&)> on_step;
    /// Mean of the step reports of one epoch (regions and triplets are summed).
    std::function<void(const LossReport&)> on_epoch;
};

struct TrainResult {
    Model model;
    std::vector<LossReport> epoch_reports;
    std::uint64_t steps = 0;
};

/// Builds the initial model state for `corpus`: encoder and prototype network
/// init, centroids set to label text embeddings, bank assignment by balanced
/// 2-means over those embeddings.
Model initialize_model(const Corpus& corpus, const TrainConfig& cfg);

TrainResult train(const Corpus& corpus, const PropensityTable& propensity, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks = {});

}  // namespace prime
