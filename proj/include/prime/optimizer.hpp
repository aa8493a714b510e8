#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include "prime/params.hpp"

namespace prime {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Groups that never receive weight decay.
    std::set<ParamGroup> decay_exclusions{ParamGroup::Bias, ParamGroup::LayerNorm,
                                          ParamGroup::FreeVectors};
};

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(std::move(cfg)) {}

    /// Params and grads must list the same tensors in the same order.
    void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads, double lr,
              double weight_decay);

    std::uint64_t step_count() const noexcept { return step_; }
    const AdamWConfig& config() const noexcept { return cfg_; }
    bool decays(ParamGroup g) const { return !cfg_.decay_exclusions.contains(g); }

private:
    AdamWConfig cfg_;
    std::vector<Matrix> m_, v_;
    std::uint64_t step_ = 0;
};

}  // namespace prime
