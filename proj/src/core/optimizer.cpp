#include "prime/optimizer.hpp"

#include <cmath>

namespace prime {

const char* to_string(ParamGroup g) noexcept {
    switch (g) {
        case ParamGroup::Weight: return "weight";
        case ParamGroup::Bias: return "bias";
        case ParamGroup::LayerNorm: return "layernorm";
        case ParamGroup::FreeVectors: return "free_vectors";
    }
    return "?";
}

void AdamW::step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                 double lr, double weight_decay) {
    if (params.size() != grads.size()) fail(ErrorKind::Usage, "AdamW: parameter/gradient count mismatch");
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!params[t].value->same_shape(*grads[t].value))
            fail(ErrorKind::Usage, "AdamW: shape mismatch for " + params[t].name);
        if (!grads[t].value->all_finite())
            fail(ErrorKind::Numeric, "non-finite gradient in parameter group '" +
                                         std::string(to_string(params[t].group)) + "' (" +
                                         params[t].name + ")");
    }
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.value->rows, p.value->cols);
            v_.emplace_back(p.value->rows, p.value->cols);
        }
    } else if (m_.size() != params.size()) {
        fail(ErrorKind::Usage, "AdamW: parameter set changed between steps");
    }

    ++step_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t t = 0; t < params.size(); ++t) {
        const double wd = decays(params[t].group) ? weight_decay : 0.0;
        auto& theta = params[t].value->data;
        const auto& g = grads[t].value->data;
        auto& m = m_[t].data;
        auto& v = v_[t].data;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            theta[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * theta[i]);
        }
    }
}

}  // namespace prime
