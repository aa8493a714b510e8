#pragma once

#include <string>
#include <vector>

#include "prime/util.hpp"

namespace prime {

/// Optimizer parameter groups; weight decay can be switched off per group.
enum class ParamGroup { Weight, Bias, LayerNorm, FreeVectors };

const char* to_string(ParamGroup g) noexcept;

struct TensorRef {
    std::string name;
    Matrix* value;
    ParamGroup group;
};

struct ConstTensorRef {
    std::string name;
    const Matrix* value;
    ParamGroup group;
};

}  // namespace prime
