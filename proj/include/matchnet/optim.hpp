#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "matchnet/tensor.hpp"

namespace matchnet {

/// A learnable tensor. Elastic-net penalties apply only when `is_weight`.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool is_weight = true;
};

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double l1 = 0.0;
    double l2 = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    /// Applies one update from the populated gradients, then clears them.
    /// The elastic-net term l1*sign(w) + 2*l2*w is added to weight gradients first.
    void step(std::span<Parameter> params);

    const OptimizerConfig& config() const { return config_; }
    std::int64_t step_count() const { return steps_; }
    /// Adam moment buffers, one per parameter once the first step has run.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    OptimizerConfig config_;
    std::int64_t steps_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

void zero_grad(std::span<Parameter> params);

} // namespace matchnet
