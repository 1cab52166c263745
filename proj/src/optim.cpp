#include "matchnet/optim.hpp"

#include <cmath>

#include "matchnet/errors.hpp"

namespace matchnet {

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.learning_rate >= 0.0) || config_.l1 < 0.0 || config_.l2 < 0.0) {
        throw ConfigError("optimizer: learning rate and penalties must be non-negative");
    }
}

void zero_grad(std::span<Parameter> params) {
    for (auto& p : params) {
        p.tensor.zero_grad();
    }
}

void Optimizer::step(std::span<Parameter> params) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) {
            throw ContractError("optimizer step: parameter '" + p.name + "' has no gradient");
        }
    }
    const bool adam = config_.kind == OptimizerKind::Adam;
    if (adam && m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.tensor.size(), 0.0);
            v_.emplace_back(p.tensor.size(), 0.0);
        }
    }
    if (adam && m_.size() != params.size()) {
        throw ContractError("optimizer step: parameter list changed between steps");
    }
    ++steps_;

    const double lr = config_.learning_rate;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(steps_));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        auto w = t.mutable_values();
        const auto g = t.grad();
        const bool penalize = params[i].is_weight && (config_.l1 > 0.0 || config_.l2 > 0.0);
        if (adam && m_[i].size() != w.size()) {
            throw ContractError("optimizer step: moment buffer shape mismatch for '" +
                                params[i].name + "'");
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            double grad = g[j];
            if (penalize) {
                const double sign = w[j] > 0.0 ? 1.0 : (w[j] < 0.0 ? -1.0 : 0.0);
                grad += config_.l1 * sign + 2.0 * config_.l2 * w[j];
            }
            if (adam) {
                m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * grad;
                v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * grad * grad;
                const double m_hat = m_[i][j] / bias1;
                const double v_hat = v_[i][j] / bias2;
                w[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            } else {
                w[j] -= lr * grad;
            }
        }
        t.zero_grad();
    }
}

} // namespace matchnet
