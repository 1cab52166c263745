#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "matchnet/rng.hpp"

namespace matchnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad();
};

} // namespace detail

/// Dense row-major array of doubles taking part in reverse-mode autodiff.
///
/// A Tensor is a cheap handle; copies share storage and graph position.
/// Operations on tensors that require gradients record a backward closure,
/// and `backward()` on a scalar result fills `grad()` of every reachable
/// tensor. Gradients accumulate until `zero_grad()`.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }

    std::span<const double> values() const { return node_->values; }
    std::span<double> mutable_values() { return node_->values; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    /// Sets grad to zeros of the tensor's shape (allocating if needed).
    void zero_grad();

    /// Same values, no graph history.
    Tensor detach() const;

    void backward() const;

    // Graph construction for operations defined outside this class.
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward_fn);
    detail::Node& node() const { return *node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node);

    std::shared_ptr<detail::Node> node_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[m x n] + bias[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);

/// Inverted dropout. Identity when `training` is false or rate is zero.
Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training);

/// Valid-mode temporal cross-correlation.
///
/// `input` is [channels_in x time] or batched [batch x channels_in x time],
/// `kernels` is [channels_out x channels_in x width], `bias` is [channels_out].
/// out[o][t] = bias[o] + sum_{c,k} kernels[o][c][k] * input[c][t + k].
Tensor conv1d_temporal(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// sum_j w_j * BCE(pred_j, target_j) / sum_j w_j, predictions clamped to
/// [eps, 1 - eps]. Entries with zero weight do not contribute.
Tensor binary_cross_entropy(const Tensor& predictions, std::span<const double> targets,
                            std::span<const double> weights, double eps = 1e-12);

} // namespace matchnet
