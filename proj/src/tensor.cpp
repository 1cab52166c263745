#include "matchnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "matchnet/errors.hpp"

namespace matchnet {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

void detail::Node::ensure_grad() {
    if (grad.size() != values.size()) {
        grad.assign(values.size(), 0.0);
    }
}

namespace {

using detail::Node;

void check_positive_dims(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
        }
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

// Accumulates into parent i if it participates in differentiation.
Node* grad_target(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    if (!p.requires_grad) {
        return nullptr;
    }
    p.ensure_grad();
    return &p;
}

} // namespace

Tensor::Tensor() : node_(std::make_shared<Node>()) {
    node_->shape = {1};
    node_->values = {0.0};
}

Tensor::Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
    check_positive_dims(shape);
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor of shape " + shape_to_string(shape) + " needs " +
                             std::to_string(shape_size(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(shape()));
    }
    return node_->shape[axis];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item() on non-scalar tensor " + shape_to_string(shape()));
    }
    return node_->values[0];
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->values.size(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(node_->shape, node_->values, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    const bool needs_grad = std::any_of(parents.begin(), parents.end(),
                                        [](const Tensor& p) { return p.requires_grad(); });
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) {
            node->parents.push_back(p.node_);
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            shape_to_string(shape()));
    }
    if (!node_->requires_grad) {
        throw ContractError("backward() on a tensor that does not require gradients");
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes start from zero; leaves keep accumulating.
    for (Node* n : order) {
        if (n->backward_fn) {
            n->grad.assign(n->values.size(), 0.0);
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) {
            (*it)->backward_fn(**it);
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) {
                continue;
            }
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] += aip * brow[j];
            }
        }
    }
    return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto& g = self.grad;
        const auto& av = self.parents[0]->values;
        const auto& bv = self.parents[1]->values;
        if (Node* ga = grad_target(self, 0)) {
            // dA = dOut * B^T
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += g[i * n + j] * bv[p * n + j];
                    }
                    ga->grad[i * k + p] += acc;
                }
            }
        }
        if (Node* gb = grad_target(self, 1)) {
            // dB = A^T * dOut
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) {
                        continue;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        gb->grad[p * n + j] += aip * g[i * n + j];
                    }
                }
            }
        }
    });
}

namespace {

template <typename Fwd, typename DA, typename DB>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
    require_same_shape(a, b, name);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fwd(av[i], bv[i]);
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [da, db](Node& self) {
        const auto& x = self.parents[0]->values;
        const auto& y = self.parents[1]->values;
        if (Node* ga = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga->grad[i] += self.grad[i] * da(x[i], y[i]);
            }
        }
        if (Node* gb = grad_target(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb->grad[i] += self.grad[i] * db(x[i], y[i]);
            }
        }
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) {
        v *= factor;
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
        if (Node* ga = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga->grad[i] += factor * self.grad[i];
            }
        }
    });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0)) {
        throw DimensionError("add_row: cannot broadcast " + shape_to_string(bias.shape()) +
                             " over " + shape_to_string(x.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.values().begin(), x.values().end());
    const auto bv = bias.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bv[j];
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [m, n](Node& self) {
        if (Node* gx = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx->grad[i] += self.grad[i];
            }
        }
        if (Node* gb = grad_target(self, 1)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    gb->grad[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    const auto av = a.values();
    const double total = std::accumulate(av.begin(), av.end(), 0.0);
    return Tensor::make_result({1}, {total}, {a}, [](Node& self) {
        if (Node* ga = grad_target(self, 0)) {
            for (auto& g : ga->grad) {
                g += self.grad[0];
            }
        }
    });
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::log(av[i]);
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        if (Node* ga = grad_target(self, 0)) {
            const auto& x = ga->values;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga->grad[i] += self.grad[i] / x[i];
            }
        }
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] > 0.0 ? av[i] : 0.0;
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        if (Node* ga = grad_target(self, 0)) {
            const auto& x = ga->values;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (x[i] > 0.0) {
                    ga->grad[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        // Branches keep exp() from overflowing for large |x|.
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        if (Node* ga = grad_target(self, 0)) {
            const auto& y = self.values;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga->grad[i] += self.grad[i] * y[i] * (1.0 - y[i]);
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_positive_dims(shape);
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                             shape_to_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return Tensor::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
        if (Node* ga = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga->grad[i] += self.grad[i];
            }
        }
    });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) {
            ok = d == axis || s[d] == first[d];
        }
        if (!ok) {
            throw DimensionError("concat: shape " + shape_to_string(s) + " does not match " +
                                 shape_to_string(first) + " off axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
    }

    // View each tensor as [outer x (axis_len * inner)] blocks.
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) {
        outer *= first[d];
    }
    for (std::size_t d = axis + 1; d < first.size(); ++d) {
        inner *= first[d];
    }
    std::vector<std::size_t> chunk(parts.size());
    std::size_t out_chunk = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        chunk[i] = parts[i].shape()[axis] * inner;
        out_chunk += chunk[i];
    }

    std::vector<double> out(outer * out_chunk);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto v = parts[i].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk[i]), chunk[i],
                        out.begin() + static_cast<std::ptrdiff_t>(o * out_chunk + offset));
        }
        offset += chunk[i];
    }

    std::vector<Tensor> parents(parts.begin(), parts.end());
    return Tensor::make_result(std::move(out_shape), std::move(out), std::move(parents),
                               [outer, out_chunk, chunk](Node& self) {
                                   std::size_t off = 0;
                                   for (std::size_t i = 0; i < chunk.size(); ++i) {
                                       if (Node* gp = grad_target(self, i)) {
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               for (std::size_t j = 0; j < chunk[i]; ++j) {
                                                   gp->grad[o * chunk[i] + j] +=
                                                       self.grad[o * out_chunk + off + j];
                                               }
                                           }
                                       }
                                       off += chunk[i];
                                   }
                               });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ContractError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) {
        return a;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(a.size());
    for (auto& m : mask) {
        m = uniform01(rng) < rate ? 0.0 : keep_scale;
    }
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * mask[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a},
                               [mask = std::move(mask)](Node& self) {
                                   if (Node* ga = grad_target(self, 0)) {
                                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                           ga->grad[i] += self.grad[i] * mask[i];
                                       }
                                   }
                               });
}

Tensor conv1d_temporal(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    const bool batched = input.rank() == 3;
    if (!(input.rank() == 2 || batched) || kernels.rank() != 3 || bias.rank() != 1) {
        throw DimensionError("conv1d_temporal: expected input [C x T] or [B x C x T], kernels "
                             "[O x C x L], bias [O]; got " +
                             shape_to_string(input.shape()) + ", " +
                             shape_to_string(kernels.shape()) + ", " +
                             shape_to_string(bias.shape()));
    }
    const std::size_t batch = batched ? input.dim(0) : 1;
    const std::size_t cin = input.dim(batched ? 1 : 0);
    const std::size_t time = input.dim(batched ? 2 : 1);
    const std::size_t cout = kernels.dim(0);
    const std::size_t width = kernels.dim(2);
    if (kernels.dim(1) != cin || bias.dim(0) != cout) {
        throw DimensionError("conv1d_temporal: channel mismatch between input " +
                             shape_to_string(input.shape()) + ", kernels " +
                             shape_to_string(kernels.shape()) + " and bias " +
                             shape_to_string(bias.shape()));
    }
    if (time < width) {
        throw DimensionError("conv1d_temporal: window too short, time " + std::to_string(time) +
                             " < filter width " + std::to_string(width));
    }
    const std::size_t tout = time - width + 1;

    std::vector<double> out(batch * cout * tout);
    const auto x = input.values();
    const auto w = kernels.values();
    const auto bv = bias.values();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xb = x.data() + b * cin * time;
        for (std::size_t o = 0; o < cout; ++o) {
            double* yo = out.data() + (b * cout + o) * tout;
            std::fill_n(yo, tout, bv[o]);
            for (std::size_t c = 0; c < cin; ++c) {
                const double* xc = xb + c * time;
                const double* wk = w.data() + (o * cin + c) * width;
                for (std::size_t k = 0; k < width; ++k) {
                    const double wv = wk[k];
                    for (std::size_t t = 0; t < tout; ++t) {
                        yo[t] += wv * xc[t + k];
                    }
                }
            }
        }
    }

    Shape out_shape = batched ? Shape{batch, cout, tout} : Shape{cout, tout};
    return Tensor::make_result(
        std::move(out_shape), std::move(out), {input, kernels, bias},
        [batch, cin, time, cout, width, tout](Node& self) {
            const auto& g = self.grad;
            const auto& x = self.parents[0]->values;
            const auto& w = self.parents[1]->values;
            Node* gx = grad_target(self, 0);
            Node* gw = grad_target(self, 1);
            Node* gb = grad_target(self, 2);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < cout; ++o) {
                    const double* go = g.data() + (b * cout + o) * tout;
                    if (gb) {
                        for (std::size_t t = 0; t < tout; ++t) {
                            gb->grad[o] += go[t];
                        }
                    }
                    for (std::size_t c = 0; c < cin; ++c) {
                        const std::size_t xoff = (b * cin + c) * time;
                        const std::size_t woff = (o * cin + c) * width;
                        for (std::size_t k = 0; k < width; ++k) {
                            double acc = 0.0;
                            const double wv = w[woff + k];
                            for (std::size_t t = 0; t < tout; ++t) {
                                acc += go[t] * x[xoff + t + k];
                                if (gx) {
                                    gx->grad[xoff + t + k] += go[t] * wv;
                                }
                            }
                            if (gw) {
                                gw->grad[woff + k] += acc;
                            }
                        }
                    }
                }
            }
        });
}

Tensor binary_cross_entropy(const Tensor& predictions, std::span<const double> targets,
                            std::span<const double> weights, double eps) {
    if (targets.size() != predictions.size() || weights.size() != predictions.size()) {
        throw DimensionError("binary_cross_entropy: " + std::to_string(predictions.size()) +
                             " predictions, " + std::to_string(targets.size()) + " targets, " +
                             std::to_string(weights.size()) + " weights");
    }
    const auto p = predictions.values();
    double weight_total = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (weights[i] == 0.0) {
            continue;
        }
        const double f = std::clamp(p[i], eps, 1.0 - eps);
        const double s = targets[i];
        loss += weights[i] * -(s * std::log(f) + (1.0 - s) * std::log(1.0 - f));
        weight_total += weights[i];
    }
    if (weight_total <= 0.0) {
        throw ContractError("binary_cross_entropy: no weighted terms");
    }
    std::vector<double> t(targets.begin(), targets.end());
    std::vector<double> w(weights.begin(), weights.end());
    return Tensor::make_result(
        {1}, {loss / weight_total}, {predictions},
        [t = std::move(t), w = std::move(w), weight_total, eps](Node& self) {
            if (Node* gp = grad_target(self, 0)) {
                const auto& p = gp->values;
                const double g = self.grad[0] / weight_total;
                for (std::size_t i = 0; i < p.size(); ++i) {
                    if (w[i] == 0.0) {
                        continue;
                    }
                    const double f = std::clamp(p[i], eps, 1.0 - eps);
                    gp->grad[i] += g * w[i] * (-(t[i] / f) + (1.0 - t[i]) / (1.0 - f));
                }
            }
        });
}

} // namespace matchnet
