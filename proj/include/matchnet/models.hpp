#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "matchnet/binio.hpp"
#include "matchnet/data.hpp"
#include "matchnet/optim.hpp"
#include "matchnet/tensor.hpp"

namespace matchnet {

/// Rungs of the ablation ladder, from a static perceptron to the dual-stream
/// network with clinician input.
enum class Family { Mlp, SMlp, STcn, MatchNet, MatchNetPlus };

std::string_view family_name(Family family);
std::optional<Family> parse_family(std::string_view name);

/// Architecture and geometry. Window, horizon and filter width are in grid steps.
struct ModelSpec {
    Family family = Family::MatchNet;
    std::size_t window_steps = 5;
    std::size_t horizon_steps = 5;
    std::size_t conv_layers = 1;
    std::size_t filters_main = 32;
    std::size_t filters_mask = 8;
    std::size_t filter_width = 5;
    std::size_t fc_layers = 1;
    std::size_t fc_width = 32;
    double dropout = 0.2;
    /// Extra output trained on the dummy tau = 0 target; never part of predictions.
    bool anchor_head = false;

    bool use_mask_stream() const { return family == Family::MatchNet || family == Family::MatchNetPlus; }
    bool use_diagnosis() const { return family == Family::MatchNetPlus; }
    bool is_convolutional() const { return family == Family::STcn || use_mask_stream(); }
    /// Time length left after the valid-mode convolution stack.
    std::size_t conv_output_steps() const;

    /// Throws SpecError when the structural rules of the family are violated.
    void validate() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Stacked model inputs: x and z are [batch x features x window], r is [batch x 3].
struct Batch {
    Tensor x;
    Tensor z;
    Tensor r;
    std::size_t size = 0;
};

Batch make_batch(std::span<const WindowInstance* const> items);
Batch make_batch(std::span<const WindowInstance> items);

class Model {
public:
    struct Output {
        Tensor probabilities;  // [batch x horizon_steps]
        std::optional<Tensor> anchor_probabilities;  // [batch x 1] when spec.anchor_head
    };

    /// Fan-in scaled uniform weights, zero biases.
    static Model build(const ModelSpec& spec, std::size_t num_features, std::size_t diag_dim,
                       std::uint64_t seed);

    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    /// `rng` may be null when not training or when dropout is zero.
    Output forward(const Batch& batch, bool training, Rng* rng) const;

    /// Failure probabilities F(t + k*delta | t, w) for k = 1..horizon_steps.
    std::vector<double> predict(const WindowInstance& instance) const;
    std::vector<std::vector<double>> predict(std::span<const WindowInstance> instances,
                                             std::size_t batch_size = 256) const;

    const ModelSpec& spec() const { return spec_; }
    std::size_t num_features() const { return num_features_; }
    std::size_t diag_dim() const { return diag_dim_; }

    std::span<Parameter> parameters() { return params_; }
    std::span<const Parameter> parameters() const { return params_; }
    Parameter& parameter(std::string_view name);
    std::size_t parameter_count() const;

    /// Copies parameter values from a model of identical layout.
    void load_parameter_values(const Model& other);

private:
    Model() = default;

    std::size_t add_param(std::string name, Shape shape, bool is_weight, std::size_t fan_in, Rng& rng);

    ModelSpec spec_;
    std::size_t num_features_ = 0;
    std::size_t diag_dim_ = 0;
    std::vector<Parameter> params_;

    struct Affine {
        std::size_t weight;
        std::size_t bias;
    };
    std::vector<Affine> conv_main_;
    std::vector<Affine> conv_mask_;
    std::vector<Affine> dense_;
    Affine head_{};
    std::optional<Affine> anchor_head_;

};

// ---------------------------------------------------------------------------
// Checkpoints

/// Everything `predict` needs to score raw patient records.
struct Checkpoint {
    Model model;
    FeatureSchema schema;
    NormStats norm_stats;
    double delta = 0.5;
    bool differenced = false;
};

inline constexpr std::string_view kCheckpointMagic = "MATCHNET-CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize(const Checkpoint& checkpoint);
/// Throws FormatError on bad magic, unsupported version or truncation.
Checkpoint deserialize(std::string_view bytes);

void write_model_spec(BinaryWriter& out, const ModelSpec& spec);
ModelSpec read_model_spec(BinaryReader& in);
void write_norm_stats(BinaryWriter& out, const NormStats& stats);
NormStats read_norm_stats(BinaryReader& in);
void write_schema(BinaryWriter& out, const FeatureSchema& schema);
FeatureSchema read_schema(BinaryReader& in);

} // namespace matchnet
