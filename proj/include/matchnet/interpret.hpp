#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "matchnet/models.hpp"

namespace matchnet {

enum class Stream { Covariates, Mask };

/// Values of `feature` in observed (z = 0) window cells.
std::vector<double> observed_values(std::span<const WindowInstance> instances, std::size_t feature);

/// Empirical quantiles at 0, 0.1, ..., 1 (nearest rank, so every point is an
/// observed value). Empty input gives an empty grid.
std::vector<double> decile_grid(std::vector<double> values);

struct DependenceCurve {
    std::size_t feature = 0;
    std::vector<double> grid;
    std::vector<std::vector<double>> response;  // [grid point][horizon], mean over instances
};

/// Average prediction with the whole window row of `feature` set to each grid value.
/// Throws DataError on an empty instance set.
DependenceCurve partial_dependence(const Model& model, std::span<const WindowInstance> instances,
                                   std::size_t feature, std::span<const double> grid,
                                   Stream stream = Stream::Covariates);

/// Least-squares slope of y on x; nullopt when x is constant.
std::optional<double> ols_slope(std::span<const double> x, std::span<const double> y);

struct SaliencyMap {
    Stream stream = Stream::Covariates;
    std::size_t horizon = 1;  // in steps
    std::size_t sample_size = 0;
    std::string estimator = "ols";
    Matrix slopes;  // features x window_steps
    std::vector<std::uint8_t> constant_feature;  // 1 where the grid is degenerate and slopes are 0
};

/// Per-cell partial dependence slopes at horizon `horizon` (1-based steps).
/// Covariate cells use each feature's decile grid, mask cells the grid {0, 1}.
SaliencyMap saliency_map(const Model& model, std::span<const WindowInstance> instances, std::size_t horizon,
                         Stream stream = Stream::Covariates);

enum class ScatterMode { FinalValueOnly, AllValues };

struct ScatterPoint {
    double value = 0.0;
    double mean = 0.0;  // mean response over instances and MC samples
    double mc_sd = 0.0;  // sd over MC samples of the instance-averaged response
};

/// MC dropout response to substituted values of `feature` at `horizon`.
std::vector<ScatterPoint> output_scatter(const Model& model, std::span<const WindowInstance> instances,
                                         std::size_t feature, std::span<const double> grid, ScatterMode mode,
                                         std::size_t horizon, std::size_t mc_samples, Rng& dropout_rng);

void write_saliency_csv(std::ostream& out, const SaliencyMap& map, std::span<const std::string> feature_names);
/// Text heatmap with one row per feature, shading by |slope| relative to the maximum.
void write_saliency_heatmap(std::ostream& out, const SaliencyMap& map, std::span<const std::string> feature_names);

} // namespace matchnet
