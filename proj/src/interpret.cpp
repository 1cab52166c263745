#include "matchnet/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "matchnet/errors.hpp"
#include "matchnet/log.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

namespace {

constexpr std::size_t kChunk = 256;

struct Chunk {
    Batch batch;
    std::vector<double> x0;  // pristine copies for restoring substituted cells
    std::vector<double> z0;
};

std::vector<Chunk> make_chunks(std::span<const WindowInstance> instances) {
    std::vector<Chunk> chunks;
    for (std::size_t s = 0; s < instances.size(); s += kChunk) {
        Chunk c;
        c.batch = make_batch(instances.subspan(s, std::min(kChunk, instances.size() - s)));
        const auto xv = c.batch.x.values();
        const auto zv = c.batch.z.values();
        c.x0.assign(xv.begin(), xv.end());
        c.z0.assign(zv.begin(), zv.end());
        chunks.push_back(std::move(c));
    }
    return chunks;
}

void check_feature(const Model& model, std::size_t feature) {
    if (feature >= model.num_features()) {
        throw ConfigError("feature index " + std::to_string(feature) + " out of range (model has " +
                          std::to_string(model.num_features()) + " features)");
    }
}

void check_horizon(const Model& model, std::size_t horizon) {
    if (horizon == 0 || horizon > model.spec().horizon_steps) {
        throw ConfigError("horizon " + std::to_string(horizon) + " outside 1.." +
                          std::to_string(model.spec().horizon_steps));
    }
}

/// Sets cells (feature, columns) of every instance in the chunk to `v`.
void substitute(Chunk& c, Stream stream, std::size_t feature, std::size_t col_begin, std::size_t col_end, double v) {
    auto vals = stream == Stream::Covariates ? c.batch.x.mutable_values() : c.batch.z.mutable_values();
    const std::size_t F = c.batch.x.dim(1);
    const std::size_t W = c.batch.x.dim(2);
    for (std::size_t b = 0; b < c.batch.size; ++b) {
        for (std::size_t j = col_begin; j < col_end; ++j) {
            vals[(b * F + feature) * W + j] = v;
        }
    }
}

void restore(Chunk& c) {
    auto xv = c.batch.x.mutable_values();
    auto zv = c.batch.z.mutable_values();
    std::copy(c.x0.begin(), c.x0.end(), xv.begin());
    std::copy(c.z0.begin(), c.z0.end(), zv.begin());
}

/// Sum over instances of the predicted probability for every horizon.
std::vector<double> summed_response(const Model& model, std::vector<Chunk>& chunks, bool training, Rng* rng) {
    std::vector<double> acc(model.spec().horizon_steps, 0.0);
    for (auto& c : chunks) {
        const auto fwd = model.forward(c.batch, training, rng);
        const auto p = fwd.probabilities.values();
        const std::size_t K = acc.size();
        for (std::size_t b = 0; b < c.batch.size; ++b) {
            for (std::size_t k = 0; k < K; ++k) {
                acc[k] += p[b * K + k];
            }
        }
    }
    return acc;
}

} // namespace

std::vector<double> observed_values(std::span<const WindowInstance> instances, std::size_t feature) {
    std::vector<double> out;
    for (const auto& inst : instances) {
        if (feature >= inst.x.rows) {
            throw ConfigError("feature index " + std::to_string(feature) + " out of range");
        }
        for (std::size_t j = 0; j < inst.x.cols; ++j) {
            if (inst.z(feature, j) == 0.0) {
                out.push_back(inst.x(feature, j));
            }
        }
    }
    return out;
}

std::vector<double> decile_grid(std::vector<double> values) {
    if (values.empty()) {
        return {};
    }
    std::sort(values.begin(), values.end());
    std::vector<double> grid;
    const double last = static_cast<double>(values.size() - 1);
    for (int q = 0; q <= 10; ++q) {
        grid.push_back(values[static_cast<std::size_t>(std::lround(q / 10.0 * last))]);
    }
    return grid;
}

DependenceCurve partial_dependence(const Model& model, std::span<const WindowInstance> instances,
                                   std::size_t feature, std::span<const double> grid, Stream stream) {
    if (instances.empty()) {
        throw DataError("partial dependence needs at least one instance");
    }
    check_feature(model, feature);
    auto chunks = make_chunks(instances);
    DependenceCurve curve;
    curve.feature = feature;
    curve.grid.assign(grid.begin(), grid.end());
    const double n = static_cast<double>(instances.size());
    for (double v : grid) {
        for (auto& c : chunks) {
            substitute(c, stream, feature, 0, model.spec().window_steps, v);
        }
        auto r = summed_response(model, chunks, false, nullptr);
        for (auto& x : r) {
            x /= n;
        }
        curve.response.push_back(std::move(r));
        for (auto& c : chunks) {
            restore(c);
        }
    }
    return curve;
}

std::optional<double> ols_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty()) {
        throw DimensionError("ols_slope: mismatched or empty inputs");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 1e-300)) {
        return std::nullopt;
    }
    return sxy / sxx;
}

SaliencyMap saliency_map(const Model& model, std::span<const WindowInstance> instances, std::size_t horizon,
                         Stream stream) {
    if (instances.empty()) {
        throw DataError("saliency map needs at least one instance");
    }
    check_horizon(model, horizon);
    const std::size_t F = model.num_features();
    const std::size_t W = model.spec().window_steps;
    SaliencyMap map;
    map.stream = stream;
    map.horizon = horizon;
    map.sample_size = instances.size();
    map.slopes = Matrix(F, W, 0.0);
    map.constant_feature.assign(F, 0);

    auto chunks = make_chunks(instances);
    const double n = static_cast<double>(instances.size());
    for (std::size_t f = 0; f < F; ++f) {
        const std::vector<double> grid =
            stream == Stream::Mask ? std::vector<double>{0.0, 1.0} : decile_grid(observed_values(instances, f));
        if (grid.empty() || *std::min_element(grid.begin(), grid.end()) == *std::max_element(grid.begin(), grid.end())) {
            map.constant_feature[f] = 1;
            continue;
        }
        std::vector<double> response(grid.size());
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t g = 0; g < grid.size(); ++g) {
                for (auto& c : chunks) {
                    substitute(c, stream, f, j, j + 1, grid[g]);
                }
                response[g] = summed_response(model, chunks, false, nullptr)[horizon - 1] / n;
                for (auto& c : chunks) {
                    restore(c);
                }
            }
            map.slopes(f, j) = ols_slope(grid, response).value_or(0.0);
        }
    }
    return map;
}

std::vector<ScatterPoint> output_scatter(const Model& model, std::span<const WindowInstance> instances,
                                         std::size_t feature, std::span<const double> grid, ScatterMode mode,
                                         std::size_t horizon, std::size_t mc_samples, Rng& dropout_rng) {
    if (mc_samples == 0) {
        throw ConfigError("output scatter needs at least one MC sample");
    }
    if (instances.empty()) {
        throw DataError("output scatter needs at least one instance");
    }
    check_feature(model, feature);
    check_horizon(model, horizon);
    if (mc_samples > 1 && !(model.spec().dropout > 0.0 && model.spec().fc_layers > 0)) {
        warn("output scatter: model has no active dropout, MC samples are identical");
    }
    const std::size_t W = model.spec().window_steps;
    const std::size_t col_begin = mode == ScatterMode::FinalValueOnly ? W - 1 : 0;
    auto chunks = make_chunks(instances);
    const double n = static_cast<double>(instances.size());
    std::vector<ScatterPoint> out;
    for (double v : grid) {
        for (auto& c : chunks) {
            substitute(c, Stream::Covariates, feature, col_begin, W, v);
        }
        std::vector<double> samples;
        for (std::size_t s = 0; s < mc_samples; ++s) {
            samples.push_back(summed_response(model, chunks, true, &dropout_rng)[horizon - 1] / n);
        }
        ScatterPoint p;
        p.value = v;
        for (double x : samples) {
            p.mean += x;
        }
        p.mean /= static_cast<double>(mc_samples);
        if (mc_samples > 1) {
            double ss = 0.0;
            for (double x : samples) {
                ss += (x - p.mean) * (x - p.mean);
            }
            p.mc_sd = std::sqrt(ss / static_cast<double>(mc_samples - 1));
        }
        out.push_back(p);
        for (auto& c : chunks) {
            restore(c);
        }
    }
    return out;
}

void write_saliency_csv(std::ostream& out, const SaliencyMap& map, std::span<const std::string> feature_names) {
    const std::size_t W = map.slopes.cols;
    out << "feature,constant";
    for (std::size_t j = 0; j < W; ++j) {
        out << ",t-" << (W - 1 - j);
    }
    out << '\n';
    for (std::size_t f = 0; f < map.slopes.rows; ++f) {
        out << (f < feature_names.size() ? feature_names[f] : "f" + std::to_string(f)) << ','
            << static_cast<int>(map.constant_feature[f]);
        for (std::size_t j = 0; j < W; ++j) {
            out << ',' << format_double(map.slopes(f, j));
        }
        out << '\n';
    }
}

void write_saliency_heatmap(std::ostream& out, const SaliencyMap& map, std::span<const std::string> feature_names) {
    static constexpr std::string_view kShades = " .:-=+*#%@";
    double peak = 0.0;
    for (double v : map.slopes.data) {
        peak = std::max(peak, std::abs(v));
    }
    std::size_t name_w = 0;
    for (std::size_t f = 0; f < map.slopes.rows; ++f) {
        name_w = std::max(name_w, f < feature_names.size() ? feature_names[f].size() : 4);
    }
    for (std::size_t f = 0; f < map.slopes.rows; ++f) {
        std::string name = f < feature_names.size() ? feature_names[f] : "f" + std::to_string(f);
        name.resize(name_w, ' ');
        out << name << " |";
        for (std::size_t j = 0; j < map.slopes.cols; ++j) {
            const double v = map.slopes(f, j);
            const double frac = peak > 0.0 ? std::abs(v) / peak : 0.0;
            const auto idx = static_cast<std::size_t>(std::lround(frac * static_cast<double>(kShades.size() - 1)));
            out << (v < 0.0 ? '-' : '+') << kShades[idx];
        }
        out << "|\n";
    }
}

} // namespace matchnet
