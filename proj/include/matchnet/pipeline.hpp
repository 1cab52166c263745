#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "matchnet/data.hpp"

namespace matchnet {

/// Normalized, imputed grid series of every patient for one fold, with the
/// fold's roles. Statistics come from the fold's training patients only.
struct FoldSeries {
    std::size_t fold = 0;
    NormStats stats;
    std::vector<GridSeries> series;  // dataset order
    std::vector<Role> roles;  // aligned with `series`
};

/// discretize -> [difference] -> normalize -> impute for one fold.
FoldSeries prepare_fold(const Dataset& dataset, const FoldPlan& plan, std::size_t fold, double delta,
                        bool differenced = false);

struct InstanceSets {
    std::vector<WindowInstance> train;  // augmented
    std::vector<WindowInstance> validation;
    std::vector<WindowInstance> test;
};

InstanceSets make_instance_sets(const FoldSeries& fold, const WindowConfig& window,
                                const AugmentConfig& augment);

/// Everything `prepare` persists: the fold plan and per-fold series.
struct PreparedData {
    FeatureSchema schema;
    double delta = 0.5;
    bool differenced = false;
    std::uint64_t seed = 0;
    FoldPlan plan;
    std::vector<FoldSeries> folds;
};

PreparedData prepare(const Dataset& dataset, double delta, std::size_t num_folds, std::uint64_t seed,
                     bool differenced = false);

inline constexpr std::string_view kPreparedMagic = "MATCHNET-PREP";
inline constexpr std::uint32_t kPreparedVersion = 1;

std::string serialize(const PreparedData& data);
/// Throws FormatError on bad magic, unsupported version or truncation.
PreparedData deserialize_prepared(std::string_view bytes);

} // namespace matchnet
