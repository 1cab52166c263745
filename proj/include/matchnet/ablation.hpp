#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "matchnet/metrics.hpp"
#include "matchnet/pipeline.hpp"
#include "matchnet/training.hpp"

namespace matchnet {

/// Everything needed to train one model family on one fold.
struct RunSpec {
    std::string name;
    ModelSpec spec;
    TrainConfig train;
    AugmentConfig augment;
};

struct FoldRun {
    TrainResult trained;
    HorizonMetrics test;
    HorizonMetrics validation;
};

/// Builds the model with seed derive_seed(seed, 0), trains with
/// derive_seed(seed, 1), and scores the fold's test patients.
FoldRun run_fold(const FoldSeries& fold, const RunSpec& run, std::uint64_t seed);

struct FamilyResult {
    std::string name;
    std::vector<HorizonMetrics> folds;
    CVReport report;
};

/// Difference of mean metrics, `to` minus `from`, per horizon.
struct Gain {
    std::string from;
    std::string to;
    std::vector<double> auroc;
    std::vector<double> auprc;
};

struct AblationResult {
    std::vector<FamilyResult> families;
    std::vector<Gain> gains;  // consecutive pairs in the listed order
};

/// Trains every run on the same folds with the same per-fold seeds.
/// An empty `folds` list means every fold of the plan.
AblationResult ablation_run(const PreparedData& data, std::span<const RunSpec> runs, std::uint64_t seed,
                            std::span<const std::size_t> folds = {});

/// from,to,horizon_years,metric,delta
void write_gains_csv(std::ostream& out, std::span<const Gain> gains, double delta);

} // namespace matchnet
