#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matchnet/data.hpp"

namespace matchnet {

class Model;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. nullopt when either class is absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Average precision, sum over recall steps of delta-recall times precision,
/// with tied scores swept as one block. nullopt when there are no positives.
std::optional<double> auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct HorizonScore {
    std::optional<double> auroc;
    std::optional<double> auprc;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

/// One entry per horizon k = 1..K, over defined, visit-valid labels only.
struct HorizonMetrics {
    std::vector<HorizonScore> horizons;
};

HorizonMetrics evaluate_predictions(std::span<const WindowInstance> instances,
                                    std::span<const std::vector<double>> predictions);
HorizonMetrics evaluate(const Model& model, std::span<const WindowInstance> instances);

/// Weighted sum of per-horizon AUROC and AUPRC. Empty weight vectors mean all
/// ones; undefined metrics contribute nothing.
double composite_score(const HorizonMetrics& metrics, std::span<const double> beta,
                       std::span<const double> gamma);

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation over folds, 0 for one fold
    std::size_t n = 0;  // folds where the metric was defined
};

struct CVReport {
    std::size_t num_folds = 0;
    std::vector<MetricSummary> auroc;  // per horizon
    std::vector<MetricSummary> auprc;
};

/// Averages per-fold metrics. Undefined fold metrics are skipped with a warning.
CVReport aggregate(std::span<const HorizonMetrics> folds);

struct NamedReport {
    std::string name;
    CVReport report;
};

/// Long CSV: model,horizon_years,metric,mean,sd,n_folds.
void write_report_csv(std::ostream& out, std::span<const NamedReport> reports, double delta);

/// Aligned table, one row per model, one "mean ± sd" column per horizon and metric.
void write_report_table(std::ostream& out, std::span<const NamedReport> reports, double delta);

} // namespace matchnet
