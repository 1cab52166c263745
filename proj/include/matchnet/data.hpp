#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matchnet/rng.hpp"

namespace matchnet {

/// Row-major dense matrix used for grid series and window slices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

// ---------------------------------------------------------------------------
// Raw records

/// Column layout of a dataset. Longitudinal features are measured per visit;
/// static features are constant per patient.
struct FeatureSchema {
    std::vector<std::string> longitudinal;
    std::vector<std::string> static_numeric;
    std::vector<std::string> static_categorical;

    std::size_t numeric_count() const { return longitudinal.size() + static_numeric.size(); }
    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

struct Visit {
    double time = 0.0;  // years since baseline
    std::vector<std::optional<double>> measurements;  // aligned with schema.longitudinal
    std::optional<std::string> diagnosis;
};

struct PatientRecord {
    std::string patient_id;
    std::vector<std::optional<double>> static_numeric;
    std::vector<std::optional<std::string>> static_categorical;
    std::vector<Visit> visits;  // strictly increasing time
    double observed_time = 0.0;  // T_surv if event_observed, else T_cens
    bool event_observed = false;
    bool baseline_event = false;
};

struct Dataset {
    FeatureSchema schema;
    std::vector<PatientRecord> patients;
};

/// Throws DataError when visit times are negative or not strictly increasing.
void validate_record(const PatientRecord& record, const FeatureSchema& schema);

// ---------------------------------------------------------------------------
// Grid series

struct GridSeries {
    std::string patient_id;
    double delta = 0.5;
    std::size_t num_steps = 0;
    /// features x steps. Rows: longitudinal, static numeric, then one-hot
    /// categorical columns once normalized. NaN marks missing before impute.
    Matrix covariates;
    Matrix mask;  // 1 where no measurement mapped to the cell
    std::vector<std::uint8_t> label_valid;  // 1 where a recorded visit maps to the step
    std::optional<std::size_t> event_step;
    std::vector<std::optional<std::string>> diagnosis_per_step;
    std::vector<std::optional<std::string>> static_categorical;  // consumed by normalization
    bool baseline_event = false;

    /// Last anchor step, t_i / delta.
    std::size_t last_step() const { return num_steps - 1; }
};

/// Grid step for a timestamp: nearest step, ties toward the later step.
std::size_t grid_step(double time, double delta);

/// Maps visits onto the delta grid. Within one (feature, step) cell the
/// latest-timestamped measurement wins. Visits past the observed time are dropped.
GridSeries discretize(const PatientRecord& record, const FeatureSchema& schema, double delta);

/// Zero-order hold forward, backward extrapolation before the first
/// observation, `never_observed_fill` for rows with no observation. Mask untouched.
GridSeries impute(const GridSeries& series, double never_observed_fill = 0.0);

/// First differences along time; first column zero; masks OR-ed pairwise.
GridSeries difference_transform(const GridSeries& series);

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
    std::vector<std::string> numeric_names;
    std::vector<double> means;
    std::vector<double> sds;  // population standard deviation
    std::vector<std::string> categorical_names;
    std::vector<std::vector<std::string>> categories;  // sorted, per categorical feature

    std::size_t encoded_width() const;
    std::vector<std::string> encoded_names() const;
    friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Statistics over observed cells of the training series. Static numeric
/// features count once per patient.
NormStats fit_norm_stats(const FeatureSchema& schema, std::span<const GridSeries> training);

/// (x - mean) / sd on numeric rows (0 when sd == 0), then appends one-hot rows
/// for each categorical feature. Unknown categories encode as zeros and warn.
GridSeries apply_normalization(const GridSeries& series, const NormStats& stats);

struct NormalizedSet {
    std::vector<GridSeries> series;
    NormStats stats;
};

/// Fits on the series flagged in `is_training` and applies to all of them.
NormalizedSet normalize(const FeatureSchema& schema, std::span<const GridSeries> series,
                        std::span<const std::uint8_t> is_training);

// ---------------------------------------------------------------------------
// Diagnosis

enum class Diagnosis : std::uint8_t { Normal = 0, MildImpairment = 1, Dementia = 2 };
inline constexpr std::size_t kDiagnosisDim = 3;

/// "NL", "MCI", "AD", or a transition "X to Y" collapsed to its source state X.
std::optional<Diagnosis> parse_diagnosis(const std::string& text);

// ---------------------------------------------------------------------------
// Windows

enum class Label : std::int8_t { Undefined = -1, Negative = 0, Positive = 1 };

struct WindowInstance {
    std::string patient_id;
    std::size_t anchor_step = 0;
    Matrix x;  // features x window_steps, window (t - w, t]
    Matrix z;  // same shape, 1 = missing
    std::vector<double> r;  // one-hot most recent diagnosis at or before t (zeros if none)
    std::vector<Label> labels;  // labels[k-1]: event by t + k*delta
    std::vector<std::uint8_t> label_valid;  // target step is a recorded visit
    bool event_at_anchor = false;  // target of the dummy tau = 0 term
    bool anchor_target = false;  // dummy tau = 0 term enabled
    double weight = 1.0;
    std::size_t patient_steps = 0;  // t_i / delta of the source patient
    bool is_synthetic_duplicate = false;

    bool counts(std::size_t k) const {
        return labels[k] != Label::Undefined && label_valid[k] != 0;
    }
    /// At least one defined label equal to 1.
    bool is_positive() const;
};

struct WindowConfig {
    std::size_t window_steps = 5;
    std::size_t horizon_steps = 5;
};

/// One instance per anchor step 0..t_i of an imputed, normalized series.
/// Horizons beyond min(t_i - t, tau_max) are Undefined. Window cells before
/// step 0 repeat step 0 and are flagged missing in the mask.
std::vector<WindowInstance> extract_windows(const GridSeries& series, const WindowConfig& config);

/// Same, with window and horizon given in years (must be multiples of delta).
std::vector<WindowInstance> extract_windows(const GridSeries& series, double window_years,
                                            double tau_max_years);

struct AugmentConfig {
    std::size_t oversample_ratio = 0;  // 0 = none; otherwise one of 1, 2, 3, 5, 10
    bool label_forwarding = false;
    bool dummy_zero_events = false;
};

bool is_valid_oversample_ratio(std::size_t ratio);

/// Training-set augmentation: label forwarding, dummy tau = 0 targets, and
/// duplication of positive instances (appended after the originals).
std::vector<WindowInstance> augment(std::vector<WindowInstance> instances,
                                    const AugmentConfig& config);

// ---------------------------------------------------------------------------
// Folds

enum class Role : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

struct FoldSubject {
    std::string patient_id;
    bool positive = false;
    bool baseline_event = false;
};

struct FoldPlan {
    std::size_t num_folds = 5;
    std::vector<std::string> patient_ids;
    std::vector<std::uint8_t> positive;
    std::vector<std::vector<Role>> roles;  // [fold][patient]
    bool stratified = true;

    std::vector<std::size_t> members(std::size_t fold, Role role) const;
    friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Patient-level folds: each fold tests one stratified group and splits the
/// rest 3:1 into train and validation. Baseline-event patients only train.
FoldPlan make_folds(std::span<const FoldSubject> subjects, std::size_t num_folds, Rng& rng);

std::vector<FoldSubject> fold_subjects(const Dataset& dataset);

} // namespace matchnet
