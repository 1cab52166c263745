#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "matchnet/data.hpp"

namespace matchnet {

/// Synthetic cohort with a latent decline process, a logistic discrete-time
/// hazard on feature levels and recent changes, and risk-dependent missingness.
struct GenConfig {
    std::size_t n_patients = 2000;
    double delta = 0.5;
    double max_followup = 10.0;  // years, multiple of delta
    std::size_t n_numeric = 4;  // longitudinal features
    std::size_t n_static = 1;  // static numeric features
    std::size_t n_categorical = 1;  // static categorical features, three levels each

    // Hazard: logit h_t = baseline_logodds + risk_t, where risk_t is
    //   sum_f level_f * (-L_ft)
    // + sum_f trend_f * sum_{s in [t - lag, t)} max(0, L_fs - L_f,s+1)
    // + frailty + static effects.
    double baseline_logodds = -12.5;
    double level_coef = 0.0;  // used for every feature when level_coefs is empty
    double trend_coef = 1.5;
    std::vector<double> level_coefs;
    std::vector<double> trend_coefs;
    std::size_t trend_lag = 5;  // steps
    double frailty_sd = 1.5;
    double static_coef = 0.25;

    // Latent trajectories: shared decline process plus per-feature random walks.
    double drift = 0.0;  // per step
    double walk_sd = 0.0;
    double shift_prob = 0.1;  // per-step chance of a sudden decline
    double shift_size = 1.0;
    double measurement_sd = 0.3;

    // Observation process.
    double base_missing_rate = 0.15;
    double informative_coef = 0.25;  // log-odds of missingness per unit of risk
    double visit_skip_rate = 0.1;  // uninformative skipped visits
    double censoring_rate = 0.08;  // per-step dropout probability
    double diagnosis_noise = 0.3;
    double diagnosis_threshold = 7.0;  // risk above which a visit reads MCI
    double baseline_event_rate = 0.0;

    std::uint64_t seed = 0;

    std::size_t max_steps() const;
    double level(std::size_t f) const { return level_coefs.empty() ? level_coef : level_coefs[f]; }
    double trend(std::size_t f) const { return trend_coefs.empty() ? trend_coef : trend_coefs[f]; }
    /// Throws ConfigError on invalid settings.
    void validate() const;
};

/// Latent state of one patient over the full follow-up grid 0..max_steps.
struct PatientTruth {
    std::string patient_id;
    Matrix latent;  // n_numeric x (max_steps + 1)
    double frailty = 0.0;
    double static_effect = 0.0;
    std::vector<double> risk;  // per step
    std::vector<double> hazard;  // hazard[t]: event probability in (t, t + 1], t < max_steps
    std::size_t last_step = 0;  // last observed step
};

struct GeneratedData {
    Dataset dataset;
    std::vector<PatientTruth> truth;
};

GeneratedData generate(const GenConfig& config);

/// Risk and hazard recomputed from a patient's latent state.
double risk_at(const GenConfig& config, const PatientTruth& truth, std::size_t step);
double hazard_at(const GenConfig& config, const PatientTruth& truth, std::size_t step);

struct CohortRates {
    double patient_event_rate = 0.0;  // fraction with an observed post-baseline event
    double window_positive_rate = 0.0;  // positive share of defined, visit-valid one-step labels
    std::size_t one_step_windows = 0;
};

CohortRates measure_rates(const Dataset& dataset, double delta);

/// Bisects the baseline log-odds until the patient event rate of a pilot
/// cohort is within `tolerance` (relative) of the target. With a window target,
/// an outer bisection on the censoring rate matches that too. Throws
/// CalibrationError for targets outside (0, 1) or when unreachable.
GenConfig calibrate(GenConfig config, double target_patient_event_rate,
                    std::optional<double> target_window_positive_rate = std::nullopt,
                    std::size_t pilot_patients = 2000, double tolerance = 0.2);

/// patient_id,step,time_years,risk,hazard for every observed step.
void write_truth_csv(std::ostream& out, const GenConfig& config, const std::vector<PatientTruth>& truth);

} // namespace matchnet
