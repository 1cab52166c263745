#include "matchnet/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>

#include "matchnet/errors.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

namespace {

constexpr std::array<std::string_view, 3> kLevels = {"A", "B", "C"};
constexpr std::array<double, 3> kLevelProbs = {0.6, 0.3, 0.1};

double logistic(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

double logit(double p) {
    return std::log(p / (1.0 - p));
}

/// Every random quantity of one patient, drawn up front in a fixed order.
struct Draws {
    std::vector<double> statics;
    std::vector<std::size_t> categories;
    std::vector<std::uint8_t> category_missing;
    double frailty_z = 0.0;
    double baseline_u = 0.0;
    Matrix latent;
    std::vector<double> event_u;
    std::vector<double> censor_u;
    std::vector<double> skip_u;
    std::vector<double> jitter;
    Matrix missing_u;
    Matrix noise;
    std::vector<double> diagnosis_z;
};

Draws draw_patient(const GenConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t T = cfg.max_steps();
    const std::size_t F = cfg.n_numeric;
    Draws d;
    for (std::size_t s = 0; s < cfg.n_static; ++s) {
        d.statics.push_back(standard_normal(rng));
    }
    for (std::size_t c = 0; c < cfg.n_categorical; ++c) {
        const double u = uniform01(rng);
        std::size_t level = 0;
        double acc = kLevelProbs[0];
        while (level + 1 < kLevels.size() && u >= acc) {
            acc += kLevelProbs[++level];
        }
        d.categories.push_back(level);
        d.category_missing.push_back(uniform01(rng) < 0.02 ? 1 : 0);
    }
    d.frailty_z = standard_normal(rng);
    d.baseline_u = uniform01(rng);

    std::vector<double> shared(T + 1);
    shared[0] = 0.5 * standard_normal(rng);
    for (std::size_t t = 1; t <= T; ++t) {
        double step = cfg.drift + cfg.walk_sd * standard_normal(rng);
        const double shift_u = uniform01(rng);
        const double shift_scale = 0.5 + uniform01(rng);
        if (shift_u < cfg.shift_prob) {
            step -= cfg.shift_size * shift_scale;
        }
        shared[t] = shared[t - 1] + step;
    }
    d.latent = Matrix(F, T + 1);
    for (std::size_t f = 0; f < F; ++f) {
        double own = 0.5 * standard_normal(rng);
        for (std::size_t t = 0; t <= T; ++t) {
            if (t > 0) {
                own += cfg.walk_sd * standard_normal(rng);
            }
            d.latent(f, t) = shared[t] + own;
        }
    }
    for (std::size_t t = 0; t <= T; ++t) {
        d.event_u.push_back(uniform01(rng));
        d.censor_u.push_back(uniform01(rng));
        d.skip_u.push_back(uniform01(rng));
        d.jitter.push_back(uniform(rng, -0.1, 0.1));
        d.diagnosis_z.push_back(standard_normal(rng));
    }
    d.missing_u = Matrix(F, T + 1);
    d.noise = Matrix(F, T + 1);
    for (std::size_t t = 0; t <= T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
            d.missing_u(f, t) = uniform01(rng);
            d.noise(f, t) = standard_normal(rng);
        }
    }
    return d;
}

std::string patient_name(std::size_t i) {
    std::string id = std::to_string(i + 1);
    return "P" + std::string(id.size() < 5 ? 5 - id.size() : 0, '0') + id;
}

} // namespace

std::size_t GenConfig::max_steps() const {
    return static_cast<std::size_t>(std::llround(max_followup / delta));
}

void GenConfig::validate() const {
    if (!(delta > 0.0)) {
        throw ConfigError("generator: delta must be positive");
    }
    const double steps = max_followup / delta;
    if (!(max_followup > 0.0) || std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps)) {
        throw ConfigError("generator: max_followup must be a positive multiple of delta");
    }
    if (n_patients == 0 || n_numeric == 0) {
        throw ConfigError("generator: need at least one patient and one longitudinal feature");
    }
    if (!level_coefs.empty() && level_coefs.size() != n_numeric) {
        throw ConfigError("generator: level_coefs needs one entry per longitudinal feature");
    }
    if (!trend_coefs.empty() && trend_coefs.size() != n_numeric) {
        throw ConfigError("generator: trend_coefs needs one entry per longitudinal feature");
    }
    for (auto [value, name] : {std::pair{shift_prob, "shift_prob"}, std::pair{visit_skip_rate, "visit_skip_rate"},
                               std::pair{censoring_rate, "censoring_rate"},
                               std::pair{baseline_event_rate, "baseline_event_rate"}}) {
        if (!(value >= 0.0 && value <= 1.0)) {
            throw ConfigError(std::string("generator: ") + name + " must lie in [0, 1]");
        }
    }
    if (!(base_missing_rate >= 0.0 && base_missing_rate < 1.0)) {
        throw ConfigError("generator: base_missing_rate must lie in [0, 1)");
    }
    if (walk_sd < 0.0 || measurement_sd < 0.0 || frailty_sd < 0.0 || diagnosis_noise < 0.0 || shift_size < 0.0) {
        throw ConfigError("generator: standard deviations and shift size must be non-negative");
    }
    if (std::isnan(baseline_logodds) || baseline_logodds == std::numeric_limits<double>::infinity()) {
        throw ConfigError("generator: baseline_logodds must be a number below +inf");
    }
}

double risk_at(const GenConfig& cfg, const PatientTruth& truth, std::size_t step) {
    const std::size_t first = step >= cfg.trend_lag ? step - cfg.trend_lag : 0;
    double r = truth.frailty + truth.static_effect;
    for (std::size_t f = 0; f < cfg.n_numeric; ++f) {
        r += cfg.level(f) * -truth.latent(f, step);
        double declines = 0.0;
        for (std::size_t t = first; t < step; ++t) {
            declines += std::max(0.0, truth.latent(f, t) - truth.latent(f, t + 1));
        }
        r += cfg.trend(f) * declines;
    }
    return r;
}

double hazard_at(const GenConfig& cfg, const PatientTruth& truth, std::size_t step) {
    return logistic(cfg.baseline_logodds + risk_at(cfg, truth, step));
}

GeneratedData generate(const GenConfig& cfg) {
    cfg.validate();
    const std::size_t T = cfg.max_steps();
    const std::size_t F = cfg.n_numeric;
    GeneratedData out;
    auto& schema = out.dataset.schema;
    for (std::size_t f = 0; f < F; ++f) {
        schema.longitudinal.push_back("x" + std::to_string(f + 1));
    }
    for (std::size_t s = 0; s < cfg.n_static; ++s) {
        schema.static_numeric.push_back("s" + std::to_string(s + 1));
    }
    for (std::size_t c = 0; c < cfg.n_categorical; ++c) {
        schema.static_categorical.push_back("c" + std::to_string(c + 1));
    }
    const double miss_offset = cfg.base_missing_rate > 0.0 ? logit(cfg.base_missing_rate) : -1e300;

    for (std::size_t i = 0; i < cfg.n_patients; ++i) {
        const Draws d = draw_patient(cfg, derive_seed(cfg.seed, i));
        PatientTruth truth;
        truth.patient_id = patient_name(i);
        truth.latent = d.latent;
        truth.frailty = cfg.frailty_sd * d.frailty_z;
        for (double z : d.statics) {
            truth.static_effect += cfg.static_coef * z;
        }
        for (std::size_t c = 0; c < d.categories.size(); ++c) {
            truth.static_effect += cfg.static_coef * static_cast<double>(d.categories[c]);
        }
        for (std::size_t t = 0; t <= T; ++t) {
            truth.risk.push_back(risk_at(cfg, truth, t));
        }

        PatientRecord rec;
        rec.patient_id = truth.patient_id;
        for (double z : d.statics) {
            rec.static_numeric.emplace_back(72.0 + 7.0 * z);
        }
        for (std::size_t c = 0; c < d.categories.size(); ++c) {
            if (d.category_missing[c]) {
                rec.static_categorical.emplace_back(std::nullopt);
            } else {
                rec.static_categorical.emplace_back(std::string(kLevels[d.categories[c]]));
            }
        }

        std::optional<std::size_t> event_step;
        if (d.baseline_u < cfg.baseline_event_rate) {
            event_step = 0;
            rec.baseline_event = true;
        } else {
            for (std::size_t t = 0; t < T; ++t) {
                if (d.event_u[t] < logistic(cfg.baseline_logodds + truth.risk[t])) {
                    event_step = t + 1;
                    break;
                }
            }
        }
        std::size_t censor_step = T;
        for (std::size_t s = 1; s <= T; ++s) {
            if (d.censor_u[s] < cfg.censoring_rate) {
                censor_step = s;
                break;
            }
        }
        rec.event_observed = event_step && *event_step <= censor_step;
        const std::size_t last = rec.event_observed ? *event_step : censor_step;
        truth.last_step = last;
        for (std::size_t t = 0; t < last; ++t) {
            truth.hazard.push_back(logistic(cfg.baseline_logodds + truth.risk[t]));
        }

        for (std::size_t t = 0; t <= last; ++t) {
            const bool endpoint = t == 0 || t == last;
            if (!endpoint && d.skip_u[t] < cfg.visit_skip_rate) {
                continue;
            }
            Visit v;
            v.time = t == 0 ? 0.0 : (static_cast<double>(t) + d.jitter[t]) * cfg.delta;
            const double p_miss = logistic(miss_offset + cfg.informative_coef * truth.risk[t]);
            for (std::size_t f = 0; f < F; ++f) {
                if (d.missing_u(f, t) < p_miss) {
                    v.measurements.emplace_back(std::nullopt);
                } else {
                    v.measurements.emplace_back(truth.latent(f, t) + cfg.measurement_sd * d.noise(f, t));
                }
            }
            if (rec.event_observed && t == last) {
                v.diagnosis = "AD";
            } else {
                const double score = truth.risk[t] + cfg.diagnosis_noise * d.diagnosis_z[t];
                v.diagnosis = score > cfg.diagnosis_threshold ? "MCI" : "NL";
            }
            rec.visits.push_back(std::move(v));
        }
        rec.observed_time = rec.visits.back().time;
        out.dataset.patients.push_back(std::move(rec));
        out.truth.push_back(std::move(truth));
    }
    return out;
}

CohortRates measure_rates(const Dataset& dataset, double delta) {
    CohortRates r;
    std::size_t events = 0;
    std::size_t positives = 0;
    for (const auto& p : dataset.patients) {
        if (p.event_observed && !p.baseline_event) {
            ++events;
        }
        const GridSeries gs = discretize(p, dataset.schema, delta);
        for (std::size_t a = 0; a + 1 < gs.num_steps; ++a) {
            const std::size_t target = a + 1;
            const bool is_event = gs.event_step && *gs.event_step == target;
            if (gs.label_valid[target] || is_event) {
                ++r.one_step_windows;
                positives += is_event ? 1 : 0;
            }
        }
    }
    if (!dataset.patients.empty()) {
        r.patient_event_rate = static_cast<double>(events) / static_cast<double>(dataset.patients.size());
    }
    if (r.one_step_windows > 0) {
        r.window_positive_rate = static_cast<double>(positives) / static_cast<double>(r.one_step_windows);
    }
    return r;
}

namespace {

CohortRates pilot_rates(GenConfig cfg, std::size_t pilot_patients) {
    cfg.n_patients = pilot_patients;
    const auto data = generate(cfg);
    return measure_rates(data.dataset, cfg.delta);
}

bool within(double value, double target, double tolerance) {
    return std::abs(value - target) <= tolerance * target;
}

/// Baseline log-odds whose pilot patient event rate is closest to the target.
GenConfig fit_baseline(GenConfig cfg, double target, std::size_t pilot, double tolerance) {
    double lo = -20.0;
    double hi = 10.0;
    cfg.baseline_logodds = hi;
    const double top = pilot_rates(cfg, pilot).patient_event_rate;
    cfg.baseline_logodds = lo;
    const double bottom = pilot_rates(cfg, pilot).patient_event_rate;
    if (target > top * (1.0 + tolerance) || target < bottom * (1.0 - tolerance)) {
        throw CalibrationError("patient event rate " + format_fixed(target, 4) + " is outside the reachable range [" +
                               format_fixed(bottom, 4) + ", " + format_fixed(top, 4) + "]");
    }
    double best = lo;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        cfg.baseline_logodds = mid;
        const double rate = pilot_rates(cfg, pilot).patient_event_rate;
        if (std::abs(rate - target) < best_gap) {
            best_gap = std::abs(rate - target);
            best = mid;
        }
        (rate < target ? lo : hi) = mid;
        if (hi - lo < 1e-6) {
            break;
        }
    }
    cfg.baseline_logodds = best;
    return cfg;
}

} // namespace

GenConfig calibrate(GenConfig config, double target_patient_event_rate,
                    std::optional<double> target_window_positive_rate, std::size_t pilot_patients,
                    double tolerance) {
    config.validate();
    const auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_unit(target_patient_event_rate)) {
        throw CalibrationError("target patient event rate must lie in (0, 1), got " +
                               format_double(target_patient_event_rate));
    }
    if (target_window_positive_rate && !in_unit(*target_window_positive_rate)) {
        throw CalibrationError("target window positive rate must lie in (0, 1), got " +
                               format_double(*target_window_positive_rate));
    }
    if (pilot_patients == 0) {
        throw CalibrationError("pilot cohort must be non-empty");
    }

    if (!target_window_positive_rate) {
        GenConfig fitted = fit_baseline(config, target_patient_event_rate, pilot_patients, tolerance);
        const double rate = pilot_rates(fitted, pilot_patients).patient_event_rate;
        if (!within(rate, target_patient_event_rate, tolerance)) {
            throw CalibrationError("patient event rate converged to " + format_fixed(rate, 4) + ", target " +
                                   format_fixed(target_patient_event_rate, 4));
        }
        return fitted;
    }

    // More censoring shortens follow-up and raises the positive share of windows.
    const double window_target = *target_window_positive_rate;
    double lo = 0.0;
    double hi = 0.9;
    std::optional<GenConfig> best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 30; ++it) {
        GenConfig trial = config;
        trial.censoring_rate = 0.5 * (lo + hi);
        try {
            trial = fit_baseline(trial, target_patient_event_rate, pilot_patients, tolerance);
        } catch (const CalibrationError&) {
            hi = trial.censoring_rate;
            continue;
        }
        const auto rates = pilot_rates(trial, pilot_patients);
        const double gap = std::abs(rates.window_positive_rate - window_target) / window_target +
                           std::abs(rates.patient_event_rate - target_patient_event_rate) / target_patient_event_rate;
        if (gap < best_gap) {
            best_gap = gap;
            best = trial;
        }
        (rates.window_positive_rate < window_target ? lo : hi) = trial.censoring_rate;
        if (hi - lo < 1e-4) {
            break;
        }
    }
    if (!best) {
        throw CalibrationError("no censoring rate reaches the patient event rate target");
    }
    const auto rates = pilot_rates(*best, pilot_patients);
    if (!within(rates.patient_event_rate, target_patient_event_rate, tolerance) ||
        !within(rates.window_positive_rate, window_target, tolerance)) {
        throw CalibrationError("calibration reached patient rate " + format_fixed(rates.patient_event_rate, 4) +
                               " and window rate " + format_fixed(rates.window_positive_rate, 4) + ", targets " +
                               format_fixed(target_patient_event_rate, 4) + " and " + format_fixed(window_target, 4));
    }
    return *best;
}

void write_truth_csv(std::ostream& out, const GenConfig& config, const std::vector<PatientTruth>& truth) {
    out << "patient_id,step,time_years,risk,hazard\n";
    for (const auto& p : truth) {
        for (std::size_t t = 0; t < p.hazard.size(); ++t) {
            out << p.patient_id << ',' << t << ',' << format_double(static_cast<double>(t) * config.delta) << ','
                << format_double(p.risk[t]) << ',' << format_double(p.hazard[t]) << '\n';
        }
    }
}

} // namespace matchnet
