#include "matchnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "matchnet/errors.hpp"
#include "matchnet/log.hpp"

namespace matchnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

void validate_record(const PatientRecord& record, const FeatureSchema& schema) {
    if (record.observed_time < 0.0 || !std::isfinite(record.observed_time)) {
        throw DataError("patient " + record.patient_id + ": observed time must be >= 0");
    }
    if (record.static_numeric.size() != schema.static_numeric.size() ||
        record.static_categorical.size() != schema.static_categorical.size()) {
        throw DataError("patient " + record.patient_id + ": static features do not match schema");
    }
    double previous = -1.0;
    for (const auto& v : record.visits) {
        if (!(v.time >= 0.0) || !std::isfinite(v.time)) {
            throw DataError("patient " + record.patient_id + ": negative visit time");
        }
        if (v.time <= previous) {
            throw DataError("patient " + record.patient_id +
                            ": visit times must be strictly increasing");
        }
        if (v.measurements.size() != schema.longitudinal.size()) {
            throw DataError("patient " + record.patient_id + ": visit measurements do not match schema");
        }
        previous = v.time;
    }
}

std::size_t grid_step(double time, double delta) {
    return static_cast<std::size_t>(std::floor(time / delta + 0.5));
}

GridSeries discretize(const PatientRecord& record, const FeatureSchema& schema, double delta) {
    if (!(delta > 0.0)) {
        throw ConfigError("discretize: delta must be positive");
    }
    if (record.visits.empty()) {
        throw EmptyRecordError("patient " + record.patient_id + " has no visits");
    }
    validate_record(record, schema);

    GridSeries gs;
    gs.patient_id = record.patient_id;
    gs.delta = delta;
    const std::size_t last = grid_step(record.observed_time, delta);
    gs.num_steps = last + 1;
    const std::size_t n_long = schema.longitudinal.size();
    const std::size_t n_features = schema.numeric_count();
    gs.covariates = Matrix(n_features, gs.num_steps, kNaN);
    gs.mask = Matrix(n_features, gs.num_steps, 1.0);
    gs.label_valid.assign(gs.num_steps, 0);
    gs.diagnosis_per_step.assign(gs.num_steps, std::nullopt);

    // Visits are time-ordered, so later writes are later measurements.
    for (const auto& visit : record.visits) {
        const std::size_t s = grid_step(visit.time, delta);
        if (s > last) {
            continue;
        }
        gs.label_valid[s] = 1;
        for (std::size_t f = 0; f < n_long; ++f) {
            if (visit.measurements[f]) {
                gs.covariates(f, s) = *visit.measurements[f];
                gs.mask(f, s) = 0.0;
            }
        }
        if (visit.diagnosis && !visit.diagnosis->empty()) {
            gs.diagnosis_per_step[s] = visit.diagnosis;
        }
    }
    for (std::size_t j = 0; j < schema.static_numeric.size(); ++j) {
        if (!record.static_numeric[j]) {
            continue;
        }
        for (std::size_t s = 0; s < gs.num_steps; ++s) {
            gs.covariates(n_long + j, s) = *record.static_numeric[j];
            gs.mask(n_long + j, s) = 0.0;
        }
    }
    if (record.event_observed) {
        gs.event_step = last;
    }
    gs.static_categorical = record.static_categorical;
    gs.baseline_event = record.baseline_event;
    return gs;
}

GridSeries impute(const GridSeries& series, double never_observed_fill) {
    GridSeries out = series;
    Matrix& x = out.covariates;
    for (std::size_t f = 0; f < x.rows; ++f) {
        std::optional<std::size_t> first;
        double last = kNaN;
        for (std::size_t t = 0; t < x.cols; ++t) {
            if (!std::isnan(x(f, t))) {
                last = x(f, t);
                if (!first) {
                    first = t;
                }
            } else if (!std::isnan(last)) {
                x(f, t) = last;
            }
        }
        if (!first) {
            for (std::size_t t = 0; t < x.cols; ++t) {
                x(f, t) = never_observed_fill;
            }
            continue;
        }
        for (std::size_t t = 0; t < *first; ++t) {
            x(f, t) = x(f, *first);
        }
    }
    return out;
}

GridSeries difference_transform(const GridSeries& series) {
    GridSeries out = series;
    const Matrix& x = series.covariates;
    const Matrix& z = series.mask;
    for (std::size_t f = 0; f < x.rows; ++f) {
        out.covariates(f, 0) = 0.0;
        for (std::size_t t = 1; t < x.cols; ++t) {
            out.covariates(f, t) = x(f, t) - x(f, t - 1);
            out.mask(f, t) = (z(f, t) != 0.0 || z(f, t - 1) != 0.0) ? 1.0 : 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::size_t NormStats::encoded_width() const {
    std::size_t width = numeric_names.size();
    for (const auto& c : categories) {
        width += c.size();
    }
    return width;
}

std::vector<std::string> NormStats::encoded_names() const {
    std::vector<std::string> names = numeric_names;
    for (std::size_t j = 0; j < categorical_names.size(); ++j) {
        for (const auto& level : categories[j]) {
            names.push_back(categorical_names[j] + "=" + level);
        }
    }
    return names;
}

NormStats fit_norm_stats(const FeatureSchema& schema, std::span<const GridSeries> training) {
    NormStats stats;
    stats.numeric_names = schema.longitudinal;
    stats.numeric_names.insert(stats.numeric_names.end(), schema.static_numeric.begin(),
                               schema.static_numeric.end());
    const std::size_t n_long = schema.longitudinal.size();
    const std::size_t n_num = stats.numeric_names.size();
    std::vector<std::vector<double>> observed(n_num);
    std::vector<std::set<std::string>> levels(schema.static_categorical.size());
    for (const auto& gs : training) {
        if (gs.covariates.rows != n_num) {
            throw DataError("normalization: series " + gs.patient_id + " has " +
                            std::to_string(gs.covariates.rows) + " rows, schema has " +
                            std::to_string(n_num));
        }
        for (std::size_t f = 0; f < n_num; ++f) {
            const std::size_t steps = f < n_long ? gs.num_steps : std::min<std::size_t>(1, gs.num_steps);
            for (std::size_t t = 0; t < steps; ++t) {
                if (!std::isnan(gs.covariates(f, t))) {
                    observed[f].push_back(gs.covariates(f, t));
                }
            }
        }
        for (std::size_t j = 0; j < levels.size() && j < gs.static_categorical.size(); ++j) {
            if (gs.static_categorical[j]) {
                levels[j].insert(*gs.static_categorical[j]);
            }
        }
    }

    stats.means.assign(n_num, 0.0);
    stats.sds.assign(n_num, 0.0);
    for (std::size_t f = 0; f < n_num; ++f) {
        const auto& v = observed[f];
        if (v.empty()) {
            continue;
        }
        const double n = static_cast<double>(v.size());
        double m = 0.0;
        for (double x : v) {
            m += x;
        }
        m /= n;
        double ss = 0.0;
        for (double x : v) {
            ss += (x - m) * (x - m);
        }
        stats.means[f] = m;
        stats.sds[f] = std::sqrt(ss / n);
        if (stats.sds[f] < 1e-12 * std::max(1.0, std::abs(m))) {
            stats.sds[f] = 0.0;
        }
    }
    stats.categorical_names = schema.static_categorical;
    for (const auto& l : levels) {
        stats.categories.emplace_back(l.begin(), l.end());
    }
    return stats;
}

GridSeries apply_normalization(const GridSeries& series, const NormStats& stats) {
    const std::size_t n_num = stats.numeric_names.size();
    if (series.covariates.rows != n_num ||
        series.static_categorical.size() != stats.categorical_names.size()) {
        throw DataError("normalization: series " + series.patient_id +
                        " does not match the fitted feature layout");
    }
    GridSeries out = series;
    const std::size_t width = stats.encoded_width();
    out.covariates = Matrix(width, series.num_steps, 0.0);
    out.mask = Matrix(width, series.num_steps, 0.0);
    for (std::size_t f = 0; f < n_num; ++f) {
        for (std::size_t t = 0; t < series.num_steps; ++t) {
            const double v = series.covariates(f, t);
            out.mask(f, t) = series.mask(f, t);
            if (std::isnan(v)) {
                out.covariates(f, t) = kNaN;
            } else {
                out.covariates(f, t) = stats.sds[f] > 0.0 ? (v - stats.means[f]) / stats.sds[f] : 0.0;
            }
        }
    }
    std::size_t row = n_num;
    for (std::size_t j = 0; j < stats.categorical_names.size(); ++j) {
        const auto& levels = stats.categories[j];
        const auto& value = series.static_categorical[j];
        const double missing = value ? 0.0 : 1.0;
        std::optional<std::size_t> hit;
        if (value) {
            const auto it = std::lower_bound(levels.begin(), levels.end(), *value);
            if (it != levels.end() && *it == *value) {
                hit = static_cast<std::size_t>(it - levels.begin());
            } else {
                warn("patient " + series.patient_id + ": unknown category '" + *value +
                     "' for feature '" + stats.categorical_names[j] + "', encoded as all zeros");
            }
        }
        for (std::size_t l = 0; l < levels.size(); ++l) {
            for (std::size_t t = 0; t < series.num_steps; ++t) {
                out.covariates(row + l, t) = (hit && *hit == l) ? 1.0 : 0.0;
                out.mask(row + l, t) = missing;
            }
        }
        row += levels.size();
    }
    out.static_categorical.clear();
    return out;
}

NormalizedSet normalize(const FeatureSchema& schema, std::span<const GridSeries> series,
                        std::span<const std::uint8_t> is_training) {
    if (is_training.size() != series.size()) {
        throw ContractError("normalize: training flags do not match series count");
    }
    std::vector<GridSeries> training;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (is_training[i]) {
            training.push_back(series[i]);
        }
    }
    NormalizedSet out;
    out.stats = fit_norm_stats(schema, training);
    out.series.reserve(series.size());
    for (const auto& gs : series) {
        out.series.push_back(apply_normalization(gs, out.stats));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::optional<Diagnosis> parse_diagnosis(const std::string& text) {
    std::string source = text;
    if (const auto pos = text.find(" to "); pos != std::string::npos) {
        source = text.substr(0, pos);
    }
    while (!source.empty() && source.back() == ' ') {
        source.pop_back();
    }
    if (source == "NL") {
        return Diagnosis::Normal;
    }
    if (source == "MCI") {
        return Diagnosis::MildImpairment;
    }
    if (source == "AD" || source == "Dementia") {
        return Diagnosis::Dementia;
    }
    return std::nullopt;
}

bool WindowInstance::is_positive() const {
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == Label::Positive) {
            return true;
        }
    }
    return false;
}

std::vector<WindowInstance> extract_windows(const GridSeries& series, const WindowConfig& config) {
    if (config.horizon_steps == 0) {
        throw ConfigError("extract_windows: tau_max must be positive");
    }
    if (config.window_steps == 0) {
        throw ConfigError("extract_windows: window width must be positive");
    }
    if (!series.static_categorical.empty()) {
        throw ContractError("extract_windows: series " + series.patient_id + " is not normalized");
    }
    for (double v : series.covariates.data) {
        if (std::isnan(v)) {
            throw ContractError("extract_windows: series " + series.patient_id + " is not imputed");
        }
    }

    const std::size_t n_features = series.covariates.rows;
    const std::size_t W = config.window_steps;
    const std::size_t K = config.horizon_steps;
    const std::size_t last = series.last_step();

    std::vector<WindowInstance> out;
    out.reserve(series.num_steps);
    std::optional<Diagnosis> recent;
    for (std::size_t a = 0; a <= last; ++a) {
        if (series.diagnosis_per_step[a]) {
            if (auto d = parse_diagnosis(*series.diagnosis_per_step[a])) {
                recent = d;
            }
        }
        WindowInstance inst;
        inst.patient_id = series.patient_id;
        inst.anchor_step = a;
        inst.patient_steps = last;
        inst.x = Matrix(n_features, W);
        inst.z = Matrix(n_features, W);
        for (std::size_t j = 0; j < W; ++j) {
            // Source step a - (W - 1) + j; negative steps are left-truncated.
            const bool truncated = a + j < W - 1;
            const std::size_t s = truncated ? 0 : a + j - (W - 1);
            for (std::size_t f = 0; f < n_features; ++f) {
                inst.x(f, j) = series.covariates(f, s);
                inst.z(f, j) = truncated ? 1.0 : series.mask(f, s);
            }
        }
        inst.r.assign(kDiagnosisDim, 0.0);
        if (recent) {
            inst.r[static_cast<std::size_t>(*recent)] = 1.0;
        }

        const std::size_t tau_i = std::min(last - a, K);
        inst.labels.assign(K, Label::Undefined);
        inst.label_valid.assign(K, 0);
        for (std::size_t k = 1; k <= tau_i; ++k) {
            const std::size_t target = a + k;
            const bool failed = series.event_step && *series.event_step <= target;
            inst.labels[k - 1] = failed ? Label::Positive : Label::Negative;
            const bool is_event_visit = series.event_step && *series.event_step == target;
            inst.label_valid[k - 1] = (series.label_valid[target] != 0 || is_event_visit) ? 1 : 0;
        }
        inst.event_at_anchor = series.event_step && *series.event_step == a;
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<WindowInstance> extract_windows(const GridSeries& series, double window_years,
                                            double tau_max_years) {
    if (!(tau_max_years > 0.0)) {
        throw ConfigError("extract_windows: tau_max must be positive");
    }
    if (!(window_years > 0.0)) {
        throw ConfigError("extract_windows: window width must be positive");
    }
    auto to_steps = [&](double years, const char* what) {
        const double steps = years / series.delta;
        const double rounded = std::round(steps);
        if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
            throw ConfigError(std::string("extract_windows: ") + what + " is not a multiple of delta");
        }
        return static_cast<std::size_t>(rounded);
    };
    return extract_windows(series, WindowConfig{to_steps(window_years, "window width"),
                                                to_steps(tau_max_years, "tau_max")});
}

bool is_valid_oversample_ratio(std::size_t ratio) {
    return ratio == 0 || ratio == 1 || ratio == 2 || ratio == 3 || ratio == 5 || ratio == 10;
}

std::vector<WindowInstance> augment(std::vector<WindowInstance> instances,
                                    const AugmentConfig& config) {
    if (!is_valid_oversample_ratio(config.oversample_ratio)) {
        throw ConfigError("augment: oversample ratio must be one of none, 1, 2, 3, 5, 10");
    }
    for (auto& inst : instances) {
        if (config.label_forwarding) {
            bool failed = false;
            for (std::size_t k = 0; k < inst.labels.size(); ++k) {
                if (inst.labels[k] == Label::Positive) {
                    failed = true;
                } else if (failed && inst.labels[k] == Label::Undefined) {
                    inst.labels[k] = Label::Positive;
                    inst.label_valid[k] = 1;
                }
            }
        }
        inst.anchor_target = config.dummy_zero_events;
    }
    if (config.oversample_ratio > 0) {
        const std::size_t n = instances.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (!instances[i].is_positive() || instances[i].is_synthetic_duplicate) {
                continue;
            }
            for (std::size_t r = 0; r < config.oversample_ratio; ++r) {
                WindowInstance copy = instances[i];
                copy.is_synthetic_duplicate = true;
                instances.push_back(std::move(copy));
            }
        }
    }
    return instances;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> FoldPlan::members(std::size_t fold, Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < patient_ids.size(); ++i) {
        if (roles.at(fold)[i] == role) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<FoldSubject> fold_subjects(const Dataset& dataset) {
    std::vector<FoldSubject> out;
    out.reserve(dataset.patients.size());
    for (const auto& p : dataset.patients) {
        out.push_back({p.patient_id, p.event_observed && !p.baseline_event, p.baseline_event});
    }
    return out;
}

FoldPlan make_folds(std::span<const FoldSubject> subjects, std::size_t num_folds, Rng& rng) {
    if (num_folds < 2) {
        throw ConfigError("make_folds: need at least 2 folds");
    }
    if (subjects.size() < num_folds) {
        throw DataError("make_folds: " + std::to_string(subjects.size()) + " patients for " +
                        std::to_string(num_folds) + " folds");
    }
    FoldPlan plan;
    plan.num_folds = num_folds;
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        plan.patient_ids.push_back(subjects[i].patient_id);
        plan.positive.push_back(subjects[i].positive ? 1 : 0);
        if (subjects[i].baseline_event) {
            continue;
        }
        (subjects[i].positive ? pos : neg).push_back(i);
    }
    if (pos.size() < num_folds) {
        warn("make_folds: " + std::to_string(pos.size()) + " positive patients for " +
             std::to_string(num_folds) + " folds; falling back to unstratified folds");
        plan.stratified = false;
        neg.insert(neg.end(), pos.begin(), pos.end());
        std::sort(neg.begin(), neg.end());
        pos.clear();
    }
    shuffle(pos.begin(), pos.end(), rng);
    shuffle(neg.begin(), neg.end(), rng);

    // Deal positives, then negatives, round robin so group sizes stay balanced.
    std::vector<std::vector<std::size_t>> groups(num_folds);
    std::size_t dealt = 0;
    for (auto i : pos) {
        groups[dealt++ % num_folds].push_back(i);
    }
    for (auto i : neg) {
        groups[dealt++ % num_folds].push_back(i);
    }

    plan.roles.assign(num_folds, std::vector<Role>(subjects.size(), Role::Train));
    for (std::size_t k = 0; k < num_folds; ++k) {
        for (auto i : groups[k]) {
            plan.roles[k][i] = Role::Test;
        }
        // Remaining eligible patients: one quarter per class to validation.
        std::vector<std::size_t> rest_pos, rest_neg;
        for (std::size_t g = 0; g < num_folds; ++g) {
            if (g == k) {
                continue;
            }
            for (auto i : groups[g]) {
                (plan.positive[i] ? rest_pos : rest_neg).push_back(i);
            }
        }
        if (!plan.stratified) {
            rest_neg.insert(rest_neg.end(), rest_pos.begin(), rest_pos.end());
            rest_pos.clear();
        }
        for (auto* cls : {&rest_pos, &rest_neg}) {
            std::sort(cls->begin(), cls->end());
            shuffle(cls->begin(), cls->end(), rng);
            const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(cls->size()) / 4.0));
            for (std::size_t j = 0; j < n_val; ++j) {
                plan.roles[k][(*cls)[j]] = Role::Validation;
            }
        }
    }
    return plan;
}

} // namespace matchnet
