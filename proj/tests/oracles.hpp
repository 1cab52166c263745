#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance runner. Nothing here calls the library code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "matchnet/data.hpp"
#include "matchnet/rng.hpp"
#include "matchnet/tensor.hpp"

namespace oracle {

using matchnet::Rng;

// ---------------------------------------------------------------------------
// Gradients

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Compares analytic gradients of `loss(inputs)` against central differences.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(std::vector<matchnet::Tensor>& inputs,
                                 const std::function<matchnet::Tensor(std::vector<matchnet::Tensor>&)>& loss,
                                 double eps = 1e-5, double floor = 1e-8) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    loss(inputs).backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
    }
    GradCheck out;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto vals = inputs[i].mutable_values();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double orig = vals[j];
            vals[j] = orig + eps;
            const double up = loss(inputs).item();
            vals[j] = orig - eps;
            const double down = loss(inputs).item();
            vals[j] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[i][j];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
            ++out.checked;
        }
    }
    return out;
}

/// Values in [-2, 2] kept at least 0.05 away from zero so relu kinks are not straddled.
inline std::vector<double> away_from_zero(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) {
        const double m = matchnet::uniform(rng, 0.05, 2.0);
        x = matchnet::uniform01(rng) < 0.5 ? -m : m;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Convolution

/// out[b][o][t] = bias[o] + sum_{c,k} w[o][c][k] * in[b][c][t + k], plain loops.
inline std::vector<double> conv_reference(const std::vector<double>& in, std::size_t batch, std::size_t cin,
                                          std::size_t time, const std::vector<double>& w, std::size_t cout,
                                          std::size_t width, const std::vector<double>& bias) {
    const std::size_t tout = time - width + 1;
    std::vector<double> out(batch * cout * tout, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t t = 0; t < tout; ++t) {
                double acc = bias[o];
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t k = 0; k < width; ++k) {
                        acc += w[(o * cin + c) * width + k] * in[(b * cin + c) * time + t + k];
                    }
                }
                out[(b * cout + o) * tout + t] = acc;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ranking metrics

/// Fraction of (positive, negative) pairs ranked correctly, ties counted half.
inline std::optional<double> pairwise_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    double good = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) {
            continue;
        }
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) {
                continue;
            }
            pairs += 1.0;
            good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    if (pairs == 0.0) {
        return std::nullopt;
    }
    return good / pairs;
}

/// Average precision from a threshold sweep: for every distinct score c
/// (descending), recall and precision of {s >= c}; AP = sum (R_c - R_prev) * P_c.
inline std::optional<double> sweep_auprc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    double total_pos = 0.0;
    for (auto v : y) {
        total_pos += v;
    }
    if (total_pos == 0.0) {
        return std::nullopt;
    }
    std::vector<double> thresholds = s;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double ap = 0.0;
    double prev_recall = 0.0;
    for (double c : thresholds) {
        double tp = 0.0;
        double predicted = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= c) {
                predicted += 1.0;
                tp += y[i];
            }
        }
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    return ap;
}

// ---------------------------------------------------------------------------
// Pipeline

inline std::size_t step_of(double time, double delta) {
    return static_cast<std::size_t>(std::floor(time / delta + 0.5));
}

/// Random patient with visits on a jittered grid, including exact half-step
/// ties, several visits per step, sporadic missing values and a random outcome.
inline matchnet::PatientRecord random_patient(Rng& rng, const matchnet::FeatureSchema& schema, double delta,
                                              const std::string& id) {
    using matchnet::uniform01;
    matchnet::PatientRecord p;
    p.patient_id = id;
    const std::size_t n_steps = 1 + matchnet::uniform_index(rng, 12);
    double t = 0.0;
    std::vector<double> times{0.0};
    for (std::size_t s = 1; s <= n_steps; ++s) {
        const double u = uniform01(rng);
        if (u < 0.15) {
            continue;  // no visit this step
        }
        if (u < 0.3) {
            t = (static_cast<double>(s) - 0.5) * delta;  // exact tie, maps to step s
        } else {
            t = (static_cast<double>(s) + matchnet::uniform(rng, -0.45, 0.45)) * delta;
        }
        if (t > times.back()) {
            times.push_back(t);
        }
        if (uniform01(rng) < 0.2) {
            const double extra = t + 0.01 * delta;
            if (step_of(extra, delta) == step_of(t, delta) && extra > times.back()) {
                times.push_back(extra);
                t = extra;
            }
        }
    }
    for (double vt : times) {
        matchnet::Visit v;
        v.time = vt;
        for (std::size_t f = 0; f < schema.longitudinal.size(); ++f) {
            if (uniform01(rng) < 0.25) {
                v.measurements.emplace_back(std::nullopt);
            } else {
                v.measurements.emplace_back(std::round(matchnet::uniform(rng, -50.0, 50.0)) / 10.0);
            }
        }
        const double d = uniform01(rng);
        if (d < 0.3) {
            v.diagnosis = "NL";
        } else if (d < 0.5) {
            v.diagnosis = "MCI";
        }
        p.visits.push_back(std::move(v));
    }
    for (std::size_t j = 0; j < schema.static_numeric.size(); ++j) {
        if (uniform01(rng) < 0.1) {
            p.static_numeric.emplace_back(std::nullopt);
        } else {
            p.static_numeric.emplace_back(matchnet::uniform(rng, 50.0, 90.0));
        }
    }
    for (std::size_t j = 0; j < schema.static_categorical.size(); ++j) {
        p.static_categorical.emplace_back(uniform01(rng) < 0.5 ? "A" : "B");
    }
    p.event_observed = uniform01(rng) < 0.4;
    p.observed_time = times.back() + (p.event_observed ? 0.0 : matchnet::uniform(rng, 0.0, 0.2) * delta);
    return p;
}

/// Expected window facts for one patient, computed from the raw record.
struct ExpectedWindow {
    std::size_t anchor = 0;
    std::vector<int> labels;  // -1 undefined, 0, 1
    std::vector<std::vector<int>> mask;  // numeric feature x window column
};

inline std::vector<ExpectedWindow> scan_windows(const matchnet::PatientRecord& p,
                                                const matchnet::FeatureSchema& schema, double delta,
                                                std::size_t W, std::size_t K) {
    const std::size_t last = step_of(p.observed_time, delta);
    const std::size_t n_long = schema.longitudinal.size();
    const std::size_t n_num = n_long + schema.static_numeric.size();
    std::vector<ExpectedWindow> out;
    for (std::size_t a = 0; a <= last; ++a) {
        ExpectedWindow e;
        e.anchor = a;
        for (std::size_t k = 1; k <= K; ++k) {
            const std::size_t tau_i = std::min(last - a, K);
            if (k > tau_i) {
                e.labels.push_back(-1);
            } else {
                e.labels.push_back(p.event_observed && last <= a + k ? 1 : 0);
            }
        }
        e.mask.assign(n_num, std::vector<int>(W, 1));
        for (std::size_t j = 0; j < W; ++j) {
            const long src = static_cast<long>(a) - static_cast<long>(W - 1) + static_cast<long>(j);
            if (src < 0) {
                continue;
            }
            for (std::size_t f = 0; f < n_long; ++f) {
                for (const auto& v : p.visits) {
                    if (step_of(v.time, delta) == static_cast<std::size_t>(src) && v.measurements[f] &&
                        static_cast<std::size_t>(src) <= last) {
                        e.mask[f][j] = 0;
                    }
                }
            }
            for (std::size_t s = 0; s < schema.static_numeric.size(); ++s) {
                if (p.static_numeric[s]) {
                    e.mask[n_long + s][j] = 0;
                }
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Datasets

/// Every patient has a visit at every step. Feature x1 is +1 from one step
/// before the event onward and -1 otherwise, so one-step labels are linearly
/// separable from the final window column. x2 is pure noise.
inline matchnet::Dataset separable_dataset(std::size_t n, std::uint64_t seed, double delta = 0.5) {
    Rng rng(seed);
    matchnet::Dataset d;
    d.schema.longitudinal = {"x1", "x2"};
    for (std::size_t i = 0; i < n; ++i) {
        matchnet::PatientRecord p;
        p.patient_id = "S" + std::to_string(i);
        const std::size_t last = 2 + matchnet::uniform_index(rng, 10);
        p.event_observed = matchnet::uniform01(rng) < 0.5;
        p.observed_time = static_cast<double>(last) * delta;
        for (std::size_t s = 0; s <= last; ++s) {
            matchnet::Visit v;
            v.time = static_cast<double>(s) * delta;
            const bool alarm = p.event_observed && s + 1 >= last;
            v.measurements = {alarm ? 1.0 : -1.0, matchnet::standard_normal(rng)};
            p.visits.push_back(std::move(v));
        }
        d.patients.push_back(std::move(p));
    }
    return d;
}

/// Window instance with random covariates, masks, diagnosis and labels.
inline matchnet::WindowInstance random_instance(Rng& rng, std::size_t F, std::size_t W, std::size_t K,
                                                const std::string& id = "r") {
    matchnet::WindowInstance w;
    w.patient_id = id;
    w.x = matchnet::Matrix(F, W);
    w.z = matchnet::Matrix(F, W);
    for (std::size_t i = 0; i < F * W; ++i) {
        w.x.data[i] = matchnet::standard_normal(rng);
        w.z.data[i] = matchnet::uniform01(rng) < 0.3 ? 1.0 : 0.0;
    }
    w.r.assign(matchnet::kDiagnosisDim, 0.0);
    w.r[matchnet::uniform_index(rng, matchnet::kDiagnosisDim)] = 1.0;
    const std::size_t defined = 1 + matchnet::uniform_index(rng, K);
    for (std::size_t k = 0; k < K; ++k) {
        if (k < defined) {
            w.labels.push_back(matchnet::uniform01(rng) < 0.4 ? matchnet::Label::Positive
                                                               : matchnet::Label::Negative);
            w.label_valid.push_back(matchnet::uniform01(rng) < 0.8 ? 1 : 0);
        } else {
            w.labels.push_back(matchnet::Label::Undefined);
            w.label_valid.push_back(0);
        }
    }
    w.patient_steps = 1 + matchnet::uniform_index(rng, 10);
    return w;
}

} // namespace oracle
