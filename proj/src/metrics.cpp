#include "matchnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "matchnet/errors.hpp"
#include "matchnet/log.hpp"
#include "matchnet/models.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

namespace {

void check_sizes(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("metric: " + std::to_string(scores.size()) + " scores vs " +
                             std::to_string(labels.size()) + " labels");
    }
}

std::vector<std::size_t> order_descending(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

} // namespace

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_sizes(scores, labels);
    const auto idx = order_descending(scores);
    // Sweep from the top; each positive beats every negative below it.
    double concordant = 0.0;
    std::size_t pos_above = 0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::size_t block_pos = 0;
        std::size_t block_neg = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? block_pos : block_neg) += 1;
            ++j;
        }
        concordant += static_cast<double>(pos_above) * static_cast<double>(block_neg) +
                      0.5 * static_cast<double>(block_pos) * static_cast<double>(block_neg);
        pos_above += block_pos;
        n_pos += block_pos;
        n_neg += block_neg;
        i = j;
    }
    if (n_pos == 0 || n_neg == 0) {
        return std::nullopt;
    }
    return concordant / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_sizes(scores, labels);
    const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    if (n_pos == 0) {
        return std::nullopt;
    }
    const auto idx = order_descending(scores);
    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            tp += labels[idx[j]] ? 1 : 0;
            ++j;
        }
        seen = j;
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

HorizonMetrics evaluate_predictions(std::span<const WindowInstance> instances,
                                    std::span<const std::vector<double>> predictions) {
    if (instances.size() != predictions.size()) {
        throw DimensionError("evaluate: " + std::to_string(instances.size()) + " instances vs " +
                             std::to_string(predictions.size()) + " predictions");
    }
    HorizonMetrics out;
    if (instances.empty()) {
        return out;
    }
    const std::size_t K = instances[0].labels.size();
    out.horizons.resize(K);
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    for (std::size_t k = 0; k < K; ++k) {
        s.clear();
        l.clear();
        for (std::size_t i = 0; i < instances.size(); ++i) {
            if (instances[i].counts(k)) {
                s.push_back(predictions[i].at(k));
                l.push_back(instances[i].labels[k] == Label::Positive ? 1 : 0);
            }
        }
        auto& h = out.horizons[k];
        h.n_pos = static_cast<std::size_t>(std::count(l.begin(), l.end(), std::uint8_t{1}));
        h.n_neg = l.size() - h.n_pos;
        h.auroc = auroc(s, l);
        h.auprc = auprc(s, l);
    }
    return out;
}

HorizonMetrics evaluate(const Model& model, std::span<const WindowInstance> instances) {
    const auto preds = model.predict(instances);
    return evaluate_predictions(instances, preds);
}

double composite_score(const HorizonMetrics& metrics, std::span<const double> beta,
                       std::span<const double> gamma) {
    double c = 0.0;
    for (std::size_t k = 0; k < metrics.horizons.size(); ++k) {
        const double b = beta.empty() ? 1.0 : beta[k];
        const double g = gamma.empty() ? 1.0 : gamma[k];
        const auto& h = metrics.horizons[k];
        if (h.auroc) {
            c += b * *h.auroc;
        }
        if (h.auprc) {
            c += g * *h.auprc;
        }
    }
    return c;
}

namespace {

MetricSummary summarize(const std::vector<double>& v) {
    MetricSummary s;
    s.n = v.size();
    if (v.empty()) {
        s.mean = std::nan("");
        s.sd = std::nan("");
        return s;
    }
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        // Shifted by the first value so identical entries give exactly zero.
        const double n = static_cast<double>(v.size());
        double sum = 0.0;
        double sq = 0.0;
        for (double x : v) {
            sum += x - v.front();
            sq += (x - v.front()) * (x - v.front());
        }
        s.sd = std::sqrt(std::max(0.0, (sq - sum * sum / n) / (n - 1.0)));
    }
    return s;
}

} // namespace

CVReport aggregate(std::span<const HorizonMetrics> folds) {
    CVReport r;
    r.num_folds = folds.size();
    std::size_t K = 0;
    for (const auto& f : folds) {
        K = std::max(K, f.horizons.size());
    }
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> roc, pr;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const auto& h = folds[f].horizons;
            if (k < h.size() && h[k].auroc) {
                roc.push_back(*h[k].auroc);
            } else {
                warn("fold " + std::to_string(f) + ", horizon " + std::to_string(k + 1) +
                     ": AUROC undefined, excluded from aggregate");
            }
            if (k < h.size() && h[k].auprc) {
                pr.push_back(*h[k].auprc);
            } else {
                warn("fold " + std::to_string(f) + ", horizon " + std::to_string(k + 1) +
                     ": AUPRC undefined, excluded from aggregate");
            }
        }
        r.auroc.push_back(summarize(roc));
        r.auprc.push_back(summarize(pr));
    }
    return r;
}

void write_report_csv(std::ostream& out, std::span<const NamedReport> reports, double delta) {
    out << "model,horizon_years,metric,mean,sd,n_folds\n";
    for (const auto& nr : reports) {
        for (std::size_t k = 0; k < nr.report.auroc.size(); ++k) {
            const std::string h = format_double(static_cast<double>(k + 1) * delta);
            const auto row = [&](const char* metric, const MetricSummary& s) {
                out << nr.name << ',' << h << ',' << metric << ',' << format_double(s.mean) << ','
                    << format_double(s.sd) << ',' << s.n << '\n';
            };
            row("AUROC", nr.report.auroc[k]);
            row("AUPRC", nr.report.auprc[k]);
        }
    }
}

void write_report_table(std::ostream& out, std::span<const NamedReport> reports, double delta) {
    std::size_t K = 0;
    std::size_t name_w = 5;
    for (const auto& nr : reports) {
        K = std::max(K, nr.report.auroc.size());
        name_w = std::max(name_w, nr.name.size());
    }
    const auto cell = [](const MetricSummary& s) {
        return s.n == 0 ? std::string("n/a") : format_fixed(s.mean, 3) + " ± " + format_fixed(s.sd, 3);
    };
    constexpr std::size_t col_w = 15;
    const auto pad = [](std::string s, std::size_t w) {
        // "±" is two bytes but one column wide.
        const std::size_t shown = s.size() - static_cast<std::size_t>(std::count(s.begin(), s.end(), '\xC2'));
        if (shown < w) {
            s.append(w - shown, ' ');
        }
        return s;
    };
    for (const char* metric : {"AUROC", "AUPRC"}) {
        out << pad(metric, name_w);
        for (std::size_t k = 0; k < K; ++k) {
            out << "  " << pad("tau=" + format_double(static_cast<double>(k + 1) * delta) + "y", col_w);
        }
        out << '\n';
        for (const auto& nr : reports) {
            const auto& v = std::string(metric) == "AUROC" ? nr.report.auroc : nr.report.auprc;
            out << pad(nr.name, name_w);
            for (std::size_t k = 0; k < K; ++k) {
                out << "  " << pad(k < v.size() ? cell(v[k]) : "n/a", col_w);
            }
            out << '\n';
        }
        out << '\n';
    }
}

} // namespace matchnet
