#include "matchnet/ablation.hpp"

#include <ostream>

#include "matchnet/errors.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

FoldRun run_fold(const FoldSeries& fold, const RunSpec& run, std::uint64_t seed) {
    if (fold.series.empty()) {
        throw DataError("fold has no patients");
    }
    ModelSpec spec = run.spec;
    spec.anchor_head = spec.anchor_head || run.augment.dummy_zero_events;
    const auto sets = make_instance_sets(fold, {spec.window_steps, spec.horizon_steps}, run.augment);
    TrainConfig cfg = run.train;
    cfg.seed = derive_seed(seed, 1);
    Model model = Model::build(spec, fold.series.front().covariates.rows, kDiagnosisDim, derive_seed(seed, 0));
    FoldRun out{train(std::move(model), sets.train, sets.validation, cfg), {}, {}};
    out.test = evaluate(out.trained.model, sets.test);
    out.validation = evaluate(out.trained.model, sets.validation);
    return out;
}

AblationResult ablation_run(const PreparedData& data, std::span<const RunSpec> runs, std::uint64_t seed,
                            std::span<const std::size_t> folds) {
    if (runs.empty()) {
        throw ConfigError("ablation needs at least one model family");
    }
    std::vector<std::size_t> fold_ids(folds.begin(), folds.end());
    if (fold_ids.empty()) {
        for (std::size_t f = 0; f < data.folds.size(); ++f) {
            fold_ids.push_back(f);
        }
    }
    AblationResult result;
    for (const auto& run : runs) {
        FamilyResult fr;
        fr.name = run.name;
        for (std::size_t f : fold_ids) {
            if (f >= data.folds.size()) {
                throw ConfigError("fold " + std::to_string(f) + " not present in prepared data");
            }
            fr.folds.push_back(run_fold(data.folds[f], run, derive_seed(seed, f)).test);
        }
        fr.report = aggregate(fr.folds);
        result.families.push_back(std::move(fr));
    }
    for (std::size_t i = 1; i < result.families.size(); ++i) {
        const auto& a = result.families[i - 1];
        const auto& b = result.families[i];
        Gain g{a.name, b.name, {}, {}};
        const std::size_t K = std::min(a.report.auroc.size(), b.report.auroc.size());
        for (std::size_t k = 0; k < K; ++k) {
            g.auroc.push_back(b.report.auroc[k].mean - a.report.auroc[k].mean);
            g.auprc.push_back(b.report.auprc[k].mean - a.report.auprc[k].mean);
        }
        result.gains.push_back(std::move(g));
    }
    return result;
}

void write_gains_csv(std::ostream& out, std::span<const Gain> gains, double delta) {
    out << "from,to,horizon_years,metric,delta\n";
    for (const auto& g : gains) {
        for (std::size_t k = 0; k < g.auroc.size(); ++k) {
            const std::string h = format_double(static_cast<double>(k + 1) * delta);
            out << g.from << ',' << g.to << ',' << h << ",AUROC," << format_double(g.auroc[k]) << '\n';
            out << g.from << ',' << g.to << ',' << h << ",AUPRC," << format_double(g.auprc[k]) << '\n';
        }
    }
}

} // namespace matchnet
