#include "matchnet/pipeline.hpp"

#include <unordered_map>

#include "matchnet/binio.hpp"
#include "matchnet/errors.hpp"
#include "matchnet/models.hpp"

namespace matchnet {

FoldSeries prepare_fold(const Dataset& dataset, const FoldPlan& plan, std::size_t fold, double delta,
                        bool differenced) {
    if (fold >= plan.num_folds) {
        throw ConfigError("fold " + std::to_string(fold) + " out of range for " + std::to_string(plan.num_folds) +
                          " folds");
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < plan.patient_ids.size(); ++i) {
        index.emplace(plan.patient_ids[i], i);
    }
    FoldSeries out;
    out.fold = fold;
    std::vector<GridSeries> raw;
    std::vector<std::uint8_t> is_training;
    raw.reserve(dataset.patients.size());
    for (const auto& p : dataset.patients) {
        const auto it = index.find(p.patient_id);
        if (it == index.end()) {
            throw DataError("patient " + p.patient_id + " is missing from the fold plan");
        }
        const Role role = plan.roles[fold][it->second];
        out.roles.push_back(role);
        is_training.push_back(role == Role::Train ? 1 : 0);
        GridSeries gs = discretize(p, dataset.schema, delta);
        raw.push_back(differenced ? difference_transform(gs) : std::move(gs));
    }
    NormalizedSet norm = normalize(dataset.schema, raw, is_training);
    out.stats = std::move(norm.stats);
    out.series.reserve(norm.series.size());
    for (const auto& gs : norm.series) {
        out.series.push_back(impute(gs));
    }
    return out;
}

InstanceSets make_instance_sets(const FoldSeries& fold, const WindowConfig& window,
                                const AugmentConfig& augment_config) {
    InstanceSets sets;
    for (std::size_t i = 0; i < fold.series.size(); ++i) {
        auto windows = extract_windows(fold.series[i], window);
        auto& dst = fold.roles[i] == Role::Train        ? sets.train
                    : fold.roles[i] == Role::Validation ? sets.validation
                                                        : sets.test;
        std::move(windows.begin(), windows.end(), std::back_inserter(dst));
    }
    sets.train = augment(std::move(sets.train), augment_config);
    return sets;
}

PreparedData prepare(const Dataset& dataset, double delta, std::size_t num_folds, std::uint64_t seed,
                     bool differenced) {
    if (!(delta > 0.0)) {
        throw ConfigError("delta must be positive");
    }
    for (const auto& p : dataset.patients) {
        validate_record(p, dataset.schema);
    }
    PreparedData out;
    out.schema = dataset.schema;
    out.delta = delta;
    out.differenced = differenced;
    out.seed = seed;
    Rng rng(derive_seed(seed, 0));
    const auto subjects = fold_subjects(dataset);
    out.plan = make_folds(subjects, num_folds, rng);
    for (std::size_t f = 0; f < num_folds; ++f) {
        out.folds.push_back(prepare_fold(dataset, out.plan, f, delta, differenced));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void write_matrix(BinaryWriter& out, const Matrix& m) {
    out.u64(m.rows);
    out.u64(m.cols);
    out.f64s(m.data);
}

Matrix read_matrix(BinaryReader& in) {
    Matrix m;
    m.rows = in.u64();
    m.cols = in.u64();
    m.data = in.f64s();
    if (m.data.size() != m.rows * m.cols) {
        throw FormatError("matrix payload does not match its dimensions");
    }
    return m;
}

void write_opt_string(BinaryWriter& out, const std::optional<std::string>& s) {
    out.u8(s ? 1 : 0);
    if (s) {
        out.str(*s);
    }
}

std::optional<std::string> read_opt_string(BinaryReader& in) {
    if (in.u8() == 0) {
        return std::nullopt;
    }
    return in.str();
}

void write_series(BinaryWriter& out, const GridSeries& gs) {
    out.str(gs.patient_id);
    out.f64(gs.delta);
    out.u64(gs.num_steps);
    write_matrix(out, gs.covariates);
    write_matrix(out, gs.mask);
    out.str(std::string_view(reinterpret_cast<const char*>(gs.label_valid.data()), gs.label_valid.size()));
    out.u8(gs.event_step ? 1 : 0);
    out.u64(gs.event_step.value_or(0));
    for (const auto& d : gs.diagnosis_per_step) {
        write_opt_string(out, d);
    }
    out.u8(gs.baseline_event ? 1 : 0);
}

GridSeries read_series(BinaryReader& in) {
    GridSeries gs;
    gs.patient_id = in.str();
    gs.delta = in.f64();
    gs.num_steps = in.u64();
    gs.covariates = read_matrix(in);
    gs.mask = read_matrix(in);
    const auto valid = in.str();
    gs.label_valid.assign(valid.begin(), valid.end());
    const bool has_event = in.u8() != 0;
    const auto event = in.u64();
    if (has_event) {
        gs.event_step = event;
    }
    if (gs.num_steps > in.remaining() || gs.label_valid.size() != gs.num_steps ||
        gs.covariates.cols != gs.num_steps || gs.mask.cols != gs.num_steps) {
        throw FormatError("series " + gs.patient_id + " has inconsistent step counts");
    }
    for (std::size_t t = 0; t < gs.num_steps; ++t) {
        gs.diagnosis_per_step.push_back(read_opt_string(in));
    }
    gs.baseline_event = in.u8() != 0;
    return gs;
}

} // namespace

std::string serialize(const PreparedData& data) {
    BinaryWriter out;
    out.raw(kPreparedMagic);
    out.u32(kPreparedVersion);
    write_schema(out, data.schema);
    out.f64(data.delta);
    out.u8(data.differenced ? 1 : 0);
    out.u64(data.seed);

    const auto& plan = data.plan;
    out.u64(plan.num_folds);
    out.u8(plan.stratified ? 1 : 0);
    out.u64(plan.patient_ids.size());
    for (std::size_t i = 0; i < plan.patient_ids.size(); ++i) {
        out.str(plan.patient_ids[i]);
        out.u8(plan.positive[i]);
    }
    for (const auto& roles : plan.roles) {
        for (Role r : roles) {
            out.u8(static_cast<std::uint8_t>(r));
        }
    }

    out.u64(data.folds.size());
    for (const auto& f : data.folds) {
        out.u64(f.fold);
        write_norm_stats(out, f.stats);
        out.u64(f.series.size());
        for (std::size_t i = 0; i < f.series.size(); ++i) {
            out.u8(static_cast<std::uint8_t>(f.roles[i]));
            write_series(out, f.series[i]);
        }
    }
    return out.take();
}

PreparedData deserialize_prepared(std::string_view bytes) {
    BinaryReader in(bytes);
    if (in.remaining() < kPreparedMagic.size() || in.raw(kPreparedMagic.size()) != kPreparedMagic) {
        throw FormatError("not a prepared-data file (bad magic)");
    }
    const auto version = in.u32();
    if (version != kPreparedVersion) {
        throw FormatError("unsupported prepared-data version " + std::to_string(version) + " (expected " +
                          std::to_string(kPreparedVersion) + ")");
    }
    PreparedData data;
    data.schema = read_schema(in);
    data.delta = in.f64();
    data.differenced = in.u8() != 0;
    data.seed = in.u64();

    auto role_of = [](std::uint8_t v) {
        if (v > 2) {
            throw FormatError("invalid fold role " + std::to_string(v));
        }
        return static_cast<Role>(v);
    };
    auto& plan = data.plan;
    plan.num_folds = in.u64();
    plan.stratified = in.u8() != 0;
    const auto n = in.u64();
    if (n > in.remaining() || plan.num_folds > in.remaining()) {
        throw FormatError("truncated input: fold plan");
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        plan.patient_ids.push_back(in.str());
        plan.positive.push_back(in.u8());
    }
    plan.roles.assign(plan.num_folds, std::vector<Role>(n));
    for (auto& roles : plan.roles) {
        for (auto& r : roles) {
            r = role_of(in.u8());
        }
    }

    const auto n_folds = in.u64();
    if (n_folds > in.remaining()) {
        throw FormatError("truncated input: folds");
    }
    for (std::uint64_t f = 0; f < n_folds; ++f) {
        FoldSeries fs;
        fs.fold = in.u64();
        fs.stats = read_norm_stats(in);
        const auto count = in.u64();
        if (count > in.remaining()) {
            throw FormatError("truncated input: series list");
        }
        for (std::uint64_t i = 0; i < count; ++i) {
            fs.roles.push_back(role_of(in.u8()));
            fs.series.push_back(read_series(in));
        }
        data.folds.push_back(std::move(fs));
    }
    if (!in.at_end()) {
        throw FormatError("trailing bytes after prepared data");
    }
    return data;
}

} // namespace matchnet
