#include "matchnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "matchnet/ablation.hpp"
#include "matchnet/binio.hpp"
#include "matchnet/csv.hpp"
#include "matchnet/errors.hpp"
#include "matchnet/interpret.hpp"
#include "matchnet/log.hpp"
#include "matchnet/synthgen.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

namespace fs = std::filesystem;

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        // Paths and run control.
        {"out", "out", "output directory"},
        {"data", "", "patient CSV (prepare input)"},
        {"prepared", "", "prepared-data container written by prepare"},
        {"checkpoint", "", "model checkpoint written by train or search"},
        {"input", "", "patient CSV to score (predict)"},
        {"patient", "", "restrict predict to one patient id"},
        {"seed", "0", "master seed"},
        {"threads", "1", "worker threads for search"},
        // Grid, windows and folds.
        {"delta", "0.5", "grid resolution in years"},
        {"window", "2.5", "sliding window width in years (multiple of delta)"},
        {"tau_max", "2.5", "largest prediction horizon in years (multiple of delta)"},
        {"folds", "5", "number of cross-validation folds"},
        {"fold", "0", "fold used by train, search, evaluate and saliency"},
        {"fold_list", "", "comma-separated folds for ablate (empty = all)"},
        {"differenced", "false", "feed first differences of the grid series instead of levels"},
        // Model.
        {"family", "MATCH-NET", "MLP, S-MLP, S-TCN, MATCH-NET or MATCH-NET-PLUS"},
        {"families", "MLP,S-MLP,S-TCN,MATCH-NET,MATCH-NET-PLUS", "ordered family list for ablate"},
        {"conv_layers", "1", "convolutional layers"},
        {"filters_main", "32", "filters per layer in the covariate branch"},
        {"filters_mask", "8", "filters per layer in the mask branch"},
        {"filter_width", "2.5", "convolution length in years (multiple of delta)"},
        {"fc_layers", "1", "fully connected layers"},
        {"fc_width", "32", "units per fully connected layer"},
        {"dropout", "0.2", "dropout rate of the fully connected layers"},
        // Optimization.
        {"optimizer", "adam", "adam or sgd"},
        {"learning_rate", "0.003", "step size"},
        {"l1", "0", "elastic-net L1 coefficient"},
        {"l2", "0", "elastic-net L2 coefficient"},
        {"batch_size", "128", "minibatch size"},
        {"max_epochs", "50", "epoch limit"},
        {"eval_every", "10", "iterations between validation evaluations"},
        {"patience", "10", "evaluations without improvement before stopping"},
        {"convergence_beta", "", "comma-separated per-horizon AUROC weights (empty = all 1)"},
        {"convergence_gamma", "", "comma-separated per-horizon AUPRC weights (empty = all 1)"},
        {"loss_weights", "uniform", "uniform, inverse_length or positive_upweight"},
        {"upweight_factor", "1", "multiplier for positive terms under positive_upweight"},
        {"oversample_ratio", "0", "copies of each positive instance: 0 (none), 1, 2, 3, 5 or 10"},
        {"label_forwarding", "false", "mark horizons after a failure as positive"},
        {"dummy_zero_events", "false", "train an auxiliary head on events at the anchor step"},
        // Search.
        {"budget", "100", "random search candidates"},
        {"space_fc_layers", "", "search values for fc_layers (empty = default range)"},
        {"space_conv_layers", "", "search values for conv_layers"},
        {"space_dropout", "", "search values for dropout"},
        {"space_epochs_for_convergence", "", "search values for epochs without improvement"},
        {"space_learning_rate", "", "search values for learning_rate"},
        {"space_l1", "", "search values for l1"},
        {"space_l2", "", "search values for l2"},
        {"space_batch_size", "", "search values for batch_size"},
        {"space_filters_main", "", "search values for filters_main"},
        {"space_filters_mask", "", "search values for filters_mask"},
        {"space_oversample_ratio", "", "search values for oversample_ratio"},
        {"space_fc_width", "", "search values for fc_width"},
        {"space_filter_width", "", "search values for filter width in steps"},
        {"space_window", "", "search values for window width in steps"},
        // Interpretation.
        {"horizon", "", "saliency horizon in years (empty = delta)"},
        {"saliency_samples", "500", "test instances sampled for saliency and scatters"},
        {"scatter_feature", "", "feature name for output scatters (empty = none)"},
        {"mc_samples", "50", "MC dropout passes per scatter point"},
        // Generator.
        {"n_patients", "2000", "synthetic patients"},
        {"max_followup", "10", "follow-up limit in years"},
        {"n_numeric", "4", "longitudinal features"},
        {"n_static", "1", "static numeric features"},
        {"n_categorical", "1", "static categorical features"},
        {"baseline_logodds", "-12.5", "hazard intercept"},
        {"level_coef", "0", "hazard weight of feature levels"},
        {"trend_coef", "1.5", "hazard weight of recent declines"},
        {"trend_lag", "5", "steps over which declines count"},
        {"frailty_sd", "1.5", "sd of the unobserved patient frailty"},
        {"static_coef", "0.25", "hazard weight of static features"},
        {"drift", "0", "per-step drift of the latent decline process"},
        {"walk_sd", "0", "per-step sd of latent random walks"},
        {"shift_prob", "0.1", "per-step probability of a sudden decline"},
        {"shift_size", "1", "mean size of a sudden decline"},
        {"measurement_sd", "0.3", "measurement noise sd"},
        {"base_missing_rate", "0.15", "missingness probability at zero risk"},
        {"informative_coef", "0.25", "missingness log-odds per unit of risk"},
        {"visit_skip_rate", "0.1", "probability of skipping a scheduled visit"},
        {"censoring_rate", "0.08", "per-step dropout probability"},
        {"diagnosis_noise", "0.3", "noise sd of the recorded diagnosis"},
        {"diagnosis_threshold", "7", "risk above which a visit reads MCI"},
        {"baseline_event_rate", "0", "share of patients with the event at baseline"},
        {"target_event_rate", "", "calibrate baseline_logodds to this patient event rate"},
        {"target_window_rate", "", "also calibrate censoring to this one-step positive-window rate"},
        {"calibration_pilot", "2000", "pilot cohort size for calibration"},
    };
    return keys;
}

namespace {

const ConfigKey* find_key(std::string_view name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) {
            return &k;
        }
    }
    return nullptr;
}

} // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::assign(std::string key, std::string value, const std::string& where) {
    if (!find_key(key)) {
        throw ConfigError(where + ": unknown config key '" + key + "'");
    }
    explicit_[std::move(key)] = std::move(value);
}

void RunConfig::load_text(std::string_view text, const std::string& source) {
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        const auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto where = source + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(where + ": expected key=value, got '" + std::string(line) + "'");
        }
        std::string key(trim(line.substr(0, eq)));
        if (const auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " +
                              std::to_string(it->second) + ")");
        }
        seen.emplace(key, line_no);
        assign(std::move(key), std::string(trim(line.substr(eq + 1))), where);
    }
}

void RunConfig::load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    load_text(buf.str(), path.string());
}

void RunConfig::set(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    }
    assign(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))),
           "command line");
}

bool RunConfig::is_explicit(std::string_view key) const {
    return explicit_.find(key) != explicit_.end();
}

std::string RunConfig::str(std::string_view key) const {
    if (const auto it = explicit_.find(key); it != explicit_.end()) {
        return it->second;
    }
    const auto* k = find_key(key);
    if (!k) {
        throw ContractError("config key '" + std::string(key) + "' is not documented");
    }
    return std::string(k->default_value);
}

bool RunConfig::has(std::string_view key) const {
    return !str(key).empty();
}

double RunConfig::real(std::string_view key) const {
    const auto v = parse_double(str(key));
    if (!v) {
        throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + str(key) + "'");
    }
    return *v;
}

std::size_t RunConfig::count(std::string_view key) const {
    const auto v = parse_int(str(key));
    if (!v || *v < 0) {
        throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                          str(key) + "'");
    }
    return static_cast<std::size_t>(*v);
}

std::uint64_t RunConfig::u64(std::string_view key) const {
    const auto s = str(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
        throw ConfigError("config key '" + std::string(key) + "': expected an unsigned integer, got '" + s + "'");
    }
    return v;
}

bool RunConfig::flag(std::string_view key) const {
    const auto v = parse_bool(str(key));
    if (!v) {
        throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + str(key) + "'");
    }
    return *v;
}

std::vector<std::string> RunConfig::list(std::string_view key) const {
    std::vector<std::string> out;
    const auto s = str(key);
    if (s.empty()) {
        return out;
    }
    for (auto part : split(s, ',')) {
        out.emplace_back(trim(part));
    }
    return out;
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& k : config_keys()) {
        out += std::string(k.name) + "=" + str(k.name) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Records inputs and outputs of a run and writes manifest.txt.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& config)
        : command_(std::move(command)), config_(config), dir_(config.str("out")) {
        fs::create_directories(dir_);
    }

    std::string read_input(const std::string& key) {
        if (!config_.has(key)) {
            throw ConfigError("'" + command_ + "' needs config key '" + key + "'");
        }
        const fs::path path = config_.str(key);
        if (!fs::exists(path)) {
            throw DataError("input file not found: " + path.string());
        }
        std::string bytes = read_file(path);
        inputs_.push_back({path.string(), hex64(fnv1a64(bytes))});
        return bytes;
    }

    fs::path write_output(const std::string& name, std::string_view bytes) {
        const fs::path path = dir_ / name;
        write_file(path, bytes);
        outputs_.push_back({name, hex64(fnv1a64(bytes))});
        return path;
    }

    void finish() {
        std::ostringstream m;
        m << "# matchnet " << command_ << "\n";
        m << "# seed " << config_.str("seed") << "\n";
        for (const auto& [p, h] : inputs_) {
            m << "# input " << p << " fnv1a64=" << h << "\n";
        }
        for (const auto& [p, h] : outputs_) {
            m << "# output " << p << " fnv1a64=" << h << "\n";
        }
        m << config_.dump();
        write_file(dir_ / "manifest.txt", m.str());
    }

private:
    std::string command_;
    const RunConfig& config_;
    fs::path dir_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::pair<std::string, std::string>> outputs_;
};

std::size_t to_steps(const RunConfig& c, std::string_view key, double delta) {
    const double years = c.real(key);
    const double steps = years / delta;
    const double rounded = std::round(steps);
    if (!(years > 0.0) || std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
        throw ConfigError("config key '" + std::string(key) + "' = " + c.str(key) +
                          " is not a positive multiple of delta = " + format_double(delta));
    }
    return static_cast<std::size_t>(rounded);
}

Family family_from(std::string_view name) {
    const auto f = parse_family(name);
    if (!f) {
        throw ConfigError("unknown model family '" + std::string(name) + "'");
    }
    return *f;
}

std::vector<double> real_list(const RunConfig& c, std::string_view key) {
    std::vector<double> out;
    for (const auto& s : c.list(key)) {
        const auto v = parse_double(s);
        if (!v) {
            throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not a number");
        }
        out.push_back(*v);
    }
    return out;
}

std::vector<std::size_t> count_list(const RunConfig& c, std::string_view key) {
    std::vector<std::size_t> out;
    for (const auto& s : c.list(key)) {
        const auto v = parse_int(s);
        if (!v || *v < 0) {
            throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not a non-negative integer");
        }
        out.push_back(static_cast<std::size_t>(*v));
    }
    return out;
}

RunSpec run_spec(const RunConfig& c, Family family, double delta) {
    RunSpec r;
    r.name = std::string(family_name(family));
    auto& s = r.spec;
    s.family = family;
    s.horizon_steps = to_steps(c, "tau_max", delta);
    s.window_steps = family == Family::Mlp ? 1 : to_steps(c, "window", delta);
    s.conv_layers = c.count("conv_layers");
    s.filters_main = c.count("filters_main");
    s.filters_mask = c.count("filters_mask");
    s.filter_width = to_steps(c, "filter_width", delta);
    s.fc_layers = c.count("fc_layers");
    s.fc_width = c.count("fc_width");
    s.dropout = c.real("dropout");

    r.augment.oversample_ratio = c.count("oversample_ratio");
    r.augment.label_forwarding = c.flag("label_forwarding");
    r.augment.dummy_zero_events = c.flag("dummy_zero_events");
    s.anchor_head = r.augment.dummy_zero_events;
    s.validate();

    auto& t = r.train;
    const auto opt = c.str("optimizer");
    if (opt == "adam") {
        t.optimizer.kind = OptimizerKind::Adam;
    } else if (opt == "sgd") {
        t.optimizer.kind = OptimizerKind::Sgd;
    } else {
        throw ConfigError("optimizer must be adam or sgd, got '" + opt + "'");
    }
    t.optimizer.learning_rate = c.real("learning_rate");
    t.optimizer.l1 = c.real("l1");
    t.optimizer.l2 = c.real("l2");
    if (t.optimizer.learning_rate < 0.0 || t.optimizer.l1 < 0.0 || t.optimizer.l2 < 0.0) {
        throw ConfigError("learning_rate, l1 and l2 must be non-negative");
    }
    t.batch_size = c.count("batch_size");
    const auto mode = parse_weight_mode(c.str("loss_weights"));
    if (!mode) {
        throw ConfigError("loss_weights must be uniform, inverse_length or positive_upweight");
    }
    t.loss.mode = *mode;
    t.loss.factor = c.real("upweight_factor");
    if (!(t.loss.factor > 0.0)) {
        throw ConfigError("upweight_factor must be positive");
    }
    t.convergence.max_epochs = c.count("max_epochs");
    t.convergence.eval_every = c.count("eval_every");
    t.convergence.patience = c.count("patience");
    t.convergence.beta = real_list(c, "convergence_beta");
    t.convergence.gamma = real_list(c, "convergence_gamma");
    t.convergence.validate(s.horizon_steps);
    return r;
}

GenConfig gen_config(const RunConfig& c) {
    GenConfig g;
    g.n_patients = c.count("n_patients");
    g.delta = c.real("delta");
    g.max_followup = c.real("max_followup");
    g.n_numeric = c.count("n_numeric");
    g.n_static = c.count("n_static");
    g.n_categorical = c.count("n_categorical");
    g.baseline_logodds = c.real("baseline_logodds");
    g.level_coef = c.real("level_coef");
    g.trend_coef = c.real("trend_coef");
    g.trend_lag = c.count("trend_lag");
    g.frailty_sd = c.real("frailty_sd");
    g.static_coef = c.real("static_coef");
    g.drift = c.real("drift");
    g.walk_sd = c.real("walk_sd");
    g.shift_prob = c.real("shift_prob");
    g.shift_size = c.real("shift_size");
    g.measurement_sd = c.real("measurement_sd");
    g.base_missing_rate = c.real("base_missing_rate");
    g.informative_coef = c.real("informative_coef");
    g.visit_skip_rate = c.real("visit_skip_rate");
    g.censoring_rate = c.real("censoring_rate");
    g.diagnosis_noise = c.real("diagnosis_noise");
    g.diagnosis_threshold = c.real("diagnosis_threshold");
    g.baseline_event_rate = c.real("baseline_event_rate");
    g.seed = c.u64("seed");
    return g;
}

PreparedData load_prepared(Manifest& m) {
    return deserialize_prepared(m.read_input("prepared"));
}

Checkpoint load_checkpoint(Manifest& m) {
    return deserialize(m.read_input("checkpoint"));
}

const FoldSeries& pick_fold(const PreparedData& data, const RunConfig& c) {
    const std::size_t fold = c.count("fold");
    if (fold >= data.folds.size()) {
        throw ConfigError("fold " + std::to_string(fold) + " not present (prepared data has " +
                          std::to_string(data.folds.size()) + " folds)");
    }
    return data.folds[fold];
}

std::string metrics_csv(const HorizonMetrics& m, double delta) {
    std::ostringstream out;
    out << "horizon_years,auroc,auprc,n_pos,n_neg\n";
    for (std::size_t k = 0; k < m.horizons.size(); ++k) {
        const auto& h = m.horizons[k];
        out << format_double(static_cast<double>(k + 1) * delta) << ','
            << (h.auroc ? format_double(*h.auroc) : "") << ',' << (h.auprc ? format_double(*h.auprc) : "") << ','
            << h.n_pos << ',' << h.n_neg << '\n';
    }
    return out.str();
}

void print_metrics(std::ostream& out, const HorizonMetrics& m, double delta) {
    for (std::size_t k = 0; k < m.horizons.size(); ++k) {
        const auto& h = m.horizons[k];
        out << "  tau=" << format_double(static_cast<double>(k + 1) * delta) << "y  AUROC "
            << (h.auroc ? format_fixed(*h.auroc, 4) : "n/a") << "  AUPRC "
            << (h.auprc ? format_fixed(*h.auprc, 4) : "n/a") << "  (" << h.n_pos << " pos / " << h.n_neg
            << " neg)\n";
    }
}

void check_schema(const Checkpoint& ckpt, const FeatureSchema& schema, const std::string& what) {
    if (!(ckpt.schema == schema)) {
        throw DataError(what + " has a different feature schema than the checkpoint");
    }
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_generate(const RunConfig& c, std::ostream& out) {
    Manifest m("generate", c);
    GenConfig g = gen_config(c);
    if (c.has("target_event_rate")) {
        std::optional<double> window;
        if (c.has("target_window_rate")) {
            window = c.real("target_window_rate");
        }
        g = calibrate(g, c.real("target_event_rate"), window, c.count("calibration_pilot"));
        out << "calibrated baseline_logodds=" << format_double(g.baseline_logodds)
            << " censoring_rate=" << format_double(g.censoring_rate) << '\n';
    }
    const auto data = generate(g);
    std::ostringstream csv, truth, params;
    write_dataset_csv(csv, data.dataset);
    write_truth_csv(truth, g, data.truth);
    params << "baseline_logodds=" << format_double(g.baseline_logodds) << '\n'
           << "censoring_rate=" << format_double(g.censoring_rate) << '\n';
    m.write_output("data.csv", csv.str());
    m.write_output("truth.csv", truth.str());
    m.write_output("generator.txt", params.str());
    const auto rates = measure_rates(data.dataset, g.delta);
    out << "generated " << data.dataset.patients.size() << " patients: event rate "
        << format_fixed(rates.patient_event_rate, 4) << ", one-step positive windows "
        << format_fixed(rates.window_positive_rate, 4) << '\n';
    m.finish();
}

void cmd_prepare(const RunConfig& c, std::ostream& out) {
    Manifest m("prepare", c);
    std::istringstream in(m.read_input("data"));
    const Dataset dataset = read_dataset_csv(in, c.str("data"));
    const PreparedData data = prepare(dataset, c.real("delta"), c.count("folds"), c.u64("seed"), c.flag("differenced"));
    m.write_output("prepared.bin", serialize(data));
    std::ostringstream folds;
    folds << "patient_id,positive";
    for (std::size_t f = 0; f < data.plan.num_folds; ++f) {
        folds << ",fold" << f;
    }
    folds << '\n';
    static constexpr std::array<const char*, 3> kRoleNames = {"train", "validation", "test"};
    for (std::size_t i = 0; i < data.plan.patient_ids.size(); ++i) {
        folds << data.plan.patient_ids[i] << ',' << static_cast<int>(data.plan.positive[i]);
        for (std::size_t f = 0; f < data.plan.num_folds; ++f) {
            folds << ',' << kRoleNames[static_cast<std::size_t>(data.plan.roles[f][i])];
        }
        folds << '\n';
    }
    m.write_output("folds.csv", folds.str());
    out << "prepared " << dataset.patients.size() << " patients into " << data.plan.num_folds << " folds"
        << (data.plan.stratified ? "" : " (unstratified)") << '\n';
    m.finish();
}

Checkpoint make_checkpoint(Model model, const PreparedData& data, const FoldSeries& fold) {
    return Checkpoint{std::move(model), data.schema, fold.stats, data.delta, data.differenced};
}

void cmd_train(const RunConfig& c, std::ostream& out) {
    Manifest m("train", c);
    const PreparedData data = load_prepared(m);
    const FoldSeries& fold = pick_fold(data, c);
    const RunSpec run = run_spec(c, family_from(c.str("family")), data.delta);
    FoldRun result = run_fold(fold, run, c.u64("seed"));
    std::ostringstream history;
    write_history_csv(history, result.trained.history);
    m.write_output("history.csv", history.str());
    m.write_output("metrics.csv", metrics_csv(result.test, data.delta));
    m.write_output("model.ckpt", serialize(make_checkpoint(std::move(result.trained.model), data, fold)));
    out << run.name << " trained on fold " << fold.fold << ": " << result.trained.iterations << " iterations, best "
        << "validation score " << format_fixed(result.trained.best_score, 4) << " at iteration "
        << result.trained.best_iteration << "\ntest metrics:\n";
    print_metrics(out, result.test, data.delta);
    m.finish();
}

SearchSpace search_space(const RunConfig& c) {
    SearchSpace s;
    const auto sizes = [&](std::string_view key, std::vector<std::size_t>& dst) {
        if (c.has(key)) {
            dst = count_list(c, key);
        }
    };
    const auto reals = [&](std::string_view key, std::vector<double>& dst) {
        if (c.has(key)) {
            dst = real_list(c, key);
        }
    };
    sizes("space_fc_layers", s.fc_layers);
    sizes("space_conv_layers", s.conv_layers);
    reals("space_dropout", s.dropout);
    sizes("space_epochs_for_convergence", s.epochs_for_convergence);
    reals("space_learning_rate", s.learning_rate);
    reals("space_l1", s.l1);
    reals("space_l2", s.l2);
    sizes("space_batch_size", s.batch_size);
    sizes("space_filters_main", s.filters_main);
    sizes("space_filters_mask", s.filters_mask);
    sizes("space_oversample_ratio", s.oversample_ratio);
    sizes("space_fc_width", s.fc_width);
    sizes("space_filter_width", s.filter_width);
    sizes("space_window", s.window_steps);
    return s;
}

void cmd_search(const RunConfig& c, std::ostream& out) {
    Manifest m("search", c);
    const PreparedData data = load_prepared(m);
    const FoldSeries& fold = pick_fold(data, c);
    const RunSpec base = run_spec(c, family_from(c.str("family")), data.delta);
    SearchConfig sc;
    sc.budget = c.count("budget");
    sc.seed = c.u64("seed");
    sc.threads = std::max<std::size_t>(1, c.count("threads"));
    SearchResult result = random_search(search_space(c), fold, base.spec, base.train, base.augment, sc);
    std::ostringstream board;
    write_leaderboard_csv(board, result.leaderboard);
    m.write_output("leaderboard.csv", board.str());
    m.write_output("model.ckpt", serialize(make_checkpoint(std::move(*result.best_model), data, fold)));
    const auto& best = result.leaderboard.front();
    out << "searched " << result.leaderboard.size() << " candidates; best #" << best.candidate.index
        << " with validation score " << format_fixed(best.score, 4) << '\n';
    m.finish();
}

void cmd_evaluate(const RunConfig& c, std::ostream& out) {
    Manifest m("evaluate", c);
    const PreparedData data = load_prepared(m);
    const Checkpoint ckpt = load_checkpoint(m);
    check_schema(ckpt, data.schema, "prepared data");
    const FoldSeries& fold = pick_fold(data, c);
    if (!(ckpt.norm_stats == fold.stats)) {
        warn("checkpoint normalization statistics differ from fold " + std::to_string(fold.fold) +
             "; the model was trained on another fold");
    }
    const auto& spec = ckpt.model.spec();
    const auto sets = make_instance_sets(fold, {spec.window_steps, spec.horizon_steps}, {});
    const HorizonMetrics metrics = evaluate(ckpt.model, sets.test);
    m.write_output("metrics.csv", metrics_csv(metrics, data.delta));
    out << family_name(spec.family) << " on fold " << fold.fold << " test patients (" << sets.test.size()
        << " windows):\n";
    print_metrics(out, metrics, data.delta);
    m.finish();
}

void cmd_ablate(const RunConfig& c, std::ostream& out) {
    Manifest m("ablate", c);
    const PreparedData data = load_prepared(m);
    std::vector<RunSpec> runs;
    for (const auto& name : c.list("families")) {
        runs.push_back(run_spec(c, family_from(name), data.delta));
    }
    const auto folds = count_list(c, "fold_list");
    const AblationResult result = ablation_run(data, runs, c.u64("seed"), folds);
    std::vector<NamedReport> reports;
    for (const auto& f : result.families) {
        reports.push_back({f.name, f.report});
    }
    std::ostringstream csv, table, gains;
    write_report_csv(csv, reports, data.delta);
    write_report_table(table, reports, data.delta);
    write_gains_csv(gains, result.gains, data.delta);
    m.write_output("report.csv", csv.str());
    m.write_output("report.txt", table.str());
    m.write_output("gains.csv", gains.str());
    out << table.str();
    m.finish();
}

std::vector<WindowInstance> sample_instances(std::vector<WindowInstance> all, std::size_t n, std::uint64_t seed) {
    if (all.size() <= n) {
        return all;
    }
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, 7));
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<WindowInstance> out;
    for (auto i : idx) {
        out.push_back(std::move(all[i]));
    }
    return out;
}

void cmd_saliency(const RunConfig& c, std::ostream& out) {
    Manifest m("saliency", c);
    const PreparedData data = load_prepared(m);
    const Checkpoint ckpt = load_checkpoint(m);
    check_schema(ckpt, data.schema, "prepared data");
    const FoldSeries& fold = pick_fold(data, c);
    const auto& spec = ckpt.model.spec();
    auto sets = make_instance_sets(fold, {spec.window_steps, spec.horizon_steps}, {});
    const auto sample = sample_instances(std::move(sets.test), c.count("saliency_samples"), c.u64("seed"));
    const std::size_t horizon = c.has("horizon") ? to_steps(c, "horizon", data.delta) : 1;
    const auto names = ckpt.norm_stats.encoded_names();

    const SaliencyMap sx = saliency_map(ckpt.model, sample, horizon, Stream::Covariates);
    const SaliencyMap sz = saliency_map(ckpt.model, sample, horizon, Stream::Mask);
    std::ostringstream x_csv, z_csv, heat;
    write_saliency_csv(x_csv, sx, names);
    write_saliency_csv(z_csv, sz, names);
    heat << "covariates (tau=" << format_double(static_cast<double>(horizon) * data.delta) << "y, "
         << sx.sample_size << " windows)\n";
    write_saliency_heatmap(heat, sx, names);
    heat << "\nmasks\n";
    write_saliency_heatmap(heat, sz, names);
    m.write_output("saliency_x.csv", x_csv.str());
    m.write_output("saliency_z.csv", z_csv.str());
    m.write_output("heatmap.txt", heat.str());

    if (c.has("scatter_feature")) {
        const auto name = c.str("scatter_feature");
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
            throw ConfigError("scatter_feature '" + name + "' is not a model input");
        }
        const auto feature = static_cast<std::size_t>(it - names.begin());
        const auto grid = decile_grid(observed_values(sample, feature));
        std::ostringstream sc;
        sc << "mode,value,mean,mc_sd\n";
        for (auto [mode, label] : {std::pair{ScatterMode::FinalValueOnly, "final_value"},
                                   std::pair{ScatterMode::AllValues, "all_values"}}) {
            Rng rng(derive_seed(c.u64("seed"), 11));
            for (const auto& p : output_scatter(ckpt.model, sample, feature, grid, mode, horizon,
                                                c.count("mc_samples"), rng)) {
                sc << label << ',' << format_double(p.value) << ',' << format_double(p.mean) << ','
                   << format_double(p.mc_sd) << '\n';
            }
        }
        m.write_output("scatter.csv", sc.str());
    }
    out << heat.str();
    m.finish();
}

void cmd_predict(const RunConfig& c, std::ostream& out) {
    Manifest m("predict", c);
    const Checkpoint ckpt = load_checkpoint(m);
    std::istringstream in(m.read_input("input"));
    const Dataset dataset = read_dataset_csv(in, c.str("input"));
    check_schema(ckpt, dataset.schema, "input " + c.str("input"));
    const auto& spec = ckpt.model.spec();
    const std::string only = c.str("patient");
    std::ostringstream csv;
    csv << "patient_id,anchor_time_years,horizon_years,risk\n";
    std::size_t scored = 0;
    for (const auto& p : dataset.patients) {
        if (!only.empty() && p.patient_id != only) {
            continue;
        }
        validate_record(p, dataset.schema);
        GridSeries gs = discretize(p, dataset.schema, ckpt.delta);
        if (ckpt.differenced) {
            gs = difference_transform(gs);
        }
        const auto windows = extract_windows(impute(apply_normalization(gs, ckpt.norm_stats)),
                                             WindowConfig{spec.window_steps, spec.horizon_steps});
        const auto preds = ckpt.model.predict(windows);
        for (std::size_t i = 0; i < windows.size(); ++i) {
            for (std::size_t k = 0; k < preds[i].size(); ++k) {
                csv << p.patient_id << ',' << format_double(static_cast<double>(windows[i].anchor_step) * ckpt.delta)
                    << ',' << format_double(static_cast<double>(k + 1) * ckpt.delta) << ','
                    << format_double(preds[i][k]) << '\n';
            }
        }
        ++scored;
    }
    if (!only.empty() && scored == 0) {
        throw DataError("patient '" + only + "' not found in " + c.str("input"));
    }
    m.write_output("predictions.csv", csv.str());
    out << "scored " << scored << " patients\n";
    m.finish();
}

void cmd_keys(std::ostream& out) {
    for (const auto& k : config_keys()) {
        out << k.name << " (default: " << (k.default_value.empty() ? "unset" : k.default_value) << ")\n    "
            << k.help << '\n';
    }
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dynamic survival prediction with missingness-aware temporal convolutions"};
    app.name("matchnet");
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> overrides;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"generate", "write a synthetic cohort (data.csv, truth.csv)"},
        {"prepare", "discretize, normalize and split a patient CSV into folds"},
        {"train", "train one model family on one fold"},
        {"search", "random hyperparameter search on one fold"},
        {"evaluate", "score a checkpoint on a fold's test patients"},
        {"ablate", "train a list of families on identical folds and report gains"},
        {"saliency", "saliency maps and output scatters for a checkpoint"},
        {"predict", "per-anchor risk trajectories for patients in a CSV"},
        {"keys", "list every config key with its default"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        if (name != "keys") {
            sub->add_option("-c,--config", config_path, "key=value config file");
            sub->add_option("overrides", overrides, "key=value settings, applied after the config file");
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    WarningSink previous = set_warning_sink([&err](std::string_view msg) { err << "warning: " << msg << '\n'; });
    struct Restore {
        WarningSink& sink;
        ~Restore() { set_warning_sink(std::move(sink)); }
    } restore{previous};

    try {
        if (command == "keys") {
            cmd_keys(out);
            return 0;
        }
        RunConfig config;
        if (!config_path.empty()) {
            config.load_file(config_path);
        }
        for (const auto& o : overrides) {
            config.set(o);
        }
        if (command == "generate") {
            cmd_generate(config, out);
        } else if (command == "prepare") {
            cmd_prepare(config, out);
        } else if (command == "train") {
            cmd_train(config, out);
        } else if (command == "search") {
            cmd_search(config, out);
        } else if (command == "evaluate") {
            cmd_evaluate(config, out);
        } else if (command == "ablate") {
            cmd_ablate(config, out);
        } else if (command == "saliency") {
            cmd_saliency(config, out);
        } else if (command == "predict") {
            cmd_predict(config, out);
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace matchnet
