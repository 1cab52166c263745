#include "matchnet/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "matchnet/errors.hpp"
#include "matchnet/log.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

std::string_view weight_mode_name(WeightMode mode) {
    switch (mode) {
    case WeightMode::Uniform:
        return "uniform";
    case WeightMode::PerPatientInverseLength:
        return "inverse_length";
    case WeightMode::PositiveUpweight:
        return "positive_upweight";
    }
    return "?";
}

std::optional<WeightMode> parse_weight_mode(std::string_view name) {
    for (auto m : {WeightMode::Uniform, WeightMode::PerPatientInverseLength, WeightMode::PositiveUpweight}) {
        if (name == weight_mode_name(m)) {
            return m;
        }
    }
    return std::nullopt;
}

double LossWeights::alpha(const WindowInstance& instance, bool positive_target) const {
    double a = instance.weight;
    switch (mode) {
    case WeightMode::Uniform:
        break;
    case WeightMode::PerPatientInverseLength:
        a /= static_cast<double>(std::max<std::size_t>(instance.patient_steps, 1));
        break;
    case WeightMode::PositiveUpweight:
        if (positive_target) {
            a *= factor;
        }
        break;
    }
    return a;
}

double term_loss(int s, double p, double eps) {
    const double q = std::clamp(p, eps, 1.0 - eps);
    return -(s * std::log(q) + (1 - s) * std::log(1.0 - q));
}

std::optional<Tensor> total_loss(std::span<const WindowInstance* const> batch, const Model::Output& output,
                                 const LossWeights& weights) {
    const std::size_t B = batch.size();
    const auto& probs = output.probabilities;
    if (probs.rank() != 2 || probs.dim(0) != B) {
        throw DimensionError("total_loss: predictions " + shape_to_string(probs.shape()) + " do not align with " +
                             std::to_string(B) + " instances");
    }
    const std::size_t K = probs.dim(1);
    std::vector<double> targets(B * K, 0.0), w(B * K, 0.0);
    std::vector<double> anchor_targets(B, 0.0), anchor_w(B, 0.0);
    double w_main = 0.0;
    double w_anchor = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const auto& inst = *batch[i];
        if (inst.labels.size() != K) {
            throw DimensionError("total_loss: instance has " + std::to_string(inst.labels.size()) +
                                 " horizons, model predicts " + std::to_string(K));
        }
        for (std::size_t k = 0; k < K; ++k) {
            if (inst.counts(k)) {
                const bool pos = inst.labels[k] == Label::Positive;
                targets[i * K + k] = pos ? 1.0 : 0.0;
                w[i * K + k] = weights.alpha(inst, pos);
                w_main += w[i * K + k];
            }
        }
        if (inst.anchor_target) {
            anchor_targets[i] = inst.event_at_anchor ? 1.0 : 0.0;
            anchor_w[i] = weights.alpha(inst, inst.event_at_anchor);
            w_anchor += anchor_w[i];
        }
    }
    if (w_anchor > 0.0 && !output.anchor_probabilities) {
        throw ContractError("total_loss: instances carry tau = 0 targets but the model has no anchor head");
    }
    const double w_total = w_main + w_anchor;
    if (!(w_total > 0.0)) {
        return std::nullopt;
    }
    std::optional<Tensor> loss;
    if (w_main > 0.0) {
        loss = scale(binary_cross_entropy(probs, targets, w), w_main / w_total);
    }
    if (w_anchor > 0.0) {
        Tensor a = scale(binary_cross_entropy(*output.anchor_probabilities, anchor_targets, anchor_w),
                         w_anchor / w_total);
        loss = loss ? add(*loss, a) : a;
    }
    return loss;
}

std::optional<Tensor> total_loss(std::span<const WindowInstance> batch, const Model::Output& output,
                                 const LossWeights& weights) {
    std::vector<const WindowInstance*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& i : batch) {
        ptrs.push_back(&i);
    }
    return total_loss(ptrs, output, weights);
}

// ---------------------------------------------------------------------------

void ConvergenceConfig::validate(std::size_t horizon_steps) const {
    for (const auto* v : {&beta, &gamma}) {
        if (!v->empty() && v->size() != horizon_steps) {
            throw ConfigError("convergence weights need one entry per horizon (" + std::to_string(horizon_steps) +
                              "), got " + std::to_string(v->size()));
        }
        for (double x : *v) {
            if (!(x >= 0.0)) {
                throw ConfigError("convergence weights must be non-negative");
            }
        }
    }
    const auto positive = [](const std::vector<double>& v) {
        return v.empty() || std::any_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
    };
    if (!positive(beta) && !positive(gamma)) {
        throw ConfigError("convergence weights are all zero");
    }
    if (eval_every == 0 || max_epochs == 0) {
        throw ConfigError("eval_every and max_epochs must be positive");
    }
}

TrainResult train(Model model, std::span<const WindowInstance> train_set,
                  std::span<const WindowInstance> validation_set, const TrainConfig& config) {
    const auto& conv = config.convergence;
    conv.validate(model.spec().horizon_steps);
    if (config.batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    if (train_set.empty()) {
        throw DataError("training set is empty");
    }

    Rng order_rng(derive_seed(config.seed, 1));
    Rng dropout_rng(derive_seed(config.seed, 2));
    Optimizer optimizer(config.optimizer);
    const bool has_validation = !validation_set.empty();

    const auto score_now = [&] {
        return composite_score(evaluate(model, validation_set), conv.beta, conv.gamma);
    };

    TrainResult result{model, {}, 0.0, 0, 0, 0, StopReason::MaxEpochs};
    if (has_validation) {
        result.best_score = score_now();
        result.history.push_back({0, 0, std::nan(""), result.best_score});
    } else {
        result.stop = StopReason::NoValidation;
    }

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const WindowInstance*> batch;
    std::size_t iteration = 0;
    std::size_t stale = 0;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool stop = false;

    for (std::size_t epoch = 1; epoch <= conv.max_epochs && !stop; ++epoch) {
        result.epochs = epoch;
        shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t j = start; j < end; ++j) {
                batch.push_back(&train_set[order[j]]);
            }
            const auto out = model.forward(make_batch(batch), true, &dropout_rng);
            const auto loss = total_loss(batch, out, config.loss);
            if (!loss) {
                continue;
            }
            const double value = loss->item();
            if (!std::isfinite(value)) {
                throw NumericalError("training diverged: non-finite loss at iteration " +
                                     std::to_string(iteration + 1) + " (epoch " + std::to_string(epoch) + ")");
            }
            loss->backward();
            optimizer.step(model.parameters());
            ++iteration;
            loss_sum += value;
            ++loss_count;

            if (has_validation && iteration % conv.eval_every == 0) {
                const double c = score_now();
                result.history.push_back({iteration, epoch, loss_sum / static_cast<double>(loss_count), c});
                loss_sum = 0.0;
                loss_count = 0;
                if (c > result.best_score) {
                    result.best_score = c;
                    result.best_iteration = iteration;
                    result.model.load_parameter_values(model);
                    stale = 0;
                } else if (++stale >= conv.patience) {
                    result.stop = StopReason::Patience;
                    stop = true;
                }
            }
        }
    }
    result.iterations = iteration;
    if (!has_validation) {
        result.model = std::move(model);
        result.best_iteration = iteration;
    }
    return result;
}

void write_history_csv(std::ostream& out, std::span<const HistoryEntry> history) {
    out << "iteration,epoch,train_loss,score\n";
    for (const auto& h : history) {
        out << h.iteration << ',' << h.epoch << ',' << (std::isnan(h.train_loss) ? "" : format_double(h.train_loss))
            << ',' << format_double(h.score) << '\n';
    }
}

// ---------------------------------------------------------------------------

void SearchSpace::validate() const {
    const auto nonempty = [](const auto& v, const char* name) {
        if (v.empty()) {
            throw ConfigError(std::string("search space: '") + name + "' has no values");
        }
    };
    nonempty(fc_layers, "fc_layers");
    nonempty(conv_layers, "conv_layers");
    nonempty(dropout, "dropout");
    nonempty(epochs_for_convergence, "epochs_for_convergence");
    nonempty(learning_rate, "learning_rate");
    nonempty(l1, "l1");
    nonempty(l2, "l2");
    nonempty(batch_size, "batch_size");
    nonempty(filters_main, "filters_main");
    nonempty(filters_mask, "filters_mask");
    nonempty(oversample_ratio, "oversample_ratio");
    nonempty(fc_width, "fc_width");
    nonempty(filter_width, "filter_width");
    nonempty(window_steps, "window_steps");
    for (auto r : oversample_ratio) {
        if (!is_valid_oversample_ratio(r)) {
            throw ConfigError("search space: invalid oversample ratio " + std::to_string(r));
        }
    }
}

namespace {

template <typename T>
T pick(const std::vector<T>& v, Rng& rng) {
    return v[uniform_index(rng, v.size())];
}

bool structurally_valid(const ModelSpec& spec) {
    try {
        spec.validate();
        return true;
    } catch (const SpecError&) {
        return false;
    }
}

} // namespace

Candidate sample_candidate(const SearchSpace& space, const ModelSpec& base_spec, const TrainConfig& base_train,
                           const AugmentConfig& base_augment, Rng& rng) {
    constexpr int kMaxDraws = 100000;
    for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
        Candidate c;
        c.spec = base_spec;
        c.train = base_train;
        c.augment = base_augment;
        // All dimensions are drawn on every attempt, used or not.
        c.spec.fc_layers = pick(space.fc_layers, rng);
        const auto conv_layers = pick(space.conv_layers, rng);
        c.spec.dropout = pick(space.dropout, rng);
        c.epochs_for_convergence = pick(space.epochs_for_convergence, rng);
        c.train.optimizer.learning_rate = pick(space.learning_rate, rng);
        c.train.optimizer.l1 = pick(space.l1, rng);
        c.train.optimizer.l2 = pick(space.l2, rng);
        c.train.batch_size = pick(space.batch_size, rng);
        const auto filters_main = pick(space.filters_main, rng);
        const auto filters_mask = pick(space.filters_mask, rng);
        c.augment.oversample_ratio = pick(space.oversample_ratio, rng);
        c.spec.fc_width = pick(space.fc_width, rng);
        const auto filter_width = pick(space.filter_width, rng);
        const auto window = pick(space.window_steps, rng);

        if (c.spec.family != Family::Mlp) {
            c.spec.window_steps = window;
        }
        if (c.spec.is_convolutional()) {
            c.spec.conv_layers = conv_layers;
            c.spec.filters_main = filters_main;
            c.spec.filter_width = filter_width;
        }
        if (c.spec.use_mask_stream()) {
            c.spec.filters_mask = filters_mask;
        }
        if (structurally_valid(c.spec)) {
            return c;
        }
    }
    throw ConfigError("search space admits no valid " + std::string(family_name(base_spec.family)) +
                      " configuration");
}

std::size_t patience_for_epochs(std::size_t epochs, std::size_t train_size, std::size_t batch_size,
                                std::size_t eval_every) {
    const std::size_t per_epoch = (train_size + batch_size - 1) / batch_size;
    const std::size_t iters = epochs * per_epoch;
    return std::max<std::size_t>(1, (iters + eval_every - 1) / eval_every);
}

SearchResult random_search(const SearchSpace& space, const FoldSeries& fold, const ModelSpec& base_spec,
                           const TrainConfig& base_train, const AugmentConfig& base_augment,
                           const SearchConfig& config) {
    if (config.budget == 0) {
        throw ConfigError("search budget must be at least 1");
    }
    space.validate();
    Rng rng(derive_seed(config.seed, 0));
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < config.budget; ++i) {
        candidates.push_back(sample_candidate(space, base_spec, base_train, base_augment, rng));
        candidates.back().index = i;
        candidates.back().train.seed = derive_seed(config.seed, i + 1);
    }

    std::vector<LeaderboardEntry> board(candidates.size());
    std::vector<std::optional<Model>> models(candidates.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;

    const auto worker = [&] {
        for (std::size_t i = next++; i < candidates.size(); i = next++) {
            try {
                auto& c = candidates[i];
                c.spec.anchor_head = c.augment.dummy_zero_events;
                const auto sets = make_instance_sets(fold, {c.spec.window_steps, c.spec.horizon_steps}, c.augment);
                c.train.convergence.patience = patience_for_epochs(
                    c.epochs_for_convergence, sets.train.size(), c.train.batch_size, c.train.convergence.eval_every);
                Model m = Model::build(c.spec, fold.series.front().covariates.rows, kDiagnosisDim, c.train.seed);
                auto res = train(std::move(m), sets.train, sets.validation, c.train);
                board[i] = {c, res.best_score, res.iterations};
                if (config.keep_best_model) {
                    models[i] = std::move(res.model);
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
                next = candidates.size();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(config.threads, 1, candidates.size());
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }

    std::stable_sort(board.begin(), board.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.candidate.index < b.candidate.index;
    });
    SearchResult result;
    if (config.keep_best_model) {
        result.best_model = std::move(models[board.front().candidate.index]);
    }
    result.leaderboard = std::move(board);
    return result;
}

void write_leaderboard_csv(std::ostream& out, std::span<const LeaderboardEntry> leaderboard) {
    out << "rank,candidate,score,iterations,family,window_steps,conv_layers,filters_main,filters_mask,"
           "filter_width,fc_layers,fc_width,dropout,learning_rate,l1,l2,batch_size,oversample_ratio,"
           "epochs_for_convergence\n";
    for (std::size_t r = 0; r < leaderboard.size(); ++r) {
        const auto& e = leaderboard[r];
        const auto& c = e.candidate;
        const auto& s = c.spec;
        out << r + 1 << ',' << c.index << ',' << format_double(e.score) << ',' << e.iterations << ','
            << family_name(s.family) << ',' << s.window_steps << ',' << s.conv_layers << ',' << s.filters_main << ','
            << s.filters_mask << ',' << s.filter_width << ',' << s.fc_layers << ',' << s.fc_width << ','
            << format_double(s.dropout) << ',' << format_double(c.train.optimizer.learning_rate) << ','
            << format_double(c.train.optimizer.l1) << ',' << format_double(c.train.optimizer.l2) << ','
            << c.train.batch_size << ',' << c.augment.oversample_ratio << ',' << c.epochs_for_convergence << '\n';
    }
}

} // namespace matchnet
