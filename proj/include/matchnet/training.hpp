#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matchnet/metrics.hpp"
#include "matchnet/models.hpp"
#include "matchnet/optim.hpp"
#include "matchnet/pipeline.hpp"

namespace matchnet {

// ---------------------------------------------------------------------------
// Loss

enum class WeightMode { Uniform, PerPatientInverseLength, PositiveUpweight };

std::string_view weight_mode_name(WeightMode mode);
std::optional<WeightMode> parse_weight_mode(std::string_view name);

struct LossWeights {
    WeightMode mode = WeightMode::Uniform;
    double factor = 1.0;  // PositiveUpweight multiplier for positive terms

    /// alpha for one defined term of `instance`, including the instance weight.
    double alpha(const WindowInstance& instance, bool positive_target) const;
};

/// -[s log p + (1 - s) log(1 - p)] with p clamped to [eps, 1 - eps].
double term_loss(int s, double p, double eps = 1e-12);

/// Weighted mean of term losses over defined, visit-valid (instance, horizon)
/// pairs, plus the dummy tau = 0 terms of instances with `anchor_target` set.
/// nullopt when the batch has no defined term.
std::optional<Tensor> total_loss(std::span<const WindowInstance* const> batch, const Model::Output& output,
                                 const LossWeights& weights);
std::optional<Tensor> total_loss(std::span<const WindowInstance> batch, const Model::Output& output,
                                 const LossWeights& weights);

// ---------------------------------------------------------------------------
// Training

struct ConvergenceConfig {
    std::vector<double> beta;  // per-horizon AUROC weights, empty = all ones
    std::vector<double> gamma;  // per-horizon AUPRC weights, empty = all ones
    std::size_t max_epochs = 50;
    std::size_t eval_every = 10;  // iterations
    std::size_t patience = 10;  // evaluations without improvement

    /// Throws ConfigError on negative weights or when every weight is zero.
    void validate(std::size_t horizon_steps) const;
};

struct TrainConfig {
    OptimizerConfig optimizer;
    std::size_t batch_size = 64;
    LossWeights loss;
    ConvergenceConfig convergence;
    std::uint64_t seed = 0;
};

struct HistoryEntry {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean minibatch loss since the previous evaluation
    double score = 0.0;  // validation composite score
};

enum class StopReason { Patience, MaxEpochs, NoValidation };

struct TrainResult {
    Model model;  // parameters with the best validation score
    std::vector<HistoryEntry> history;
    double best_score = 0.0;
    std::size_t best_iteration = 0;
    std::size_t iterations = 0;
    std::size_t epochs = 0;
    StopReason stop = StopReason::MaxEpochs;
};

/// Minibatch training with periodic validation and early stopping. The
/// starting parameters are evaluated at iteration 0. Throws NumericalError on
/// a non-finite loss.
TrainResult train(Model model, std::span<const WindowInstance> train_set,
                  std::span<const WindowInstance> validation_set, const TrainConfig& config);

void write_history_csv(std::ostream& out, std::span<const HistoryEntry> history);

// ---------------------------------------------------------------------------
// Random search

/// Candidate values per hyperparameter. Window and filter widths are in grid
/// steps; an oversample ratio of 0 and penalties of 0 mean none.
struct SearchSpace {
    std::vector<std::size_t> fc_layers{1, 2, 3, 4, 5};
    std::vector<std::size_t> conv_layers{1, 2, 3, 4, 5};
    std::vector<double> dropout{0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::size_t> epochs_for_convergence{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<double> learning_rate{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2};
    std::vector<double> l1{0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
    std::vector<double> l2{0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
    std::vector<std::size_t> batch_size{32, 64, 128, 256, 512};
    std::vector<std::size_t> filters_main{32, 64, 128, 256, 512};
    std::vector<std::size_t> filters_mask{8, 16, 32, 64, 128};
    std::vector<std::size_t> oversample_ratio{0, 1, 2, 3, 5, 10};
    std::vector<std::size_t> fc_width{32, 64, 128, 256, 512};
    std::vector<std::size_t> filter_width{3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<std::size_t> window_steps{3, 4, 5, 6, 7, 8, 9, 10};

    void validate() const;
};

/// One sampled configuration. Dimensions the family does not use keep the
/// values of the base configuration.
struct Candidate {
    std::size_t index = 0;
    ModelSpec spec;
    TrainConfig train;
    AugmentConfig augment;
    std::size_t epochs_for_convergence = 0;
};

/// Draws one candidate; invalid combinations are redrawn.
Candidate sample_candidate(const SearchSpace& space, const ModelSpec& base_spec, const TrainConfig& base_train,
                           const AugmentConfig& base_augment, Rng& rng);

/// Patience in evaluations equivalent to `epochs` passes over `train_size` instances.
std::size_t patience_for_epochs(std::size_t epochs, std::size_t train_size, std::size_t batch_size,
                                std::size_t eval_every);

struct LeaderboardEntry {
    Candidate candidate;
    double score = 0.0;
    std::size_t iterations = 0;
};

struct SearchResult {
    std::vector<LeaderboardEntry> leaderboard;  // best first, ties by candidate index
    std::optional<Model> best_model;
};

struct SearchConfig {
    std::size_t budget = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool keep_best_model = true;
};

/// Samples `budget` candidates, trains each on the fold's training patients
/// and ranks them by validation score.
SearchResult random_search(const SearchSpace& space, const FoldSeries& fold, const ModelSpec& base_spec,
                           const TrainConfig& base_train, const AugmentConfig& base_augment,
                           const SearchConfig& config);

void write_leaderboard_csv(std::ostream& out, std::span<const LeaderboardEntry> leaderboard);

} // namespace matchnet
