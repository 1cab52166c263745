#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "matchnet/errors.hpp"
#include "matchnet/metrics.hpp"
#include "matchnet/pipeline.hpp"
#include "matchnet/training.hpp"
#include "oracles.hpp"

using namespace matchnet;

namespace {

Model::Output output_of(std::size_t B, std::vector<double> probs) {
    const std::size_t K = probs.size() / B;
    return {Tensor({B, K}, std::move(probs), true), std::nullopt};
}

WindowInstance labelled(std::vector<int> labels, std::size_t patient_steps) {
    WindowInstance w;
    w.patient_steps = patient_steps;
    for (int l : labels) {
        w.labels.push_back(static_cast<Label>(l));
        w.label_valid.push_back(l == -1 ? 0 : 1);
    }
    return w;
}

double brute_uniform_loss(std::span<const WindowInstance> batch, std::span<const double> p, std::size_t K) {
    double total = 0.0;
    double n = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            if (batch[i].labels[k] == Label::Undefined || !batch[i].label_valid[k]) {
                continue;
            }
            const double q = p[i * K + k];
            total += batch[i].labels[k] == Label::Positive ? -std::log(q) : -std::log(1.0 - q);
            n += 1.0;
        }
    }
    return total / n;
}

ModelSpec tiny_spec(Family family) {
    ModelSpec s;
    s.family = family;
    s.window_steps = family == Family::Mlp ? 1 : 3;
    s.horizon_steps = 2;
    s.filters_main = 4;
    s.filters_mask = 2;
    s.filter_width = 2;
    s.fc_width = 6;
    s.dropout = 0.0;
    return s;
}

TrainConfig quick_train(std::size_t epochs) {
    TrainConfig t;
    t.optimizer.learning_rate = 1e-2;
    t.batch_size = 32;
    t.convergence.max_epochs = epochs;
    t.convergence.eval_every = 10;
    t.convergence.patience = 1000;
    t.seed = 3;
    return t;
}

} // namespace

TEST_CASE("term loss examples") {
    CHECK(term_loss(1, 0.5) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(term_loss(0, 0.0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(term_loss(1, 0.9) == doctest::Approx(0.105361).epsilon(1e-6));
    CHECK(std::isfinite(term_loss(1, 0.0)));
}

TEST_CASE("total loss examples") {
    SUBCASE("single defined term") {
        const std::vector<WindowInstance> b{labelled({1}, 3)};
        const auto loss = total_loss(b, output_of(1, {0.5}), {});
        REQUIRE(loss);
        CHECK(loss->item() == doctest::Approx(0.693147).epsilon(1e-6));
    }
    SUBCASE("duplicating the batch leaves the mean unchanged") {
        const std::vector<WindowInstance> b{labelled({1, 0}, 3), labelled({0, -1}, 5)};
        const std::vector<WindowInstance> bb{b[0], b[1], b[0], b[1]};
        const auto l1 = total_loss(b, output_of(2, {0.3, 0.6, 0.2, 0.9}), {});
        const auto l2 = total_loss(bb, output_of(4, {0.3, 0.6, 0.2, 0.9, 0.3, 0.6, 0.2, 0.9}), {});
        CHECK(l1->item() == doctest::Approx(l2->item()).epsilon(1e-14));
    }
    SUBCASE("no defined terms gives no loss") {
        const std::vector<WindowInstance> b{labelled({-1, -1}, 3)};
        CHECK_FALSE(total_loss(b, output_of(1, {0.4, 0.4}), {}).has_value());
    }
    SUBCASE("anchor targets need an anchor head") {
        std::vector<WindowInstance> b{labelled({0}, 3)};
        b[0].anchor_target = true;
        CHECK_THROWS_AS(total_loss(b, output_of(1, {0.4}), {}), ContractError);
        Model::Output out = output_of(1, {0.4});
        out.anchor_probabilities = Tensor({1, 1}, {0.2});
        // (term(0, 0.4) + term(0, 0.2)) / 2
        const double expected = (-std::log(0.6) - std::log(0.8)) / 2.0;
        CHECK(total_loss(b, out, {})->item() == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("uniform loss equals the brute-force mean of defined terms") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t B = 1 + uniform_index(rng, 20);
        const std::size_t K = 1 + uniform_index(rng, 5);
        std::vector<WindowInstance> batch;
        std::vector<double> p;
        for (std::size_t i = 0; i < B; ++i) {
            batch.push_back(oracle::random_instance(rng, 1, 1, K));
            for (std::size_t k = 0; k < K; ++k) {
                p.push_back(uniform(rng, 0.01, 0.99));
            }
        }
        const auto loss = total_loss(batch, output_of(B, p), {});
        bool any = false;
        for (const auto& w : batch) {
            for (std::size_t k = 0; k < K; ++k) {
                any = any || w.counts(k);
            }
        }
        REQUIRE(loss.has_value() == any);
        if (any) {
            CHECK(std::abs(loss->item() - brute_uniform_loss(batch, p, K)) <= 1e-12);
        }
    }
}

TEST_CASE("inverse-length weights reproduce a hand-computed mean") {
    // Patient A: t_i = 1 step, one positive term at 0.5.
    // Patient B: t_i = 4 steps, terms (0, 0.2) and (1, 0.9); weights 1 : 1/4.
    const std::vector<WindowInstance> b{labelled({1, -1}, 1), labelled({0, 1}, 4)};
    const LossWeights w{WeightMode::PerPatientInverseLength, 1.0};
    CHECK(w.alpha(b[0], true) / w.alpha(b[1], true) == doctest::Approx(4.0));
    const double expected =
        (1.0 * 0.6931471805599453 + 0.25 * 0.2231435513142097 + 0.25 * 0.10536051565782628) / 1.5;
    const auto loss = total_loss(b, output_of(2, {0.5, 0.7, 0.2, 0.9}), w);
    CHECK(std::abs(loss->item() - expected) <= 1e-12);
}

TEST_CASE("positive upweighting scales positive terms") {
    const std::vector<WindowInstance> b{labelled({1, 0}, 3)};
    const LossWeights w{WeightMode::PositiveUpweight, 3.0};
    const double expected = (3.0 * -std::log(0.4) + 1.0 * -std::log(1.0 - 0.3)) / 4.0;
    CHECK(total_loss(b, output_of(1, {0.4, 0.3}), w)->item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("end-to-end loss gradients match central differences") {
    Rng rng(23);
    const std::size_t F = 3;
    for (auto fam : {Family::Mlp, Family::SMlp, Family::STcn, Family::MatchNet, Family::MatchNetPlus}) {
        CAPTURE(family_name(fam));
        ModelSpec s = tiny_spec(fam);
        s.anchor_head = true;
        s.fc_layers = 2;
        s.conv_layers = fam == Family::Mlp || fam == Family::SMlp ? 1 : 2;
        Model m = Model::build(s, F, kDiagnosisDim, 5);
        // Two patients, one window each, with the dummy anchor term enabled.
        std::vector<WindowInstance> batch{oracle::random_instance(rng, F, s.window_steps, s.horizon_steps, "a"),
                                          oracle::random_instance(rng, F, s.window_steps, s.horizon_steps, "b")};
        for (auto& w : batch) {
            w.labels = {Label::Negative, Label::Positive};
            w.label_valid = {1, 1};
            w.anchor_target = true;
        }
        batch[1].event_at_anchor = true;
        const Batch input = make_batch(batch);
        std::vector<Tensor> params;
        for (auto& p : m.parameters()) {
            // Zero biases on all-zero mask windows would sit exactly on the relu kink.
            for (auto& v : p.tensor.mutable_values()) {
                v += uniform(rng, -0.05, 0.05);
            }
            params.push_back(p.tensor);
        }
        const auto result = oracle::check_gradients(params, [&](std::vector<Tensor>&) {
            return *total_loss(batch, m.forward(input, false, nullptr), {WeightMode::PerPatientInverseLength, 1.0});
        });
        CHECK(result.checked == m.parameter_count());
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_CASE("training") {
    const Dataset d = oracle::separable_dataset(120, 5);
    const PreparedData data = prepare(d, 0.5, 3, 2);
    const FoldSeries& fold = data.folds[0];
    const std::size_t F = fold.series.front().covariates.rows;

    SUBCASE("zero learning rate leaves parameters unchanged") {
        const ModelSpec s = tiny_spec(Family::STcn);
        const auto sets = make_instance_sets(fold, {s.window_steps, s.horizon_steps}, {});
        const Model m = Model::build(s, F, kDiagnosisDim, 1);
        TrainConfig cfg = quick_train(3);
        cfg.optimizer.learning_rate = 0.0;
        const auto r = train(m, sets.train, sets.validation, cfg);
        for (std::size_t i = 0; i < m.parameters().size(); ++i) {
            const auto a = m.parameters()[i].tensor.values();
            const auto b = r.model.parameters()[i].tensor.values();
            CHECK(std::equal(a.begin(), a.end(), b.begin()));
        }
        REQUIRE(r.history.size() > 1);
        for (const auto& h : r.history) {
            CHECK(h.score == r.history.front().score);
        }
    }

    SUBCASE("separable toy set is learned at one step") {
        for (auto fam : {Family::Mlp, Family::STcn, Family::MatchNetPlus}) {
            CAPTURE(family_name(fam));
            const ModelSpec s = tiny_spec(fam);
            const auto sets = make_instance_sets(fold, {s.window_steps, s.horizon_steps}, {});
            const auto r = train(Model::build(s, F, kDiagnosisDim, 2), sets.train, sets.validation, quick_train(40));
            CHECK(r.history.back().train_loss < r.history[1].train_loss);
            const auto metrics = evaluate(r.model, sets.validation);
            CHECK(*metrics.horizons[0].auroc == doctest::Approx(1.0));
        }
    }

    SUBCASE("same seed gives the same history") {
        const ModelSpec s = tiny_spec(Family::MatchNet);
        const auto sets = make_instance_sets(fold, {s.window_steps, s.horizon_steps}, {1, true, false});
        TrainConfig cfg = quick_train(3);
        cfg.convergence.patience = 2;
        const auto a = train(Model::build(s, F, kDiagnosisDim, 4), sets.train, sets.validation, cfg);
        const auto b = train(Model::build(s, F, kDiagnosisDim, 4), sets.train, sets.validation, cfg);
        std::ostringstream ha, hb;
        write_history_csv(ha, a.history);
        write_history_csv(hb, b.history);
        CHECK(ha.str() == hb.str());
        CHECK(a.best_iteration == b.best_iteration);
    }

    SUBCASE("patience stops early") {
        const ModelSpec s = tiny_spec(Family::SMlp);
        const auto sets = make_instance_sets(fold, {s.window_steps, s.horizon_steps}, {});
        TrainConfig cfg = quick_train(200);
        cfg.optimizer.learning_rate = 0.0;
        cfg.convergence.patience = 2;
        const auto r = train(Model::build(s, F, kDiagnosisDim, 4), sets.train, sets.validation, cfg);
        CHECK(r.stop == StopReason::Patience);
        CHECK(r.history.size() == 3);
    }
}

TEST_CASE("random search") {
    const Dataset d = oracle::separable_dataset(80, 8);
    const PreparedData data = prepare(d, 0.5, 3, 1);
    const FoldSeries& fold = data.folds[0];
    SearchSpace small;
    small.fc_layers = {1};
    small.conv_layers = {1, 2};
    small.filters_main = {4, 8};
    small.filters_mask = {2};
    small.fc_width = {8};
    small.batch_size = {32, 64};
    small.epochs_for_convergence = {1};
    small.window_steps = {2, 3};
    small.filter_width = {2, 3};
    ModelSpec base = tiny_spec(Family::MatchNet);
    TrainConfig train_cfg = quick_train(2);

    SUBCASE("budget one returns the sole candidate") {
        const auto r = random_search(small, fold, base, train_cfg, {}, {1, 5, 1, true});
        REQUIRE(r.leaderboard.size() == 1);
        CHECK(r.best_model.has_value());
        CHECK(r.best_model->spec() == r.leaderboard[0].candidate.spec);
    }

    SUBCASE("sampled values lie in their table rows") {
        const SearchSpace table;
        Rng rng(3);
        for (int i = 0; i < 300; ++i) {
            const auto c = sample_candidate(table, ModelSpec{}, TrainConfig{}, AugmentConfig{}, rng);
            auto in = [](const auto& row, auto v) { return std::find(row.begin(), row.end(), v) != row.end(); };
            CHECK(in(table.fc_layers, c.spec.fc_layers));
            CHECK(in(table.conv_layers, c.spec.conv_layers));
            CHECK(in(table.dropout, c.spec.dropout));
            CHECK(in(table.epochs_for_convergence, c.epochs_for_convergence));
            CHECK(in(table.learning_rate, c.train.optimizer.learning_rate));
            CHECK(in(table.l1, c.train.optimizer.l1));
            CHECK(in(table.l2, c.train.optimizer.l2));
            CHECK(in(table.batch_size, c.train.batch_size));
            CHECK(in(table.filters_main, c.spec.filters_main));
            CHECK(in(table.filters_mask, c.spec.filters_mask));
            CHECK(in(table.oversample_ratio, c.augment.oversample_ratio));
            CHECK(in(table.fc_width, c.spec.fc_width));
            CHECK(in(table.filter_width, c.spec.filter_width));
            CHECK(in(table.window_steps, c.spec.window_steps));
            CHECK_NOTHROW(c.spec.validate());
        }
    }

    SUBCASE("a frozen candidate never beats a learning one") {
        SearchSpace lr = small;
        lr.learning_rate = {0.0, 3e-2};
        bool both = false;
        for (std::uint64_t seed = 0; seed < 10 && !both; ++seed) {
            const auto r = random_search(lr, fold, base, quick_train(5), {}, {4, seed, 2, false});
            std::set<double> rates;
            for (const auto& e : r.leaderboard) {
                rates.insert(e.candidate.train.optimizer.learning_rate);
            }
            both = rates.size() == 2;
            if (!both) {
                continue;
            }
            CHECK(r.leaderboard.front().candidate.train.optimizer.learning_rate > 0.0);
        }
        CHECK(both);
    }

    SUBCASE("thread count does not change the leaderboard") {
        const auto a = random_search(small, fold, base, train_cfg, {}, {3, 9, 1, false});
        const auto b = random_search(small, fold, base, train_cfg, {}, {3, 9, 3, false});
        std::ostringstream la, lb;
        write_leaderboard_csv(la, a.leaderboard);
        write_leaderboard_csv(lb, b.leaderboard);
        CHECK(la.str() == lb.str());
    }
}
