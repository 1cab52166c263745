#include <doctest.h>

#include "matchnet/errors.hpp"
#include "matchnet/models.hpp"
#include "oracles.hpp"

using namespace matchnet;

namespace {

ModelSpec small_spec(Family family) {
    ModelSpec s;
    s.family = family;
    s.window_steps = family == Family::Mlp ? 1 : 5;
    s.horizon_steps = 3;
    s.conv_layers = 1;
    s.filters_main = 6;
    s.filters_mask = 2;
    s.filter_width = 3;
    s.fc_layers = 1;
    s.fc_width = 7;
    s.dropout = 0.0;
    return s;
}

std::vector<WindowInstance> instances(std::size_t n, std::size_t F, std::size_t W, std::size_t K,
                                      std::uint64_t seed) {
    Rng rng(seed);
    std::vector<WindowInstance> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(oracle::random_instance(rng, F, W, K));
    }
    return out;
}

Checkpoint checkpoint_for(Model m, std::size_t F) {
    Checkpoint c{std::move(m), {}, {}, 0.5, false};
    for (std::size_t f = 0; f < F; ++f) {
        c.schema.longitudinal.push_back("f" + std::to_string(f));
        c.norm_stats.numeric_names.push_back("f" + std::to_string(f));
        c.norm_stats.means.push_back(0.1 * static_cast<double>(f));
        c.norm_stats.sds.push_back(1.0 + static_cast<double>(f));
    }
    return c;
}

} // namespace

TEST_CASE("family names round trip") {
    for (auto f : {Family::Mlp, Family::SMlp, Family::STcn, Family::MatchNet, Family::MatchNetPlus}) {
        CHECK(parse_family(family_name(f)) == f);
    }
    CHECK(parse_family("matchnet") == Family::MatchNet);
    CHECK(parse_family("s_tcn") == Family::STcn);
    CHECK_FALSE(parse_family("lstm").has_value());
}

TEST_CASE("structural parameter counts") {
    const std::size_t F = 4;
    const std::size_t K = 3;
    SUBCASE("MLP is a dense net on one time slice") {
        const auto s = small_spec(Family::Mlp);
        const Model m = Model::build(s, F, kDiagnosisDim, 1);
        CHECK(m.parameter_count() == (F * 7 + 7) + (7 * K + K));
    }
    SUBCASE("S-MLP flattens the window") {
        const Model m = Model::build(small_spec(Family::SMlp), F, kDiagnosisDim, 1);
        CHECK(m.parameter_count() == (F * 5 * 7 + 7) + (7 * K + K));
    }
    SUBCASE("MATCH-NET adds a mask stream to S-TCN") {
        const Model tcn = Model::build(small_spec(Family::STcn), F, kDiagnosisDim, 1);
        const Model match = Model::build(small_spec(Family::MatchNet), F, kDiagnosisDim, 1);
        CHECK(match.parameter_count() > tcn.parameter_count());
        // conv: 6*F*3+6, flattened 6*3 -> dense 7 -> heads
        CHECK(tcn.parameter_count() == (6 * F * 3 + 6) + (6 * 3 * 7 + 7) + (7 * K + K));
        // mask conv 2*F*3+2; main output concatenated to 8 channels
        CHECK(match.parameter_count() == (6 * F * 3 + 6) + (2 * F * 3 + 2) + (8 * 3 * 7 + 7) + (7 * K + K));
    }
    SUBCASE("MATCH-NET-PLUS appends the diagnosis vector") {
        const Model plus = Model::build(small_spec(Family::MatchNetPlus), F, kDiagnosisDim, 1);
        const Model match = Model::build(small_spec(Family::MatchNet), F, kDiagnosisDim, 1);
        CHECK(plus.parameter_count() == match.parameter_count() + kDiagnosisDim * 7);
    }
    SUBCASE("conv output length") {
        ModelSpec s = small_spec(Family::STcn);
        s.filter_width = 5;
        CHECK(s.conv_output_steps() == 1);
        s.conv_layers = 2;
        s.filter_width = 2;
        CHECK(s.conv_output_steps() == 3);
    }
}

TEST_CASE("spec validation") {
    auto bad = [](auto mutate) {
        ModelSpec s = small_spec(Family::MatchNet);
        mutate(s);
        return s;
    };
    CHECK_THROWS_AS(bad([](ModelSpec& s) { s.filter_width = 6; }).validate(), SpecError);
    CHECK_THROWS_AS(bad([](ModelSpec& s) { s.filters_mask = 6; }).validate(), SpecError);
    CHECK_THROWS_AS(bad([](ModelSpec& s) { s.dropout = 1.0; }).validate(), SpecError);
    CHECK_THROWS_AS(bad([](ModelSpec& s) { s.horizon_steps = 0; }).validate(), SpecError);
    CHECK_THROWS_AS(bad([](ModelSpec& s) {
                        s.family = Family::Mlp;
                        s.window_steps = 3;
                    }).validate(),
                    SpecError);
    CHECK_NOTHROW(small_spec(Family::MatchNetPlus).validate());
}

TEST_CASE("forward examples") {
    const std::size_t F = 3;
    for (auto fam : {Family::Mlp, Family::SMlp, Family::STcn, Family::MatchNet, Family::MatchNetPlus}) {
        CAPTURE(family_name(fam));
        ModelSpec s = small_spec(fam);
        s.anchor_head = true;
        Model m = Model::build(s, F, kDiagnosisDim, 7);
        const auto data = instances(4, F, s.window_steps, s.horizon_steps, 3);
        const Batch b = make_batch(data);

        const auto p1 = m.forward(b, false, nullptr).probabilities;
        const auto p2 = m.forward(b, false, nullptr).probabilities;
        CHECK(p1.shape() == Shape{4, 3});
        CHECK(std::equal(p1.values().begin(), p1.values().end(), p2.values().begin()));
        CHECK(m.forward(b, false, nullptr).anchor_probabilities.has_value());

        for (auto& p : m.parameters()) {
            for (auto& v : p.tensor.mutable_values()) {
                v = 0.0;
            }
        }
        const auto zeroed = m.forward(b, false, nullptr);
        for (double v : zeroed.probabilities.values()) {
            CHECK(v == 0.5);
        }
    }
}

TEST_CASE("mask stream makes MATCH-NET sensitive to Z") {
    const std::size_t F = 3;
    for (auto fam : {Family::STcn, Family::MatchNet}) {
        const ModelSpec s = small_spec(fam);
        const Model m = Model::build(s, F, kDiagnosisDim, 5);
        auto data = instances(1, F, s.window_steps, s.horizon_steps, 9);
        const auto before = m.predict(data[0]);
        data[0].z(1, 4) = 1.0 - data[0].z(1, 4);
        const auto after = m.predict(data[0]);
        if (fam == Family::MatchNet) {
            CHECK(before != after);
        } else {
            CHECK(before == after);
        }
    }
}

TEST_CASE("dropout needs an rng in training mode") {
    ModelSpec s = small_spec(Family::SMlp);
    s.dropout = 0.5;
    const Model m = Model::build(s, 2, kDiagnosisDim, 1);
    const auto data = instances(2, 2, 5, 3, 1);
    CHECK_THROWS_AS(m.forward(make_batch(data), true, nullptr), ContractError);
    Rng rng(1);
    const auto a = m.forward(make_batch(data), true, &rng).probabilities;
    const auto b = m.forward(make_batch(data), false, nullptr).probabilities;
    CHECK_FALSE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("batching rejects mismatched shapes") {
    const auto a = instances(1, 3, 5, 3, 1);
    const auto b = instances(1, 4, 5, 3, 2);
    const std::vector<WindowInstance> mixed{a[0], b[0]};
    CHECK_THROWS_AS(make_batch(mixed), DimensionError);
    const Model m = Model::build(small_spec(Family::STcn), 4, kDiagnosisDim, 1);
    CHECK_THROWS_AS(m.predict(a[0]), DimensionError);
}

TEST_CASE("same seed builds identical models") {
    const Model a = Model::build(small_spec(Family::MatchNetPlus), 3, kDiagnosisDim, 11);
    const Model b = Model::build(small_spec(Family::MatchNetPlus), 3, kDiagnosisDim, 11);
    const Model c = Model::build(small_spec(Family::MatchNetPlus), 3, kDiagnosisDim, 12);
    const auto data = instances(3, 3, 5, 3, 4);
    CHECK(a.predict(data) == b.predict(data));
    CHECK(a.predict(data) != c.predict(data));
}

TEST_CASE("copies are independent") {
    const Model a = Model::build(small_spec(Family::STcn), 3, kDiagnosisDim, 1);
    Model b = a;
    b.parameters()[0].tensor.mutable_values()[0] += 1.0;
    CHECK(a.parameters()[0].tensor.values()[0] != b.parameters()[0].tensor.values()[0]);
}

TEST_CASE("checkpoint round trip") {
    const std::size_t F = 3;
    for (auto fam : {Family::Mlp, Family::MatchNetPlus}) {
        ModelSpec s = small_spec(fam);
        s.anchor_head = fam == Family::MatchNetPlus;
        const auto data = instances(5, F, s.window_steps, s.horizon_steps, 2);
        const Checkpoint c = checkpoint_for(Model::build(s, F, kDiagnosisDim, 3), F);
        const std::string bytes = serialize(c);
        const Checkpoint back = deserialize(bytes);
        CHECK(back.model.spec() == s);
        CHECK(back.schema == c.schema);
        CHECK(back.norm_stats == c.norm_stats);
        CHECK(back.model.predict(data) == c.model.predict(data));  // bit-identical
        CHECK(serialize(back) == bytes);

        CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
        CHECK_THROWS_AS(deserialize(bytes + "x"), FormatError);
        std::string wrong = bytes;
        wrong[2] ^= 0x20;
        CHECK_THROWS_AS(deserialize(wrong), FormatError);
        CHECK_THROWS_AS(deserialize(""), FormatError);
    }
}
