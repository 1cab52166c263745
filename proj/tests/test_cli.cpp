#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "matchnet/binio.hpp"
#include "matchnet/cli.hpp"
#include "matchnet/errors.hpp"

using namespace matchnet;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "matchnet");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("matchnet_cli_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

const std::vector<std::string> kQuick = {"max_epochs=2", "filters_main=8", "filters_mask=2", "fc_width=8",
                                         "batch_size=64"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& extra = kQuick) {
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

} // namespace

TEST_CASE("config parsing") {
    RunConfig c;
    c.load_text("# comment\nseed = 5\n\nfamily=S-TCN\n", "t");
    CHECK(c.u64("seed") == 5);
    CHECK(c.str("family") == "S-TCN");
    CHECK(c.real("delta") == 0.5);
    CHECK(c.is_explicit("seed"));
    CHECK_FALSE(c.is_explicit("delta"));
    c.set("seed=6");
    CHECK(c.u64("seed") == 6);
    CHECK(c.list("families").size() == 5);

    RunConfig d;
    CHECK_THROWS_AS(d.load_text("seed=1\nseed=2\n", "t"), ConfigError);
    CHECK_THROWS_AS(d.load_text("no_such_key=1\n", "t"), ConfigError);
    CHECK_THROWS_AS(d.load_text("seed\n", "t"), ConfigError);
    d.set("delta=abc");
    CHECK_THROWS_AS(d.real("delta"), ConfigError);

    RunConfig e;
    e.load_text(c.dump(), "dump");
    CHECK(e.dump() == c.dump());
}

TEST_CASE("command-line errors map to exit codes") {
    TempDir tmp;
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"train", "bogus_key=1", "out=" + tmp / "x"}).code == 2);
    CHECK(cli({"train", "out=" + tmp / "x"}).code == 2);  // no prepared input named
    CHECK(cli({"train", "prepared=" + tmp / "missing.bin", "out=" + tmp / "x"}).code == 3);
    write_file(tmp / "junk.bin", "not a container");
    CHECK(cli({"train", "prepared=" + tmp / "junk.bin", "out=" + tmp / "x"}).code == 3);
    const auto keys = cli({"keys"});
    CHECK(keys.code == 0);
    CHECK(keys.out.find("learning_rate") != std::string::npos);
}

TEST_CASE("end-to-end workflow") {
    TempDir tmp;
    const std::string gen = tmp / "gen";
    REQUIRE(cli({"generate", "n_patients=150", "seed=7", "out=" + gen}).code == 0);
    REQUIRE(fs::exists(gen + "/data.csv"));
    REQUIRE(fs::exists(gen + "/manifest.txt"));
    const std::string prep = tmp / "prep";
    REQUIRE(cli({"prepare", "data=" + gen + "/data.csv", "folds=3", "seed=7", "out=" + prep}).code == 0);
    const std::string prepared = "prepared=" + prep + "/prepared.bin";

    SUBCASE("train and evaluate are reproducible") {
        REQUIRE(cli(with({"train", prepared, "seed=7", "out=" + tmp / "t1"})).code == 0);
        REQUIRE(cli(with({"train", prepared, "seed=7", "out=" + tmp / "t2"})).code == 0);
        CHECK(read_file(tmp / "t1/metrics.csv") == read_file(tmp / "t2/metrics.csv"));
        CHECK(read_file(tmp / "t1/model.ckpt") == read_file(tmp / "t2/model.ckpt"));
        const auto ev = cli({"evaluate", prepared, "checkpoint=" + tmp / "t1/model.ckpt", "out=" + tmp / "e1"});
        REQUIRE(ev.code == 0);
        CHECK(read_file(tmp / "e1/metrics.csv") == read_file(tmp / "t1/metrics.csv"));
        CHECK(read_file(tmp / "e1/metrics.csv").rfind("horizon_years,auroc,auprc,n_pos,n_neg\n", 0) == 0);
    }

    SUBCASE("the manifest can be fed back as a config") {
        REQUIRE(cli(with({"train", prepared, "seed=3", "family=S-TCN", "out=" + tmp / "m1"})).code == 0);
        const std::string manifest = read_file(tmp / "m1/manifest.txt");
        CHECK(manifest.find("# input") != std::string::npos);
        CHECK(manifest.find("family=S-TCN") != std::string::npos);
        REQUIRE(cli({"train", "--config", tmp / "m1/manifest.txt", "out=" + tmp / "m2"}).code == 0);
        CHECK(read_file(tmp / "m1/metrics.csv") == read_file(tmp / "m2/metrics.csv"));
    }

    SUBCASE("predict produces a risk trajectory") {
        REQUIRE(cli(with({"train", prepared, "family=MATCH-NET-PLUS", "out=" + tmp / "p"})).code == 0);
        const auto r = cli({"predict", "checkpoint=" + tmp / "p/model.ckpt", "input=" + gen + "/data.csv",
                            "patient=P00001", "out=" + tmp / "pred"});
        REQUIRE(r.code == 0);
        const std::string csv = read_file(tmp / "pred/predictions.csv");
        CHECK(csv.rfind("patient_id,anchor_time_years,horizon_years,risk\n", 0) == 0);
        CHECK((line_count(csv) - 1) % 5 == 0);
        CHECK(line_count(csv) > 1);
        CHECK(cli({"predict", "checkpoint=" + tmp / "p/model.ckpt", "input=" + gen + "/data.csv", "patient=nobody",
                   "out=" + tmp / "pred2"})
                  .code == 3);
    }

    SUBCASE("ablate reports every family and the pairwise gains") {
        const auto r = cli(with({"ablate", prepared, "families=MLP,S-MLP,S-TCN,MATCH-NET", "fold_list=0,1",
                                 "out=" + tmp / "abl"}));
        REQUIRE(r.code == 0);
        const std::string report = read_file(tmp / "abl/report.csv");
        for (const char* fam : {"MLP,", "S-MLP,", "S-TCN,", "MATCH-NET,"}) {
            CHECK(report.find(std::string("\n") + fam) != std::string::npos);
        }
        CHECK(line_count(report) == 1 + 4 * 5 * 2);
        const std::string gains = read_file(tmp / "abl/gains.csv");
        CHECK(line_count(gains) == 1 + 3 * 5 * 2);
        CHECK(gains.find("S-TCN,MATCH-NET,") != std::string::npos);
    }

    SUBCASE("saliency writes maps and scatters") {
        REQUIRE(cli(with({"train", prepared, "out=" + tmp / "s"})).code == 0);
        const auto r = cli({"saliency", prepared, "checkpoint=" + tmp / "s/model.ckpt", "scatter_feature=x1",
                            "mc_samples=3", "saliency_samples=50", "out=" + tmp / "sal"});
        REQUIRE(r.code == 0);
        CHECK(fs::exists(tmp / "sal/saliency_x.csv"));
        CHECK(fs::exists(tmp / "sal/saliency_z.csv"));
        CHECK(fs::exists(tmp / "sal/heatmap.txt"));
        CHECK(line_count(read_file(tmp / "sal/scatter.csv")) > 1);
        CHECK(cli({"saliency", prepared, "checkpoint=" + tmp / "s/model.ckpt", "scatter_feature=nope",
                   "out=" + tmp / "sal2"})
                  .code == 2);
    }

    SUBCASE("search writes a leaderboard and the best checkpoint") {
        const auto r = cli({"search", prepared, "budget=2", "max_epochs=1", "space_filters_main=8",
                            "space_filters_mask=2", "space_fc_width=8", "space_fc_layers=1", "space_conv_layers=1",
                            "space_batch_size=64", "out=" + tmp / "search"});
        REQUIRE(r.code == 0);
        CHECK(line_count(read_file(tmp / "search/leaderboard.csv")) == 3);
        CHECK(fs::exists(tmp / "search/model.ckpt"));
    }
}
