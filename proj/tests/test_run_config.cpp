#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "fphtc/error.hpp"
#include "fphtc/run_config.hpp"
#include "helpers.hpp"

using namespace fphtc;
using nlohmann::json;

namespace {

struct EnvSeed {
    explicit EnvSeed(const char* v) {
        if (v) setenv("FPHTC_SEED", v, 1);
        else unsetenv("FPHTC_SEED");
    }
    ~EnvSeed() { unsetenv("FPHTC_SEED"); }
};

} // namespace

TEST_SUITE("run_config") {

TEST_CASE("defaults") {
    const auto rc = run_config_from_json(json::object());
    CHECK_FALSE(rc.seed);
    CHECK(rc.corpus.preset.name == "separable");
    CHECK(rc.corpus.mix.size() == kAppCount);
    CHECK(rc.distill.n_grid == std::vector<std::size_t>{1000, 5000, 10000, 20000});
    CHECK(rc.distill.replicas == 10);
    CHECK(rc.distill.confidence_level == 0.9);
    CHECK(rc.distill.teacher == GbdtConfig::standard());
    CHECK(rc.online.schedule.slots.size() == 30);
    CHECK(rc.online.config.accuracy_threshold == 0.8);
    CHECK(rc.distill.lambda_for(5000) == 0.2);
    CHECK_THROWS_AS(rc.distill.lambda_for(500), ConfigError);
}

TEST_CASE("a full document") {
    const auto j = json::parse(R"({
        "seed": 42,
        "corpus": {"preset": "overlapping", "apps": ["VOIP", "WEB"], "flows": 300, "test_fraction": 0.3},
        "distill": {"n_grid": [400, 800], "lambda": 0.5, "replicas": 3, "test_flows": 100,
                    "teacher": {"preset": "leafwise", "rounds": 20},
                    "student": {"max_leaf_nodes": 64, "max_depth": null}},
        "bounds": {"n": 5000, "alpha": 0.75, "c_dpi": 0.01, "grid_points": 50},
        "online": {"accuracy_threshold": 0.7, "dpi_flows_per_slot": 200, "teacher_labeled_flows": 500,
                   "schedule": {"slots": [{"apps": ["CHAT", "FTP"], "flows_per_slot": 600}]}}
    })");
    const auto rc = run_config_from_json(j);
    CHECK(rc.seed == 42u);
    CHECK(rc.corpus.preset.name == "overlapping");
    CHECK(rc.corpus.mix == AppMix{{AppType::VOIP, 1.0}, {AppType::WEB, 1.0}});
    CHECK(rc.corpus.test_fraction == 0.3);
    CHECK(rc.distill.lambda_for(400) == 0.5);
    CHECK(rc.distill.teacher.max_leaves == 31);
    CHECK(rc.distill.teacher.n_rounds == 20);
    CHECK(rc.distill.student.max_leaf_nodes == 64);
    CHECK_FALSE(rc.distill.student.max_depth);
    CHECK(rc.bounds.params.n == 5000);
    CHECK(rc.bounds.grid_points == 50);
    CHECK(rc.online.config.accuracy_threshold == 0.7);
    REQUIRE(rc.online.schedule.slots.size() == 1);
    CHECK(rc.online.schedule.slots[0].flows_per_slot == 600);

    CHECK(gbdt_config_from_json(gbdt_config_to_json(rc.distill.teacher), "") == rc.distill.teacher);
    CHECK(cart_config_from_json(cart_config_to_json(rc.distill.student), "") == rc.distill.student);
}

TEST_CASE("errors carry the offending path") {
    auto bad = [](const char* text, const char* where) {
        CHECK_THROWS_WITH_AS(run_config_from_json(json::parse(text)), doctest::Contains(where), ConfigError);
    };
    bad(R"({"sede": 1})", "/sede");
    bad(R"({"distill": {"replica": 3}})", "/distill/replica");
    bad(R"({"distill": {"replicas": "three"}})", "/distill/replicas");
    bad(R"({"distill": {"n_grid": [100, -5]}})", "/distill/n_grid/1");
    bad(R"({"distill": {"teacher": {"rounds": 0}}})", "/distill/teacher");
    bad(R"({"corpus": {"apps": ["VOIP", "ZOOM"]}})", "/corpus/apps/1");
    bad(R"({"corpus": {"preset": "blurry"}})", "/corpus/preset");
    bad(R"({"corpus": {"test_fraction": 1.0}})", "/corpus/test_fraction");
    bad(R"({"bounds": {"alpha": 2}})", "/bounds");
    bad(R"({"online": {"schedule": {"slots": []}}})", "/online");
    bad(R"({"online": {"student": {"min_samples_split": 1}}})", "/online/student");
    bad(R"({"seed": -1})", "/seed");
    bad(R"([1, 2])", "expected an object");
}

TEST_CASE("files and relative manifests") {
    const auto dir = testutil::scratch_dir("run_config");
    std::ofstream(dir / "c.json") << R"({"corpus": {"manifest": "caps/m.tsv"}})";
    const auto rc = load_run_config((dir / "c.json").string());
    REQUIRE(rc.corpus.manifest);
    CHECK(*rc.corpus.manifest == (dir / "caps/m.tsv").string());
    std::ofstream(dir / "broken.json") << "{ nope";
    CHECK_THROWS_WITH_AS(load_run_config((dir / "broken.json").string()), doctest::Contains("broken.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config((dir / "absent.json").string()), ConfigError);
}

TEST_CASE("seed resolution order") {
    RunConfig rc;
    {
        EnvSeed env(nullptr);
        CHECK(resolve_seed(std::nullopt, rc) == 0);
    }
    {
        EnvSeed env("77");
        CHECK(resolve_seed(std::nullopt, rc) == 77);
        rc.seed = 5;
        CHECK(resolve_seed(std::nullopt, rc) == 5);
        CHECK(resolve_seed(9, rc) == 9);
        rc.seed.reset();
    }
    {
        EnvSeed env("abc");
        CHECK_THROWS_WITH_AS(resolve_seed(std::nullopt, rc), doctest::Contains("FPHTC_SEED"), ConfigError);
    }
    CHECK(parse_seed("18446744073709551615", "x") == 18446744073709551615ull);
    CHECK_THROWS_AS(parse_seed("-3", "x"), ConfigError);
    CHECK_THROWS_AS(parse_seed("12a", "x"), ConfigError);
    CHECK_THROWS_AS(parse_seed("", "x"), ConfigError);
}

}
