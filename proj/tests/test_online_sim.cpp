#include <doctest.h>

#include <sstream>

#include "fphtc/error.hpp"
#include "fphtc/online_sim.hpp"

using namespace fphtc;

namespace {

OnlineConfig small_config(std::uint64_t seed) {
    OnlineConfig c;
    c.dpi_flows_per_slot = 300;
    c.teacher_labeled_flows = 1200;
    c.test_flows_per_slot = 400;
    c.teacher_config.n_rounds = 15;
    c.seed = seed;
    return c;
}

std::string csv(std::span<const SlotMetrics> m) {
    std::ostringstream os;
    write_slot_csv(os, m);
    return os.str();
}

} // namespace

TEST_SUITE("online_sim") {

TEST_CASE("mode transitions") {
    const OnlineConfig cfg;
    CHECK(next_mode(Mode::Monitoring, 0.85, 0.84, cfg) == Mode::Monitoring);
    CHECK(next_mode(Mode::Monitoring, 0.79, 0.84, cfg) == Mode::Retraining);
    CHECK(next_mode(Mode::Monitoring, 0.80, std::nullopt, cfg) == Mode::Monitoring);
    CHECK(next_mode(Mode::Retraining, 0.825, 0.82, cfg) == Mode::Monitoring);
    CHECK(next_mode(Mode::Retraining, 0.85, 0.82, cfg) == Mode::Retraining);
    CHECK(next_mode(Mode::Retraining, 0.79, 0.79, cfg) == Mode::Retraining);
    CHECK(next_mode(Mode::Retraining, 0.95, std::nullopt, cfg) == Mode::Retraining);
    CHECK(next_mode(Mode::Retraining, 0.90, 0.95, cfg) == Mode::Monitoring);
    CHECK(to_string(Mode::Monitoring) == "Monitoring");
    CHECK(to_string(Mode::Retraining) == "Retraining");
}

TEST_CASE("schedules") {
    const auto t = TrafficSchedule::table_preset();
    REQUIRE(t.slots.size() == 30);
    CHECK(t.slots[0].apps == std::vector<AppType>{AppType::AUDIO, AppType::FTP, AppType::VIDEO, AppType::VOIP, AppType::WEB});
    CHECK(t.slots[10].apps == std::vector<AppType>{AppType::FTP, AppType::MAIL, AppType::P2P, AppType::VIDEO, AppType::VOIP});
    CHECK(t.slots[20].apps == std::vector<AppType>{AppType::AUDIO, AppType::CHAT, AppType::FTP, AppType::MAIL, AppType::WEB});
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(t.slots[i].apps.size() == 5);
        CHECK(t.slots[i].apps == t.slots[i / 10 * 10].apps);
        CHECK(t.slots[i].flows_per_slot == 10000);
    }
    CHECK(schedule_from_json(schedule_to_json(t)).slots.size() == 30);
    CHECK(schedule_to_json(schedule_from_json(schedule_to_json(t))) == schedule_to_json(t));

    TrafficSchedule empty;
    CHECK_THROWS_AS(empty.validate(), ConfigError);
    auto j = schedule_to_json(t);
    j["slots"][3]["apps"][1] = "SKYPE";
    CHECK_THROWS_WITH_AS(schedule_from_json(j), doctest::Contains("/slots/3/apps/1"), ConfigError);
}

TEST_CASE("config validation") {
    OnlineConfig c;
    CHECK_NOTHROW(c.validate());
    c.accuracy_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.saturation_threshold = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.dpi_flows_per_slot = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.teacher_labeled_flows = 10;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("stepping accounts for dpi and never swaps while monitoring") {
    const auto p = preset("separable");
    const auto cfg = small_config(3);
    const auto sched = TrafficSchedule::table_preset(1500);
    SimState st;
    std::size_t retrain_slots = 0, dpi = 0;
    for (std::size_t s = 0; s < 14; ++s) {
        const auto traffic = slot_traffic(p, sched.slots[s], cfg, s);
        CHECK(traffic.train.size() == 1500);
        CHECK(traffic.test.size() == 400);
        const Mode before = st.mode;
        const auto prev_policy = st.fphtc.policy;
        const auto prev_base = st.baseline.policy;
        auto [next, m] = step(st, traffic, cfg);
        CHECK(m.slot == s);
        CHECK(m.mode == before);
        CHECK(m.retrained == (before == Mode::Retraining));
        CHECK(m.next_mode == next.mode);
        CHECK(next.mode == next_mode(before, m.fphtc_accuracy, st.last_accuracy, cfg));
        if (before == Mode::Monitoring) {
            CHECK(m.dpi_flows_used == 0);
            CHECK(next.fphtc.policy == prev_policy);
            CHECK(next.baseline.policy == prev_base);
        } else {
            ++retrain_slots;
            CHECK(m.dpi_flows_used == cfg.dpi_flows_per_slot);
            REQUIRE(next.fphtc.policy);
            CHECK(m.rule_count == next.fphtc.policy->rules.size());
        }
        dpi += m.dpi_flows_used;
        CHECK(next.slot_index == s + 1);
        st = next;
    }
    CHECK(retrain_slots >= 1);
    CHECK(dpi == retrain_slots * cfg.dpi_flows_per_slot);
}

TEST_CASE("only the dpi prefix needs ground truth") {
    const auto p = preset("separable");
    const auto cfg = small_config(4);
    const auto sched = TrafficSchedule::table_preset(1500);
    auto traffic = slot_traffic(p, sched.slots[0], cfg, 0);
    const auto with_truth = step(SimState{}, traffic, cfg).second;
    for (std::size_t i = cfg.dpi_flows_per_slot; i < traffic.train.size(); ++i) traffic.train[i].true_app.reset();
    const auto without = step(SimState{}, traffic, cfg).second;
    CHECK(without.fphtc_accuracy == with_truth.fphtc_accuracy);
    CHECK(without.baseline_accuracy == with_truth.baseline_accuracy);
    CHECK(without.rule_count == with_truth.rule_count);
}

TEST_CASE("constant traffic settles into monitoring") {
    OnlineConfig cfg;
    cfg.seed = 5;
    const std::array apps{AppType::VOIP, AppType::VIDEO, AppType::WEB, AppType::FTP};
    const auto m = run_simulation(TrafficSchedule::constant(apps, 10), cfg, preset("separable"));
    REQUIRE(m.size() == 10);
    CHECK(m[0].mode == Mode::Retraining);
    std::size_t settled = 0;
    while (settled < m.size() && m[settled].mode == Mode::Retraining) ++settled;
    CHECK(settled <= 3);
    double lo = 1, hi = 0;
    for (std::size_t s = settled; s < m.size(); ++s) {
        CHECK(m[s].mode == Mode::Monitoring);
        CHECK(m[s].fphtc_accuracy >= cfg.accuracy_threshold);
        lo = std::min(lo, m[s].fphtc_accuracy);
        hi = std::max(hi, m[s].fphtc_accuracy);
    }
    CHECK(hi - lo <= 0.05);
}

TEST_CASE("simulation is deterministic") {
    const auto cfg = small_config(6);
    auto sched = TrafficSchedule::table_preset(1200);
    sched.slots.resize(12);
    const auto a = run_simulation(sched, cfg, preset("separable"));
    const auto b = run_simulation(sched, cfg, preset("separable"));
    CHECK(csv(a) == csv(b));
    const auto text = csv(a);
    CHECK(text.rfind("slot,mode,fphtc_accuracy,baseline_accuracy,dpi_flows_used,rule_count\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 13);
    auto other = cfg;
    other.seed = 7;
    CHECK(csv(run_simulation(sched, other, preset("separable"))) != text);
}

}
