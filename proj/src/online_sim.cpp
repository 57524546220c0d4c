#include "fphtc/online_sim.hpp"

#include <algorithm>
#include <ostream>

#include "fphtc/distillation.hpp"
#include "fphtc/error.hpp"
#include "fphtc/kernels.hpp"
#include "fphtc/numfmt.hpp"
#include "fphtc/rng.hpp"

namespace fphtc {

TrafficSchedule TrafficSchedule::table_preset(std::size_t flows_per_slot) {
    using A = AppType;
    const std::vector<std::vector<AppType>> phases{
        {A::AUDIO, A::FTP, A::VIDEO, A::VOIP, A::WEB},
        {A::FTP, A::MAIL, A::P2P, A::VIDEO, A::VOIP},
        {A::AUDIO, A::CHAT, A::FTP, A::MAIL, A::WEB},
    };
    TrafficSchedule s;
    for (const auto& apps : phases)
        for (int i = 0; i < 10; ++i) s.slots.push_back({apps, flows_per_slot});
    return s;
}

TrafficSchedule TrafficSchedule::constant(std::span<const AppType> apps, std::size_t slots, std::size_t flows_per_slot) {
    TrafficSchedule s;
    for (std::size_t i = 0; i < slots; ++i) s.slots.push_back({{apps.begin(), apps.end()}, flows_per_slot});
    return s;
}

void TrafficSchedule::validate() const {
    if (slots.empty()) throw ConfigError("schedule has no slots");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].apps.empty()) throw ConfigError("schedule slot " + std::to_string(i) + " has no applications");
        if (slots[i].flows_per_slot < 1)
            throw ConfigError("schedule slot " + std::to_string(i) + " has flows_per_slot < 1");
    }
}

void OnlineConfig::validate() const {
    if (!(accuracy_threshold > 0 && accuracy_threshold < 1))
        throw ConfigError("online: accuracy_threshold must lie in (0,1)");
    if (!(saturation_threshold > 0 && saturation_threshold < 1))
        throw ConfigError("online: saturation_threshold must lie in (0,1)");
    if (dpi_flows_per_slot < 1) throw ConfigError("online: dpi_flows_per_slot must be >= 1");
    if (teacher_labeled_flows < dpi_flows_per_slot)
        throw ConfigError("online: teacher_labeled_flows must be >= dpi_flows_per_slot");
    if (test_flows_per_slot < 1) throw ConfigError("online: test_flows_per_slot must be >= 1");
    teacher_config.validate();
    student_config.validate();
}

std::string_view to_string(Mode m) noexcept { return m == Mode::Monitoring ? "Monitoring" : "Retraining"; }

Mode next_mode(Mode current, double accuracy, std::optional<double> previous, const OnlineConfig& cfg) {
    if (current == Mode::Monitoring) return accuracy < cfg.accuracy_threshold ? Mode::Retraining : Mode::Monitoring;
    if (accuracy >= cfg.accuracy_threshold && previous && accuracy - *previous < cfg.saturation_threshold)
        return Mode::Monitoring;
    return Mode::Retraining;
}

namespace {

RoutingPolicy train_policy(std::span<const Flow> flows, LabelKind kind, const CartConfig& config, std::uint64_t seed) {
    const PacketDataset ds = build_packet_dataset(flows, kind);
    return compile_rules(train_cart(ds.records, config, seed));
}

} // namespace

std::pair<SimState, SlotMetrics> step(SimState state, const SlotTraffic& traffic, const OnlineConfig& cfg) {
    SlotMetrics m;
    m.slot = state.slot_index;
    m.mode = state.mode;
    if (state.mode == Mode::Retraining) {
        const std::size_t n_teacher = std::min(cfg.teacher_labeled_flows, traffic.train.size());
        if (traffic.train.size() < cfg.dpi_flows_per_slot)
            throw DataError("online: slot " + std::to_string(m.slot) + " has fewer flows than the DPI budget");
        const std::span<const Flow> dpi_flows(traffic.train.data(), cfg.dpi_flows_per_slot);
        DpiOracle dpi;
        for (const auto& f : dpi_flows) dpi.label(f);
        const std::uint64_t slot_seed = derive_seed(cfg.seed, 0x5107 + m.slot);
        const GbdtModel teacher = train_teacher(dpi_flows, cfg.teacher_config, slot_seed);

        std::vector<Flow> labeled(traffic.train.begin(), traffic.train.begin() + static_cast<std::ptrdiff_t>(n_teacher));
        const auto labels = predict_labels(teacher, omp::extract_feature_matrix(labeled));
        for (std::size_t i = 0; i < labeled.size(); ++i) labeled[i].teacher_label = labels[i];

        state.fphtc.policy =
            train_policy(labeled, LabelKind::TeacherPredicted, cfg.student_config, derive_seed(slot_seed, 1));
        state.baseline.policy = train_policy(dpi_flows, LabelKind::Truth, cfg.student_config, derive_seed(slot_seed, 2));
        m.retrained = true;
        m.dpi_flows_used = dpi.flows_labeled();
    }
    if (!state.fphtc.policy || !state.baseline.policy)
        throw InvariantError("online: no policy deployed; the first slot must retrain");

    const PacketDataset test = build_packet_dataset(traffic.test, LabelKind::Truth);
    m.fphtc_accuracy = evaluate_policy(*state.fphtc.policy, test).balanced_acc;
    m.baseline_accuracy = evaluate_policy(*state.baseline.policy, test).balanced_acc;
    m.rule_count = state.fphtc.policy->rules.size();
    m.baseline_rule_count = state.baseline.policy->rules.size();
    state.fphtc.last_accuracy = m.fphtc_accuracy;
    state.baseline.last_accuracy = m.baseline_accuracy;

    m.next_mode = next_mode(state.mode, m.fphtc_accuracy, state.last_accuracy, cfg);
    state.mode = m.next_mode;
    state.last_accuracy = m.fphtc_accuracy;
    ++state.slot_index;
    return {std::move(state), m};
}

SlotTraffic slot_traffic(const SyntheticPreset& preset, const SlotSpec& spec, const OnlineConfig& cfg,
                         std::size_t slot) {
    auto flows = generate_synthetic(preset, uniform_mix(spec.apps), spec.flows_per_slot + cfg.test_flows_per_slot,
                                    derive_seed(cfg.seed, 0x10000 + slot));
    SlotTraffic t;
    const auto cut = flows.begin() + static_cast<std::ptrdiff_t>(spec.flows_per_slot);
    t.train.assign(std::make_move_iterator(flows.begin()), std::make_move_iterator(cut));
    t.test.assign(std::make_move_iterator(cut), std::make_move_iterator(flows.end()));
    return t;
}

std::vector<SlotMetrics> run_simulation(const TrafficSchedule& schedule, const OnlineConfig& cfg,
                                        const SyntheticPreset& preset) {
    schedule.validate();
    cfg.validate();
    SimState state;
    std::vector<SlotMetrics> out;
    out.reserve(schedule.slots.size());
    for (std::size_t s = 0; s < schedule.slots.size(); ++s) {
        const SlotTraffic traffic = slot_traffic(preset, schedule.slots[s], cfg, s);
        auto [next, metrics] = step(std::move(state), traffic, cfg);
        state = std::move(next);
        out.push_back(metrics);
    }
    return out;
}

void write_slot_csv(std::ostream& os, std::span<const SlotMetrics> metrics) {
    os << "slot,mode,fphtc_accuracy,baseline_accuracy,dpi_flows_used,rule_count\n";
    for (const auto& m : metrics)
        os << m.slot << ',' << to_string(m.mode) << ',' << format_double(m.fphtc_accuracy) << ','
           << format_double(m.baseline_accuracy) << ',' << m.dpi_flows_used << ',' << m.rule_count << '\n';
}

nlohmann::json schedule_to_json(const TrafficSchedule& s) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& spec : s.slots) {
        nlohmann::json apps = nlohmann::json::array();
        for (AppType a : spec.apps) apps.push_back(std::string(to_string(a)));
        slots.push_back({{"apps", apps}, {"flows_per_slot", spec.flows_per_slot}});
    }
    return {{"slots", slots}};
}

TrafficSchedule schedule_from_json(const nlohmann::json& j, const std::string& where) {
    auto fail = [](const std::string& at, const std::string& msg) -> ConfigError {
        return ConfigError((at.empty() ? "/" : at) + ": " + msg);
    };
    if (!j.is_object() || !j.contains("slots")) throw fail(where + "/slots", "missing required field");
    const auto& slots = j["slots"];
    if (!slots.is_array() || slots.empty()) throw fail(where + "/slots", "expected a nonempty array");
    TrafficSchedule s;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const std::string at = where + "/slots/" + std::to_string(i);
        const auto& sj = slots[i];
        if (!sj.is_object() || !sj.contains("apps")) throw fail(at + "/apps", "missing required field");
        SlotSpec spec;
        const auto& apps = sj["apps"];
        if (!apps.is_array() || apps.empty()) throw fail(at + "/apps", "expected a nonempty array");
        for (std::size_t k = 0; k < apps.size(); ++k) {
            auto a = apps[k].is_string() ? parse_app(apps[k].get<std::string>()) : std::nullopt;
            if (!a) throw fail(at + "/apps/" + std::to_string(k), "unknown application type");
            spec.apps.push_back(*a);
        }
        if (sj.contains("flows_per_slot")) {
            const auto& fj = sj["flows_per_slot"];
            if (!fj.is_number_integer() || fj.get<long long>() < 1)
                throw fail(at + "/flows_per_slot", "expected an integer >= 1");
            spec.flows_per_slot = fj.get<std::size_t>();
        }
        s.slots.push_back(std::move(spec));
    }
    return s;
}

} // namespace fphtc
