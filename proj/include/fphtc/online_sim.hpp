#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fphtc/ingestion.hpp"
#include "fphtc/policy.hpp"
#include "fphtc/teacher.hpp"

namespace fphtc {

struct SlotSpec {
    std::vector<AppType> apps;
    std::size_t flows_per_slot = 10000;
};

struct TrafficSchedule {
    std::vector<SlotSpec> slots;

    /// 30 slots; app subsets change at slots 0, 10 and 20.
    static TrafficSchedule table_preset(std::size_t flows_per_slot = 10000);
    /// `slots` copies of one subset.
    static TrafficSchedule constant(std::span<const AppType> apps, std::size_t slots, std::size_t flows_per_slot = 10000);

    /// Throws ConfigError for an empty schedule or subset.
    void validate() const;
};

struct OnlineConfig {
    double accuracy_threshold = 0.80;
    double saturation_threshold = 0.01;
    std::size_t dpi_flows_per_slot = 1000;
    std::size_t teacher_labeled_flows = 10000;
    std::size_t test_flows_per_slot = 2000;
    GbdtConfig teacher_config;
    CartConfig student_config;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class Mode : std::uint8_t { Monitoring, Retraining };
std::string_view to_string(Mode m) noexcept;

/// One arm's deployed policy.
struct ArmState {
    std::optional<RoutingPolicy> policy;
    double last_accuracy = 0.0;
};

struct SimState {
    Mode mode = Mode::Retraining; // slot 0 always trains
    ArmState fphtc;
    ArmState baseline;
    std::optional<double> last_accuracy; // FPHTC arm, previous slot
    std::size_t slot_index = 0;
};

struct SlotMetrics {
    std::size_t slot = 0;
    Mode mode = Mode::Monitoring; // mode the slot ran in
    Mode next_mode = Mode::Monitoring;
    bool retrained = false;
    double fphtc_accuracy = 0.0;
    double baseline_accuracy = 0.0;
    std::size_t dpi_flows_used = 0;
    std::size_t rule_count = 0;
    std::size_t baseline_rule_count = 0;
};

/// The slot's traffic. `train` supplies the DPI flows (a prefix) and the
/// teacher-labeled flows; `test` is scored.
struct SlotTraffic {
    std::vector<Flow> train;
    std::vector<Flow> test;
};

/// Mode transition after a slot measured `accuracy`. `previous` is the prior
/// slot's accuracy (none at slot 0).
Mode next_mode(Mode current, double accuracy, std::optional<double> previous, const OnlineConfig& cfg);

/// Runs one slot: retrain both arms when in Retraining, score both, then apply
/// the mode transition.
std::pair<SimState, SlotMetrics> step(SimState state, const SlotTraffic& traffic, const OnlineConfig& cfg);

/// Draws a slot's traffic from `preset`.
SlotTraffic slot_traffic(const SyntheticPreset& preset, const SlotSpec& spec, const OnlineConfig& cfg,
                         std::size_t slot);

std::vector<SlotMetrics> run_simulation(const TrafficSchedule& schedule, const OnlineConfig& cfg,
                                        const SyntheticPreset& preset);

/// Header: slot,mode,fphtc_accuracy,baseline_accuracy,dpi_flows_used,rule_count
void write_slot_csv(std::ostream& os, std::span<const SlotMetrics> metrics);

nlohmann::json schedule_to_json(const TrafficSchedule& s);
/// Errors carry a JSON pointer to the offending field.
TrafficSchedule schedule_from_json(const nlohmann::json& j, const std::string& where = "");

} // namespace fphtc
