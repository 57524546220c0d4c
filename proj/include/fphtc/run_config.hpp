#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fphtc/analysis.hpp"
#include "fphtc/ingestion.hpp"
#include "fphtc/online_sim.hpp"
#include "fphtc/policy.hpp"
#include "fphtc/teacher.hpp"

namespace fphtc {

/// Where experiment traffic comes from: a synthetic preset, or captures
/// listed in a manifest split into corpus and test sets.
struct CorpusSettings {
    SyntheticPreset preset;
    AppMix mix;
    std::size_t flows = 1000; // synth output size
    std::optional<std::string> manifest;
    double test_fraction = 0.2;
};

struct DistillSettings {
    std::vector<std::size_t> n_grid{1000, 5000, 10000, 20000};
    std::optional<double> lambda;         // fixed fraction, or
    std::size_t dpi_flows = 1000;         // fixed DPI budget (used when lambda is unset)
    std::size_t replicas = 10;
    std::size_t test_flows = 2000;
    double c_dpi = 1.0;
    bool keep_dpi_truth = false;
    double confidence_level = 0.90;
    GbdtConfig teacher;
    CartConfig student;

    /// Throws ConfigError when the fraction leaves (0,1].
    double lambda_for(std::size_t n) const;
    void validate() const;
};

struct BoundsSettings {
    BoundParams params;
    int grid_points = 100;
};

struct OnlineSettings {
    OnlineConfig config;
    TrafficSchedule schedule = TrafficSchedule::table_preset();
};

struct RunConfig {
    std::optional<std::uint64_t> seed;
    CorpusSettings corpus;
    DistillSettings distill;
    BoundsSettings bounds;
    OnlineSettings online;

    RunConfig();
};

/// Unknown keys and type errors throw ConfigError prefixed with the JSON
/// pointer of the offending field. Relative manifest paths resolve against
/// `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

nlohmann::json gbdt_config_to_json(const GbdtConfig& c);
GbdtConfig gbdt_config_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json cart_config_to_json(const CartConfig& c);
CartConfig cart_config_from_json(const nlohmann::json& j, const std::string& where);

/// Flag, then config, then the FPHTC_SEED environment variable, then 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const RunConfig& cfg);

/// Parses a decimal seed; throws ConfigError.
std::uint64_t parse_seed(const std::string& text, const std::string& source);

} // namespace fphtc
