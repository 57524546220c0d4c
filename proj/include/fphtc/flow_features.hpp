#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fphtc/traffic_model.hpp"

namespace fphtc {

struct FeatureInfo {
    std::string name;
    std::string description;
    std::string unit;
};

struct FeatureSchema {
    std::string version;
    std::vector<FeatureInfo> features;

    std::size_t dimension() const noexcept { return features.size(); }
    bool contains(std::string_view name) const noexcept;
    /// Throws ConfigError for unknown names.
    std::size_t index_of(std::string_view name) const;

    friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
        if (a.version != b.version || a.features.size() != b.features.size()) return false;
        for (std::size_t i = 0; i < a.features.size(); ++i)
            if (a.features[i].name != b.features[i].name) return false;
        return true;
    }
};

/// The flow-level schema: 11 statistics for each of fwd, bwd and combined
/// packets, 5 rates/ratios, 4 address/port features and 2 presence flags.
const FeatureSchema& schema();

inline constexpr std::size_t kFeatureDim = 44;
inline constexpr std::string_view kSchemaVersion = "flow-features-v1";

using FeatureVector = std::vector<double>;

/// Row-major flows x features.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }

    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Pure function of the flow's packets and their direction tags.
FeatureVector extract_features(const Flow& flow);

/// Writes the row for `flow` into `out` (length kFeatureDim).
void extract_features_into(const Flow& flow, std::span<double> out);

/// Header = schema names then "label"; one row per flow.
void write_feature_csv(std::ostream& os, std::span<const Flow> flows, std::span<const CoSLabel> labels);

} // namespace fphtc
