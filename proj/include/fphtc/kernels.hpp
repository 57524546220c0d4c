#pragma once

// Data-parallel kernels. Each routine exists twice with the same signature:
// `serial::` is the reference, `omp::` the OpenMP version the pipeline uses.
// Both produce bit-identical results; parallel loops only write disjoint slots
// and every reduction runs in a fixed order afterwards.

#include <optional>
#include <span>
#include <vector>

#include "fphtc/flow_features.hpp"
#include "fphtc/policy.hpp"
#include "fphtc/teacher.hpp"

namespace fphtc {

namespace serial {

FeatureMatrix extract_feature_matrix(std::span<const Flow> flows);
/// rows x n_classes, row-major.
std::vector<double> predict_scores_batch(const GbdtModel& m, const FeatureMatrix& x);
std::vector<CoSLabel> classify_batch(const DecisionTree& tree, std::span<const PacketFeatures> packets);
/// Action of the first matching rule; throws InvariantError if a packet matches none.
std::vector<CoSLabel> match_batch(const RoutingPolicy& policy, std::span<const PacketFeatures> packets);
std::optional<SplitResult> node_best_split(const detail::NodeView& node, const GbdtConfig& config);

} // namespace serial

namespace omp {

FeatureMatrix extract_feature_matrix(std::span<const Flow> flows);
std::vector<double> predict_scores_batch(const GbdtModel& m, const FeatureMatrix& x);
std::vector<CoSLabel> classify_batch(const DecisionTree& tree, std::span<const PacketFeatures> packets);
std::vector<CoSLabel> match_batch(const RoutingPolicy& policy, std::span<const PacketFeatures> packets);
std::optional<SplitResult> node_best_split(const detail::NodeView& node, const GbdtConfig& config);

} // namespace omp

} // namespace fphtc
