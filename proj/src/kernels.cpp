#include "fphtc/kernels.hpp"

#include "fphtc/error.hpp"

namespace fphtc {

namespace {

// Below this many (rows x features) a split scan stays on one thread.
constexpr std::size_t kParallelScanWork = 1u << 14;

void scores_row(const GbdtModel& m, std::span<const double> x, double* out) {
    const auto k = static_cast<std::size_t>(m.config.n_classes);
    for (std::size_t c = 0; c < k; ++c) out[c] = m.base_score;
    for (std::size_t r = 0; r < m.rounds(); ++r)
        for (std::size_t c = 0; c < k; ++c) out[c] += m.tree(r, c).predict(x);
}

CoSLabel match_one(const RoutingPolicy& policy, const PacketFeatures& f) {
    const Rule* rule = policy.match(f);
    if (!rule) throw InvariantError("packet matches no routing rule");
    return rule->action;
}

void check_width(const GbdtModel& m, const FeatureMatrix& x) {
    if (x.cols != m.n_features)
        throw DataError("feature matrix has " + std::to_string(x.cols) + " columns, model expects " +
                        std::to_string(m.n_features));
}

} // namespace

namespace serial {

FeatureMatrix extract_feature_matrix(std::span<const Flow> flows) {
    FeatureMatrix x(flows.size(), kFeatureDim);
    for (std::size_t i = 0; i < flows.size(); ++i) extract_features_into(flows[i], x.row(i));
    return x;
}

std::vector<double> predict_scores_batch(const GbdtModel& m, const FeatureMatrix& x) {
    check_width(m, x);
    const auto k = static_cast<std::size_t>(m.config.n_classes);
    std::vector<double> out(x.rows * k);
    for (std::size_t i = 0; i < x.rows; ++i) scores_row(m, x.row(i), out.data() + i * k);
    return out;
}

std::vector<CoSLabel> classify_batch(const DecisionTree& tree, std::span<const PacketFeatures> packets) {
    std::vector<CoSLabel> out(packets.size());
    for (std::size_t i = 0; i < packets.size(); ++i) out[i] = classify(tree, packets[i]);
    return out;
}

std::vector<CoSLabel> match_batch(const RoutingPolicy& policy, std::span<const PacketFeatures> packets) {
    std::vector<CoSLabel> out(packets.size());
    for (std::size_t i = 0; i < packets.size(); ++i) out[i] = match_one(policy, packets[i]);
    return out;
}

std::optional<SplitResult> node_best_split(const detail::NodeView& node, const GbdtConfig& config) {
    std::vector<SplitResult> per_feature(node.sorted.size());
    for (std::size_t f = 0; f < node.sorted.size(); ++f) per_feature[f] = detail::scan_feature(node, f, config);
    return detail::reduce_candidates(per_feature);
}

} // namespace serial

namespace omp {

FeatureMatrix extract_feature_matrix(std::span<const Flow> flows) {
    FeatureMatrix x(flows.size(), kFeatureDim);
    const auto n = static_cast<std::ptrdiff_t>(flows.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        extract_features_into(flows[static_cast<std::size_t>(i)], x.row(static_cast<std::size_t>(i)));
    return x;
}

std::vector<double> predict_scores_batch(const GbdtModel& m, const FeatureMatrix& x) {
    check_width(m, x);
    const auto k = static_cast<std::size_t>(m.config.n_classes);
    std::vector<double> out(x.rows * k);
    const auto n = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        scores_row(m, x.row(r), out.data() + r * k);
    }
    return out;
}

std::vector<CoSLabel> classify_batch(const DecisionTree& tree, std::span<const PacketFeatures> packets) {
    std::vector<CoSLabel> out(packets.size());
    const auto n = static_cast<std::ptrdiff_t>(packets.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = classify(tree, packets[static_cast<std::size_t>(i)]);
    return out;
}

std::vector<CoSLabel> match_batch(const RoutingPolicy& policy, std::span<const PacketFeatures> packets) {
    std::vector<CoSLabel> out(packets.size());
    std::vector<unsigned char> missed(packets.size(), 0);
    const auto n = static_cast<std::ptrdiff_t>(packets.size());
#pragma omp parallel for schedule(dynamic, 256)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        const Rule* rule = policy.match(packets[r]);
        if (rule) out[r] = rule->action;
        else missed[r] = 1;
    }
    for (unsigned char m : missed)
        if (m) throw InvariantError("packet matches no routing rule");
    return out;
}

std::optional<SplitResult> node_best_split(const detail::NodeView& node, const GbdtConfig& config) {
    const std::size_t n_features = node.sorted.size();
    const std::size_t rows = n_features ? node.sorted[0].size() : 0;
    std::vector<SplitResult> per_feature(n_features);
    const auto nf = static_cast<std::ptrdiff_t>(n_features);
#pragma omp parallel for schedule(dynamic) if (rows * n_features >= kParallelScanWork)
    for (std::ptrdiff_t f = 0; f < nf; ++f)
        per_feature[static_cast<std::size_t>(f)] = detail::scan_feature(node, static_cast<std::size_t>(f), config);
    return detail::reduce_candidates(per_feature);
}

} // namespace omp

} // namespace fphtc
