#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fphtc/flow_features.hpp"
#include "fphtc/traffic_model.hpp"

namespace fphtc {

struct GbdtConfig {
    int n_rounds = 100;
    double learning_rate = 0.3;
    int max_depth = 6;          // 0 = unlimited
    double min_child_weight = 1.0;
    double l2_reg = 1.0;
    int n_classes = static_cast<int>(kClassCount);
    int max_leaves = 0;         // 0 = unlimited; finite caps grow best-first

    /// 100 rounds, lr 0.3, depth 6.
    static GbdtConfig standard() { return {}; }
    /// 100 rounds, lr 0.3, 31 leaves, no depth cap.
    static GbdtConfig leafwise();

    /// Throws ConfigError.
    void validate() const;

    friend bool operator==(const GbdtConfig&, const GbdtConfig&) = default;
};

/// Binary regression tree; go left iff x[feature] <= threshold.
struct RegressionTree {
    struct Node {
        int feature = -1; // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0; // leaf output, already scaled by the learning rate

        bool is_leaf() const noexcept { return feature < 0; }
        friend bool operator==(const Node&, const Node&) = default;
    };
    std::vector<Node> nodes;

    double predict(std::span<const double> x) const;
    std::size_t leaf_count() const;

    friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct GbdtModel {
    GbdtConfig config;
    std::string schema_version{kSchemaVersion};
    std::size_t n_features = kFeatureDim;
    double base_score = 0.0;
    std::vector<RegressionTree> trees; // round-major: trees[round * n_classes + class]

    std::size_t rounds() const noexcept {
        return config.n_classes > 0 ? trees.size() / static_cast<std::size_t>(config.n_classes) : 0;
    }
    const RegressionTree& tree(std::size_t round, std::size_t cls) const {
        return trees[round * static_cast<std::size_t>(config.n_classes) + cls];
    }

    friend bool operator==(const GbdtModel&, const GbdtModel&) = default;
};

struct GradHess {
    std::vector<double> g;
    std::vector<double> h;
};

/// Gradient and diagonal Hessian of the multiclass log-loss at `scores`.
GradHess softmax_gradient_hessian(std::span<const double> scores, int true_class);

/// Multiclass log-loss of one sample, computed with log-sum-exp.
double softmax_log_loss(std::span<const double> scores, int true_class);

struct SplitResult {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

/// Exact greedy split search over all (feature, midpoint) candidates.
/// Returns nullopt when no candidate has positive gain with both children
/// meeting min_child_weight.
std::optional<SplitResult> best_split(std::span<const std::size_t> sample_indices, const FeatureMatrix& x,
                                      std::span<const double> g, std::span<const double> h, const GbdtConfig& config);

/// Per-round training diagnostics; `log_loss[0]` is before the first round.
struct TrainTrace {
    std::vector<double> log_loss;
};

/// `seed` is accepted for interface stability; the exact-greedy learner is
/// deterministic and draws no randomness.
GbdtModel train_gbdt(const FeatureMatrix& x, std::span<const CoSLabel> y, const GbdtConfig& config,
                     std::uint64_t seed, TrainTrace* trace = nullptr);

/// Throws DataError on a dimension mismatch.
std::vector<double> predict_scores(const GbdtModel& m, std::span<const double> x);
CoSLabel predict_label(const GbdtModel& m, std::span<const double> x);

/// argmax with ties going to the lowest class encoding.
CoSLabel argmax_label(std::span<const double> scores);

/// Labels every row of `x` (parallel kernel).
std::vector<CoSLabel> predict_labels(const GbdtModel& m, const FeatureMatrix& x);

void save_model(std::ostream& os, const GbdtModel& m);
GbdtModel load_model(std::istream& is);
void save_model(const std::string& path, const GbdtModel& m);
GbdtModel load_model(const std::string& path);

namespace detail {

/// Presorted samples of one tree node: `sorted[f]` lists the node's rows in
/// ascending order of feature f.
struct NodeView {
    std::vector<std::span<const std::uint32_t>> sorted;
    const FeatureMatrix* x = nullptr;
    std::span<const double> g;
    std::span<const double> h;
    double sum_g = 0.0;
    double sum_h = 0.0;
};

/// Best candidate of a single feature, or gain <= 0 if none is admissible.
SplitResult scan_feature(const NodeView& node, std::size_t feature, const GbdtConfig& config);

/// Reduces per-feature candidates: higher gain wins, ties keep the lower feature.
std::optional<SplitResult> reduce_candidates(std::span<const SplitResult> per_feature);

} // namespace detail

} // namespace fphtc
