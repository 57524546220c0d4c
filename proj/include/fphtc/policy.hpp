#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fphtc/traffic_model.hpp"

namespace fphtc {

inline constexpr std::size_t kPacketFeatureCount = 4;
inline constexpr std::array<std::string_view, kPacketFeatureCount> kPacketFeatureNames{"srcip", "dstip", "sport",
                                                                                       "dport"};
/// Exclusive upper bound of each packet feature's integer domain.
inline constexpr std::array<std::uint64_t, kPacketFeatureCount> kPacketFeatureDomain{1ull << 32, 1ull << 32,
                                                                                     1ull << 16, 1ull << 16};

struct PacketFeatures {
    std::uint32_t src_ip_dec = 0;
    std::uint32_t dst_ip_dec = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;

    std::uint64_t value(std::size_t feature) const noexcept {
        switch (feature) {
        case 0: return src_ip_dec;
        case 1: return dst_ip_dec;
        case 2: return src_port;
        default: return dst_port;
        }
    }

    friend auto operator<=>(const PacketFeatures&, const PacketFeatures&) = default;
};

struct PacketFeaturesHash {
    std::size_t operator()(const PacketFeatures& f) const noexcept;
};

/// a.b.c.d -> a*2^24 + b*2^16 + c*2^8 + d; ports copied.
constexpr PacketFeatures packet_features(const Packet& p) noexcept {
    return {p.src_ip, p.dst_ip, p.src_port, p.dst_port};
}

struct PacketRecord {
    PacketFeatures features;
    CoSLabel label = CoSLabel::DelaySensitive;

    friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

struct PacketDataset {
    std::vector<PacketRecord> records;
    std::size_t conflicts = 0; // unique 4-tuples whose owning flows disagree on the label
};

/// One record per unique directed 4-tuple, in order of first occurrence. Each
/// flow votes once for each 4-tuple it contains; the majority label wins and
/// ties go to the label seen first. Throws DataError for unlabeled flows.
PacketDataset build_packet_dataset(std::span<const Flow> flows, LabelKind kind);

struct CartConfig {
    std::optional<int> max_depth;      // unlimited when empty
    std::optional<int> max_leaf_nodes; // unlimited when empty
    int min_samples_split = 2;

    void validate() const;
    friend bool operator==(const CartConfig&, const CartConfig&) = default;
};

struct DecisionTree {
    struct Node {
        int feature = -1; // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        CoSLabel label = CoSLabel::DelaySensitive;
        std::array<double, kClassCount> class_counts{}; // class-weighted

        bool is_leaf() const noexcept { return feature < 0; }
        friend bool operator==(const Node&, const Node&) = default;
    };
    std::vector<Node> nodes;

    std::size_t leaf_count() const;
    std::size_t depth() const;

    friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

/// Balanced weights N / (3 * N_k); zero for absent classes.
std::array<double, kClassCount> balanced_class_weights(std::span<const PacketRecord> records);

/// Weighted-majority label, ties to the lowest encoding.
CoSLabel majority_label(const std::array<double, kClassCount>& counts);

/// Weighted entropy (bits) of a class histogram.
double weighted_entropy(const std::array<double, kClassCount>& counts);

struct CartSplit {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0; // information gain at the node, in bits
};

/// Best entropy split of `records[indices]`; ties keep the lowest feature, then
/// the lowest threshold. Zero-gain splits are returned when they separate
/// samples; nullopt only when every feature is constant on the node.
std::optional<CartSplit> cart_best_split(std::span<const PacketRecord> records, std::span<const std::size_t> indices,
                                         const std::array<double, kClassCount>& class_weight);

/// `seed` is accepted for interface stability; training draws no randomness.
DecisionTree train_cart(std::span<const PacketRecord> records, const CartConfig& config, std::uint64_t seed);

CoSLabel classify(const DecisionTree& tree, const PacketFeatures& f);

struct Interval {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0; // exclusive

    bool contains(std::uint64_t v) const noexcept { return lo <= v && v < hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct Rule {
    std::array<Interval, kPacketFeatureCount> box;
    CoSLabel action = CoSLabel::DelaySensitive;

    bool matches(const PacketFeatures& f) const noexcept {
        for (std::size_t i = 0; i < kPacketFeatureCount; ++i)
            if (!box[i].contains(f.value(i))) return false;
        return true;
    }
    friend bool operator==(const Rule&, const Rule&) = default;
};

struct RoutingPolicy {
    std::vector<Rule> rules;

    /// First matching rule, or nullptr.
    const Rule* match(const PacketFeatures& f) const noexcept;

    friend bool operator==(const RoutingPolicy&, const RoutingPolicy&) = default;
};

/// One rule per leaf, in left-to-right leaf order.
RoutingPolicy compile_rules(const DecisionTree& tree);

/// Checks the rules tile the feature space: every box nonempty and in range,
/// boxes pairwise disjoint, total volume equal to the domain volume. Pairwise
/// checking is quadratic, so this is meant for tests and small policies.
/// Throws InvariantError naming the first violation.
void validate_partition(const RoutingPolicy& policy);

/// Volume-only exhaustiveness check (linear); throws InvariantError.
void check_volume(const RoutingPolicy& policy);

std::string format_rule(const Rule& r);
/// Throws FormatError on malformed input.
Rule parse_rule(std::string_view line, std::size_t line_no = 0);

/// One rule per line. Empty policies are rejected with InvariantError.
void export_policy(std::ostream& os, const RoutingPolicy& policy);
void export_policy(const std::string& path, const RoutingPolicy& policy);
/// Blank lines and lines starting with '#' are ignored.
RoutingPolicy import_policy(std::istream& is);
RoutingPolicy import_policy(const std::string& path);

void save_tree(std::ostream& os, const DecisionTree& tree);
DecisionTree load_tree(std::istream& is);
void save_tree(const std::string& path, const DecisionTree& tree);
DecisionTree load_tree(const std::string& path);

} // namespace fphtc
