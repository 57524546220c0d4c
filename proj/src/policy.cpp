#include "fphtc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "fphtc/error.hpp"
#include "fphtc/numfmt.hpp"
#include "fphtc/rng.hpp"
#include "text_io.hpp"

namespace fphtc {

std::size_t PacketFeaturesHash::operator()(const PacketFeatures& f) const noexcept {
    const std::uint64_t a = (std::uint64_t{f.src_ip_dec} << 32) | f.dst_ip_dec;
    const std::uint64_t b = (std::uint64_t{f.src_port} << 16) | f.dst_port;
    return static_cast<std::size_t>(mix64(a ^ mix64(b)));
}

PacketDataset build_packet_dataset(std::span<const Flow> flows, LabelKind kind) {
    struct Entry {
        std::size_t slot;
        std::array<std::size_t, kClassCount> votes{};
        std::array<std::size_t, kClassCount> first_seen{};
    };
    constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();
    const FlowDataset view{{}, kind};

    std::unordered_map<PacketFeatures, Entry, PacketFeaturesHash> seen;
    std::vector<PacketFeatures> order;
    std::size_t vote_seq = 0;
    std::vector<PacketFeatures> in_flow;
    for (const auto& flow : flows) {
        const CoSLabel label = view.label_of(flow);
        const auto c = static_cast<std::size_t>(encode(label));
        in_flow.clear();
        for (const auto& p : flow.packets) {
            const PacketFeatures f = packet_features(p);
            if (std::find(in_flow.begin(), in_flow.end(), f) != in_flow.end()) continue;
            in_flow.push_back(f);
            auto [it, inserted] = seen.try_emplace(f);
            if (inserted) {
                it->second.slot = order.size();
                it->second.first_seen.fill(kNever);
                order.push_back(f);
            }
            Entry& e = it->second;
            ++e.votes[c];
            if (e.first_seen[c] == kNever) e.first_seen[c] = vote_seq;
            ++vote_seq;
        }
    }

    PacketDataset out;
    out.records.reserve(order.size());
    for (const auto& f : order) {
        const Entry& e = seen.at(f);
        std::size_t best = kClassCount, distinct = 0;
        for (std::size_t c = 0; c < kClassCount; ++c) {
            if (e.votes[c] == 0) continue;
            ++distinct;
            if (best == kClassCount || e.votes[c] > e.votes[best] ||
                (e.votes[c] == e.votes[best] && e.first_seen[c] < e.first_seen[best]))
                best = c;
        }
        if (distinct > 1) ++out.conflicts;
        out.records.push_back({f, static_cast<CoSLabel>(best)});
    }
    return out;
}

void CartConfig::validate() const {
    if (max_depth && *max_depth < 1) throw ConfigError("cart: max_depth must be >= 1");
    if (max_leaf_nodes && *max_leaf_nodes < 2) throw ConfigError("cart: max_leaf_nodes must be >= 2");
    if (min_samples_split < 2) throw ConfigError("cart: min_samples_split must be >= 2");
}

std::size_t DecisionTree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
}

std::size_t DecisionTree::depth() const {
    if (nodes.empty()) return 0;
    std::size_t best = 0;
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        best = std::max(best, d);
        const auto& n = nodes[static_cast<std::size_t>(i)];
        if (!n.is_leaf()) {
            stack.emplace_back(n.left, d + 1);
            stack.emplace_back(n.right, d + 1);
        }
    }
    return best;
}

std::array<double, kClassCount> balanced_class_weights(std::span<const PacketRecord> records) {
    std::array<double, kClassCount> counts{};
    for (const auto& r : records) counts[static_cast<std::size_t>(encode(r.label))] += 1.0;
    std::array<double, kClassCount> w{};
    const auto n = static_cast<double>(records.size());
    for (std::size_t c = 0; c < kClassCount; ++c)
        w[c] = counts[c] > 0 ? n / (static_cast<double>(kClassCount) * counts[c]) : 0.0;
    return w;
}

CoSLabel majority_label(const std::array<double, kClassCount>& counts) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kClassCount; ++c)
        if (counts[c] > counts[best]) best = c;
    return static_cast<CoSLabel>(best);
}

double weighted_entropy(const std::array<double, kClassCount>& counts) {
    const double total = counts[0] + counts[1] + counts[2];
    if (total <= 0) return 0.0;
    double h = 0.0;
    for (double c : counts)
        if (c > 0) {
            const double p = c / total;
            h -= p * std::log2(p);
        }
    return h;
}

namespace {

// Candidates must beat the incumbent by this much, so near-equal gains keep
// the earlier (lower feature, lower threshold) split.
constexpr double kGainTieTolerance = 1e-12;

double cart_midpoint(std::uint64_t lo, std::uint64_t hi) {
    return 0.5 * (static_cast<double>(lo) + static_cast<double>(hi));
}

struct CartNodeScan {
    std::span<const PacketRecord> records;
    const std::array<double, kClassCount>* weight;
    std::array<double, kClassCount> total{};
};

/// Scans one feature's ascending order; updates `best` if a candidate wins.
void scan_cart_feature(const CartNodeScan& node, std::span<const std::uint32_t> order, std::size_t feature,
                       std::optional<CartSplit>& best) {
    if (order.size() < 2) return;
    const auto& tot = node.total;
    const double w_total = tot[0] + tot[1] + tot[2];
    const double parent = weighted_entropy(tot);
    std::array<double, kClassCount> left{};
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const PacketRecord& r = node.records[order[i]];
        const auto c = static_cast<std::size_t>(encode(r.label));
        left[c] += (*node.weight)[c];
        const std::uint64_t v = r.features.value(feature);
        const std::uint64_t vn = node.records[order[i + 1]].features.value(feature);
        if (vn == v) continue;
        const std::array<double, kClassCount> right{tot[0] - left[0], tot[1] - left[1], tot[2] - left[2]};
        const double wl = left[0] + left[1] + left[2];
        const double wr = w_total - wl;
        const double gain =
            w_total > 0 ? parent - (wl / w_total) * weighted_entropy(left) - (wr / w_total) * weighted_entropy(right)
                        : 0.0;
        if (!best || gain > best->gain + kGainTieTolerance)
            best = CartSplit{static_cast<int>(feature), cart_midpoint(v, vn), gain};
    }
}

std::vector<std::uint32_t> sort_records(std::span<const PacketRecord> records, std::span<const std::uint32_t> rows,
                                        std::size_t feature) {
    std::vector<std::uint32_t> out(rows.begin(), rows.end());
    std::sort(out.begin(), out.end(), [&](std::uint32_t a, std::uint32_t b) {
        const auto va = records[a].features.value(feature), vb = records[b].features.value(feature);
        return va < vb || (va == vb && a < b);
    });
    return out;
}

class CartBuilder {
public:
    CartBuilder(std::span<const PacketRecord> records, const CartConfig& cfg)
        : records_(records), cfg_(cfg), weight_(balanced_class_weights(records)), goes_left_(records.size(), 0),
          scratch_(records.size()) {
        std::vector<std::uint32_t> all(records.size());
        std::iota(all.begin(), all.end(), 0u);
        for (std::size_t f = 0; f < kPacketFeatureCount; ++f) order_[f] = sort_records(records, all, f);
    }

    DecisionTree build() {
        struct Pending {
            double priority;
            int node;
            CartSplit split;
        };
        auto cmp = [](const Pending& a, const Pending& b) {
            return a.priority < b.priority || (a.priority == b.priority && a.node > b.node);
        };
        std::priority_queue<Pending, std::vector<Pending>, decltype(cmp)> heap(cmp);

        const int root = make_node(0, records_.size(), 0);
        root_weight_ = weight_sum(tree_.nodes[0].class_counts);
        auto push = [&](int id) {
            if (auto s = evaluate(id)) {
                const double share = root_weight_ > 0 ? weight_sum(tree_.nodes[static_cast<std::size_t>(id)].class_counts) / root_weight_ : 0.0;
                heap.push({share * s->gain, id, *s});
            }
        };
        push(root);

        std::size_t leaves = 1;
        while (!heap.empty() && (!cfg_.max_leaf_nodes || leaves < static_cast<std::size_t>(*cfg_.max_leaf_nodes))) {
            const Pending p = heap.top();
            heap.pop();
            const auto [b, e, depth] = ranges_[static_cast<std::size_t>(p.node)];
            const std::size_t mid = partition(b, e, p.split);
            tree_.nodes[static_cast<std::size_t>(p.node)].feature = p.split.feature;
            tree_.nodes[static_cast<std::size_t>(p.node)].threshold = p.split.threshold;
            const int l = make_node(b, mid, depth + 1);
            const int r = make_node(mid, e, depth + 1);
            tree_.nodes[static_cast<std::size_t>(p.node)].left = l;
            tree_.nodes[static_cast<std::size_t>(p.node)].right = r;
            push(l);
            push(r);
            ++leaves;
        }
        return std::move(tree_);
    }

private:
    struct Range {
        std::size_t b, e;
        int depth;
    };

    static double weight_sum(const std::array<double, kClassCount>& c) { return c[0] + c[1] + c[2]; }

    int make_node(std::size_t b, std::size_t e, int depth) {
        DecisionTree::Node n;
        for (std::size_t i = b; i < e; ++i) {
            const auto c = static_cast<std::size_t>(encode(records_[order_[0][i]].label));
            n.class_counts[c] += weight_[c];
        }
        n.label = majority_label(n.class_counts);
        tree_.nodes.push_back(n);
        ranges_.push_back({b, e, depth});
        return static_cast<int>(tree_.nodes.size() - 1);
    }

    std::optional<CartSplit> evaluate(int id) {
        const auto [b, e, depth] = ranges_[static_cast<std::size_t>(id)];
        const auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        if (cfg_.max_depth && depth >= *cfg_.max_depth) return std::nullopt;
        if (e - b < static_cast<std::size_t>(cfg_.min_samples_split)) return std::nullopt;
        std::array<std::size_t, kClassCount> present{};
        for (std::size_t i = b; i < e; ++i) present[static_cast<std::size_t>(encode(records_[order_[0][i]].label))] = 1;
        if (present[0] + present[1] + present[2] < 2) return std::nullopt; // pure
        CartNodeScan scan{records_, &weight_, node.class_counts};
        std::optional<CartSplit> best;
        for (std::size_t f = 0; f < kPacketFeatureCount; ++f)
            scan_cart_feature(scan, std::span<const std::uint32_t>(order_[f].data() + b, e - b), f, best);
        return best;
    }

    std::size_t partition(std::size_t b, std::size_t e, const CartSplit& s) {
        const auto f = static_cast<std::size_t>(s.feature);
        for (std::size_t i = b; i < e; ++i) {
            const std::uint32_t r = order_[0][i];
            goes_left_[r] = static_cast<double>(records_[r].features.value(f)) <= s.threshold ? 1 : 0;
        }
        std::size_t mid = b;
        for (auto& col : order_) {
            std::size_t l = b, rc = 0;
            for (std::size_t i = b; i < e; ++i) {
                const std::uint32_t r = col[i];
                if (goes_left_[r]) col[l++] = r;
                else scratch_[rc++] = r;
            }
            std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(rc),
                      col.begin() + static_cast<std::ptrdiff_t>(l));
            mid = l;
        }
        return mid;
    }

    std::span<const PacketRecord> records_;
    const CartConfig& cfg_;
    std::array<double, kClassCount> weight_;
    std::array<std::vector<std::uint32_t>, kPacketFeatureCount> order_;
    std::vector<std::uint8_t> goes_left_;
    std::vector<std::uint32_t> scratch_;
    DecisionTree tree_;
    std::vector<Range> ranges_;
    double root_weight_ = 0.0;
};

} // namespace

std::optional<CartSplit> cart_best_split(std::span<const PacketRecord> records, std::span<const std::size_t> indices,
                                         const std::array<double, kClassCount>& class_weight) {
    std::vector<std::uint32_t> rows;
    rows.reserve(indices.size());
    CartNodeScan scan{records, &class_weight, {}};
    for (std::size_t i : indices) {
        rows.push_back(static_cast<std::uint32_t>(i));
        const auto c = static_cast<std::size_t>(encode(records[i].label));
        scan.total[c] += class_weight[c];
    }
    std::optional<CartSplit> best;
    for (std::size_t f = 0; f < kPacketFeatureCount; ++f) {
        const auto order = sort_records(records, rows, f);
        scan_cart_feature(scan, order, f, best);
    }
    return best;
}

DecisionTree train_cart(std::span<const PacketRecord> records, const CartConfig& config, std::uint64_t /*seed*/) {
    config.validate();
    if (records.empty()) throw DataError("train_cart: no training records");
    if (records.size() > std::numeric_limits<std::uint32_t>::max()) throw DataError("train_cart: too many records");
    return CartBuilder(records, config).build();
}

CoSLabel classify(const DecisionTree& tree, const PacketFeatures& f) {
    std::size_t i = 0;
    while (!tree.nodes[i].is_leaf()) {
        const auto& n = tree.nodes[i];
        i = static_cast<std::size_t>(static_cast<double>(f.value(static_cast<std::size_t>(n.feature))) <= n.threshold
                                         ? n.left
                                         : n.right);
    }
    return tree.nodes[i].label;
}

// ---- routing policy ------------------------------------------------------

const Rule* RoutingPolicy::match(const PacketFeatures& f) const noexcept {
    for (const auto& r : rules)
        if (r.matches(f)) return &r;
    return nullptr;
}

RoutingPolicy compile_rules(const DecisionTree& tree) {
    if (tree.nodes.empty()) throw InvariantError("compile_rules: empty tree");
    RoutingPolicy policy;
    std::array<Interval, kPacketFeatureCount> full{};
    for (std::size_t f = 0; f < kPacketFeatureCount; ++f) full[f] = {0, kPacketFeatureDomain[f]};

    // Integer cut point: v <= t  <=>  v < floor(t) + 1.
    auto cut = [](double t, std::size_t f) -> std::uint64_t {
        if (t < 0) return 0;
        const double c = std::floor(t) + 1.0;
        return c >= static_cast<double>(kPacketFeatureDomain[f]) ? kPacketFeatureDomain[f] : static_cast<std::uint64_t>(c);
    };

    std::vector<std::pair<int, std::array<Interval, kPacketFeatureCount>>> stack{{0, full}};
    while (!stack.empty()) {
        auto [i, box] = stack.back();
        stack.pop_back();
        const auto& n = tree.nodes[static_cast<std::size_t>(i)];
        if (n.is_leaf()) {
            policy.rules.push_back({box, n.label});
            continue;
        }
        const auto f = static_cast<std::size_t>(n.feature);
        const std::uint64_t c = cut(n.threshold, f);
        auto left = box, right = box;
        left[f].hi = std::min(left[f].hi, c);
        if (left[f].hi < left[f].lo) left[f].hi = left[f].lo;
        right[f].lo = std::max(right[f].lo, c);
        if (right[f].lo > right[f].hi) right[f].lo = right[f].hi;
        stack.emplace_back(n.right, right);
        stack.emplace_back(n.left, left);
    }
    return policy;
}

namespace {

using u128 = unsigned __int128;

u128 box_volume(const std::array<Interval, kPacketFeatureCount>& box) {
    u128 v = 1;
    for (const auto& iv : box) v *= static_cast<u128>(iv.hi - iv.lo);
    return v;
}

u128 domain_volume() {
    u128 v = 1;
    for (auto d : kPacketFeatureDomain) v *= d;
    return v;
}

void check_box(const Rule& r, std::size_t idx) {
    for (std::size_t f = 0; f < kPacketFeatureCount; ++f)
        if (r.box[f].lo > r.box[f].hi || r.box[f].hi > kPacketFeatureDomain[f])
            throw InvariantError("rule " + std::to_string(idx) + " has an invalid " +
                                 std::string(kPacketFeatureNames[f]) + " interval");
}

} // namespace

void check_volume(const RoutingPolicy& policy) {
    if (policy.rules.empty()) throw InvariantError("routing policy has no rules");
    u128 total = 0;
    for (std::size_t i = 0; i < policy.rules.size(); ++i) {
        check_box(policy.rules[i], i);
        total += box_volume(policy.rules[i].box);
    }
    if (total != domain_volume()) throw InvariantError("routing policy rules do not exactly cover the feature space");
}

void validate_partition(const RoutingPolicy& policy) {
    check_volume(policy);
    const auto& rs = policy.rules;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        if (box_volume(rs[i].box) == 0) continue;
        for (std::size_t j = i + 1; j < rs.size(); ++j) {
            bool overlap = box_volume(rs[j].box) != 0;
            for (std::size_t f = 0; f < kPacketFeatureCount && overlap; ++f)
                overlap = std::max(rs[i].box[f].lo, rs[j].box[f].lo) < std::min(rs[i].box[f].hi, rs[j].box[f].hi);
            if (overlap)
                throw InvariantError("rules " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
        }
    }
}

std::string format_rule(const Rule& r) {
    std::string s;
    for (std::size_t f = 0; f < kPacketFeatureCount; ++f) {
        s += kPacketFeatureNames[f];
        s += ":[" + std::to_string(r.box[f].lo) + ',' + std::to_string(r.box[f].hi) + ") ";
    }
    s += "-> ";
    s += to_string(r.action);
    return s;
}

Rule parse_rule(std::string_view line, std::size_t line_no) {
    std::istringstream ss{std::string(line)};
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() != kPacketFeatureCount + 2) throw FormatError("rule must have 4 intervals, '->' and an action", line_no);
    Rule r;
    for (std::size_t f = 0; f < kPacketFeatureCount; ++f) {
        std::string_view t = tok[f];
        const std::string prefix = std::string(kPacketFeatureNames[f]) + ":[";
        if (t.substr(0, prefix.size()) != prefix || t.back() != ')')
            throw FormatError("expected " + prefix + "lo,hi)", line_no);
        t = t.substr(prefix.size(), t.size() - prefix.size() - 1);
        const auto comma = t.find(',');
        if (comma == std::string_view::npos) throw FormatError("interval is missing ','", line_no);
        auto lo = parse_int<std::uint64_t>(t.substr(0, comma));
        auto hi = parse_int<std::uint64_t>(t.substr(comma + 1));
        if (!lo || !hi) throw FormatError("interval bounds must be non-negative integers", line_no);
        if (*lo > *hi || *hi > kPacketFeatureDomain[f])
            throw FormatError(std::string(kPacketFeatureNames[f]) + " interval out of range", line_no);
        r.box[f] = {*lo, *hi};
    }
    if (tok[kPacketFeatureCount] != "->") throw FormatError("expected '->'", line_no);
    auto action = parse_cos(tok[kPacketFeatureCount + 1]);
    if (!action) throw FormatError("unknown action '" + tok[kPacketFeatureCount + 1] + "'", line_no);
    r.action = *action;
    return r;
}

void export_policy(std::ostream& os, const RoutingPolicy& policy) {
    if (policy.rules.empty()) throw InvariantError("refusing to export an empty routing policy");
    for (const auto& r : policy.rules) os << format_rule(r) << '\n';
}

void export_policy(const std::string& path, const RoutingPolicy& policy) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write policy file " + path);
    export_policy(os, policy);
    if (!os) throw DataError("error writing policy file " + path);
}

RoutingPolicy import_policy(std::istream& is) {
    RoutingPolicy p;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        p.rules.push_back(parse_rule(line, line_no));
    }
    check_volume(p);
    return p;
}

RoutingPolicy import_policy(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open policy file " + path);
    return import_policy(is);
}

// ---- tree persistence (shared model container) ---------------------------

void save_tree(std::ostream& os, const DecisionTree& tree) {
    textio::write_header(os, "cart");
    os << "schema packet-header-v1 " << kPacketFeatureCount << '\n';
    os << "nodes " << tree.nodes.size() << '\n';
    for (const auto& n : tree.nodes) {
        if (n.is_leaf()) os << "leaf " << to_string(n.label);
        else os << "split " << n.feature << ' ' << format_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' ' << to_string(n.label);
        for (double c : n.class_counts) os << ' ' << format_double(c);
        os << '\n';
    }
    os << "end\n";
}

DecisionTree load_tree(std::istream& is) {
    textio::LineReader r(is);
    if (textio::read_header(r) != "cart") r.fail("model kind is not cart");
    auto s = r.expect("schema", 3);
    if (s[1] != "packet-header-v1" || r.integer<std::size_t>(s[2]) != kPacketFeatureCount)
        r.fail("unsupported packet feature schema");
    const auto n_nodes = r.integer<std::size_t>(r.expect("nodes", 2)[1]);
    if (n_nodes == 0) r.fail("tree has no nodes");
    DecisionTree tree;
    tree.nodes.resize(n_nodes);
    std::vector<int> refs(n_nodes, 0);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        auto& n = tree.nodes[i];
        auto tok = r.next("tree node");
        std::size_t at = 0;
        if (tok[0] == "leaf" && tok.size() == 5) {
            at = 1;
        } else if (tok[0] == "split" && tok.size() == 9) {
            n.feature = r.integer<int>(tok[1]);
            n.threshold = r.real(tok[2]);
            n.left = r.integer<int>(tok[3]);
            n.right = r.integer<int>(tok[4]);
            if (n.feature < 0 || n.feature >= static_cast<int>(kPacketFeatureCount)) r.fail("split feature out of range");
            for (int c : {n.left, n.right}) {
                if (c <= static_cast<int>(i) || c >= static_cast<int>(n_nodes)) r.fail("bad child index");
                ++refs[static_cast<std::size_t>(c)];
            }
            at = 5;
        } else {
            r.fail("expected 'leaf' or 'split' node");
        }
        auto label = parse_cos(tok[at]);
        if (!label) r.fail("unknown class label '" + tok[at] + "'");
        n.label = *label;
        for (std::size_t c = 0; c < kClassCount; ++c) n.class_counts[c] = r.real(tok[at + 1 + c]);
    }
    for (std::size_t i = 1; i < n_nodes; ++i)
        if (refs[i] != 1) r.fail("tree node referenced " + std::to_string(refs[i]) + " times");
    r.expect("end", 1);
    return tree;
}

void save_tree(const std::string& path, const DecisionTree& tree) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write tree file " + path);
    save_tree(os, tree);
}

DecisionTree load_tree(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open tree file " + path);
    return load_tree(is);
}

} // namespace fphtc
