#include "fphtc/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>

#include "fphtc/error.hpp"
#include "fphtc/kernels.hpp"
#include "fphtc/numfmt.hpp"
#include "text_io.hpp"

namespace fphtc {

GbdtConfig GbdtConfig::leafwise() {
    GbdtConfig c;
    c.max_depth = 0;
    c.max_leaves = 31;
    return c;
}

void GbdtConfig::validate() const {
    if (n_rounds < 1) throw ConfigError("gbdt: n_rounds must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("gbdt: learning_rate must lie in (0,1]");
    if (max_depth < 0) throw ConfigError("gbdt: max_depth must be >= 1 (or 0 for unlimited)");
    if (max_depth == 0 && max_leaves == 0) throw ConfigError("gbdt: need a depth cap or a leaf cap");
    if (!(min_child_weight >= 0.0)) throw ConfigError("gbdt: min_child_weight must be >= 0");
    if (!(l2_reg >= 0.0)) throw ConfigError("gbdt: l2_reg must be >= 0");
    if (n_classes != static_cast<int>(kClassCount)) throw ConfigError("gbdt: n_classes must be 3");
    if (max_leaves < 0 || max_leaves == 1) throw ConfigError("gbdt: max_leaves must be >= 2 (or 0 for unlimited)");
}

double RegressionTree::predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
}

std::size_t RegressionTree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
}

GradHess softmax_gradient_hessian(std::span<const double> scores, int true_class) {
    const std::size_t k = scores.size();
    GradHess out{std::vector<double>(k), std::vector<double>(k)};
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(scores[i] - mx);
    for (std::size_t i = 0; i < k; ++i) {
        const double p = std::exp(scores[i] - mx) / z;
        out.g[i] = p - (static_cast<int>(i) == true_class ? 1.0 : 0.0);
        out.h[i] = p * (1.0 - p);
    }
    return out;
}

double softmax_log_loss(std::span<const double> scores, int true_class) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - mx);
    return mx + std::log(z) - scores[static_cast<std::size_t>(true_class)];
}

CoSLabel argmax_label(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return decode_cos(static_cast<int>(best));
}

namespace detail {

SplitResult scan_feature(const NodeView& node, std::size_t feature, const GbdtConfig& cfg) {
    SplitResult best{static_cast<int>(feature), 0.0, 0.0};
    const auto& order = node.sorted[feature];
    if (order.size() < 2) return best;
    const FeatureMatrix& x = *node.x;
    const double lambda = cfg.l2_reg;
    const double parent = node.sum_g * node.sum_g / (node.sum_h + lambda);
    double gl = 0.0, hl = 0.0;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::uint32_t r = order[i];
        gl += node.g[r];
        hl += node.h[r];
        const double v = x.at(r, feature);
        const double vn = x.at(order[i + 1], feature);
        if (!(vn > v)) continue;
        const double gr = node.sum_g - gl;
        const double hr = node.sum_h - hl;
        if (hl < cfg.min_child_weight || hr < cfg.min_child_weight) continue;
        const double gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
        if (gain > best.gain) {
            double mid = 0.5 * (v + vn);
            if (!(mid < vn)) mid = v;
            best.threshold = mid;
            best.gain = gain;
        }
    }
    return best;
}

std::optional<SplitResult> reduce_candidates(std::span<const SplitResult> per_feature) {
    std::optional<SplitResult> best;
    for (const auto& c : per_feature)
        if (c.gain > 0.0 && (!best || c.gain > best->gain)) best = c;
    return best;
}

} // namespace detail

namespace {

std::vector<std::uint32_t> sorted_by_feature(const FeatureMatrix& x, std::span<const std::uint32_t> rows,
                                             std::size_t feature) {
    std::vector<std::uint32_t> out(rows.begin(), rows.end());
    std::sort(out.begin(), out.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double va = x.at(a, feature), vb = x.at(b, feature);
        return va < vb || (va == vb && a < b);
    });
    return out;
}

/// Best-first regression-tree grower over presorted columns. With no leaf cap
/// the result equals depth-wise growth to max_depth.
class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, const std::vector<std::vector<std::uint32_t>>& presorted,
                const GbdtConfig& cfg)
        : x_(x), presorted_(presorted), cfg_(cfg), goes_left_(x.rows, 0), scratch_(x.rows) {}

    /// Builds one tree; writes each row's (scaled) leaf output to `row_out`.
    RegressionTree build(std::span<const double> g, std::span<const double> h, std::span<double> row_out) {
        order_ = presorted_;
        g_ = g;
        h_ = h;
        tree_ = RegressionTree{};
        ranges_.clear();

        struct Pending {
            double gain;
            int node;
            SplitResult split;
        };
        auto cmp = [](const Pending& a, const Pending& b) {
            return a.gain < b.gain || (a.gain == b.gain && a.node > b.node);
        };
        std::priority_queue<Pending, std::vector<Pending>, decltype(cmp)> heap(cmp);

        auto add_node = [&](std::size_t b, std::size_t e, int depth) {
            const int id = make_leaf(b, e, depth);
            if (auto s = evaluate(id)) heap.push({s->gain, id, *s});
        };
        add_node(0, x_.rows, 0);

        std::size_t leaves = 1;
        while (!heap.empty() && (cfg_.max_leaves == 0 || leaves < static_cast<std::size_t>(cfg_.max_leaves))) {
            const Pending p = heap.top();
            heap.pop();
            const auto [b, e, depth] = ranges_[static_cast<std::size_t>(p.node)];
            const std::size_t mid = partition(b, e, p.split);
            auto& n = tree_.nodes[static_cast<std::size_t>(p.node)];
            n.feature = p.split.feature;
            n.threshold = p.split.threshold;
            n.value = 0.0;
            n.left = static_cast<int>(tree_.nodes.size());
            add_node(b, mid, depth + 1);
            tree_.nodes[static_cast<std::size_t>(p.node)].right = static_cast<int>(tree_.nodes.size());
            add_node(mid, e, depth + 1);
            ++leaves;
        }

        for (std::size_t id = 0; id < tree_.nodes.size(); ++id) {
            if (!tree_.nodes[id].is_leaf()) continue;
            const auto [b, e, depth] = ranges_[id];
            for (std::size_t i = b; i < e; ++i) row_out[order_[0][i]] = tree_.nodes[id].value;
        }
        return std::move(tree_);
    }

private:
    struct Range {
        std::size_t b, e;
        int depth;
    };

    int make_leaf(std::size_t b, std::size_t e, int depth) {
        double sg = 0.0, sh = 0.0;
        for (std::size_t i = b; i < e; ++i) {
            sg += g_[order_[0][i]];
            sh += h_[order_[0][i]];
        }
        RegressionTree::Node n;
        n.value = cfg_.learning_rate * (-sg / (sh + cfg_.l2_reg));
        tree_.nodes.push_back(n);
        ranges_.push_back({b, e, depth});
        sums_.resize(tree_.nodes.size());
        sums_.back() = {sg, sh};
        return static_cast<int>(tree_.nodes.size() - 1);
    }

    std::optional<SplitResult> evaluate(int id) {
        const auto [b, e, depth] = ranges_[static_cast<std::size_t>(id)];
        if (cfg_.max_depth > 0 && depth >= cfg_.max_depth) return std::nullopt;
        if (e - b < 2) return std::nullopt;
        detail::NodeView view;
        view.x = &x_;
        view.g = g_;
        view.h = h_;
        view.sum_g = sums_[static_cast<std::size_t>(id)].first;
        view.sum_h = sums_[static_cast<std::size_t>(id)].second;
        view.sorted.reserve(order_.size());
        for (const auto& col : order_) view.sorted.emplace_back(col.data() + b, e - b);
        return omp::node_best_split(view, cfg_);
    }

    std::size_t partition(std::size_t b, std::size_t e, const SplitResult& s) {
        const auto f = static_cast<std::size_t>(s.feature);
        for (std::size_t i = b; i < e; ++i) {
            const std::uint32_t r = order_[0][i];
            goes_left_[r] = x_.at(r, f) <= s.threshold ? 1 : 0;
        }
        std::size_t mid = b;
        for (auto& col : order_) {
            std::size_t l = b, rcount = 0;
            for (std::size_t i = b; i < e; ++i) {
                const std::uint32_t r = col[i];
                if (goes_left_[r]) col[l++] = r;
                else scratch_[rcount++] = r;
            }
            std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(rcount), col.begin() + static_cast<std::ptrdiff_t>(l));
            mid = l;
        }
        return mid;
    }

    const FeatureMatrix& x_;
    const std::vector<std::vector<std::uint32_t>>& presorted_;
    const GbdtConfig& cfg_;
    std::vector<std::vector<std::uint32_t>> order_;
    std::vector<std::uint8_t> goes_left_;
    std::vector<std::uint32_t> scratch_;
    std::span<const double> g_, h_;
    RegressionTree tree_;
    std::vector<Range> ranges_;
    std::vector<std::pair<double, double>> sums_;
};

} // namespace

std::optional<SplitResult> best_split(std::span<const std::size_t> sample_indices, const FeatureMatrix& x,
                                      std::span<const double> g, std::span<const double> h, const GbdtConfig& config) {
    if (sample_indices.empty()) return std::nullopt;
    std::vector<std::uint32_t> rows;
    rows.reserve(sample_indices.size());
    double sg = 0.0, sh = 0.0;
    for (std::size_t i : sample_indices) {
        rows.push_back(static_cast<std::uint32_t>(i));
        sg += g[i];
        sh += h[i];
    }
    std::vector<std::vector<std::uint32_t>> cols(x.cols);
    detail::NodeView view;
    view.x = &x;
    view.g = g;
    view.h = h;
    view.sum_g = sg;
    view.sum_h = sh;
    for (std::size_t f = 0; f < x.cols; ++f) {
        cols[f] = sorted_by_feature(x, rows, f);
        view.sorted.emplace_back(cols[f]);
    }
    return omp::node_best_split(view, config);
}

GbdtModel train_gbdt(const FeatureMatrix& x, std::span<const CoSLabel> y, const GbdtConfig& config,
                     std::uint64_t /*seed*/, TrainTrace* trace) {
    config.validate();
    const std::size_t n = x.rows;
    const auto k = static_cast<std::size_t>(config.n_classes);
    if (y.size() != n) throw DataError("train_gbdt: feature rows and labels differ in count");
    if (n < k) throw DataError("train_gbdt: need at least n_classes samples");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw DataError("train_gbdt: too many samples");
    std::array<std::size_t, kClassCount> counts{};
    for (CoSLabel c : y) ++counts[static_cast<std::size_t>(encode(c))];
    for (std::size_t c = 0; c < kClassCount; ++c)
        if (counts[c] == 0)
            throw DataError("train_gbdt: class " + std::string(to_string(static_cast<CoSLabel>(c))) +
                            " has no training samples");
    for (double v : x.values)
        if (!std::isfinite(v)) throw DataError("train_gbdt: non-finite feature value");

    GbdtModel model;
    model.config = config;
    model.n_features = x.cols;
    model.base_score = 0.0;
    model.trees.reserve(static_cast<std::size_t>(config.n_rounds) * k);

    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    std::vector<std::vector<std::uint32_t>> presorted(x.cols);
    for (std::size_t f = 0; f < x.cols; ++f) presorted[f] = sorted_by_feature(x, all, f);

    std::vector<double> scores(n * k, model.base_score);
    std::vector<std::vector<double>> g(k, std::vector<double>(n)), h(k, std::vector<double>(n));
    std::vector<double> leaf_out(n);
    TreeBuilder builder(x, presorted, config);

    auto mean_loss = [&] {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            total += softmax_log_loss(std::span<const double>(scores.data() + i * k, k), encode(y[i]));
        return total / static_cast<double>(n);
    };
    if (trace) trace->log_loss = {mean_loss()};

    for (int round = 0; round < config.n_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto gh = softmax_gradient_hessian(std::span<const double>(scores.data() + i * k, k), encode(y[i]));
            for (std::size_t c = 0; c < k; ++c) {
                g[c][i] = gh.g[c];
                h[c][i] = gh.h[c];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            model.trees.push_back(builder.build(g[c], h[c], leaf_out));
            for (std::size_t i = 0; i < n; ++i) scores[i * k + c] += leaf_out[i];
        }
        if (trace) trace->log_loss.push_back(mean_loss());
    }
    return model;
}

std::vector<double> predict_scores(const GbdtModel& m, std::span<const double> x) {
    if (x.size() != m.n_features)
        throw DataError("predict_scores: feature vector has dimension " + std::to_string(x.size()) + ", model expects " +
                        std::to_string(m.n_features));
    const auto k = static_cast<std::size_t>(m.config.n_classes);
    std::vector<double> s(k, m.base_score);
    for (std::size_t r = 0; r < m.rounds(); ++r)
        for (std::size_t c = 0; c < k; ++c) s[c] += m.tree(r, c).predict(x);
    return s;
}

CoSLabel predict_label(const GbdtModel& m, std::span<const double> x) { return argmax_label(predict_scores(m, x)); }

std::vector<CoSLabel> predict_labels(const GbdtModel& m, const FeatureMatrix& x) {
    const auto scores = omp::predict_scores_batch(m, x);
    const auto k = static_cast<std::size_t>(m.config.n_classes);
    std::vector<CoSLabel> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) out[i] = argmax_label(std::span<const double>(scores.data() + i * k, k));
    return out;
}

// ---- persistence ---------------------------------------------------------

void save_model(std::ostream& os, const GbdtModel& m) {
    textio::write_header(os, "gbdt");
    const auto& c = m.config;
    os << "schema " << m.schema_version << ' ' << m.n_features << '\n';
    os << "config rounds=" << c.n_rounds << " learning_rate=" << format_double(c.learning_rate)
       << " max_depth=" << c.max_depth << " min_child_weight=" << format_double(c.min_child_weight)
       << " l2_reg=" << format_double(c.l2_reg) << " classes=" << c.n_classes << " max_leaves=" << c.max_leaves
       << '\n';
    os << "base_score " << format_double(m.base_score) << '\n';
    os << "trees " << m.trees.size() << '\n';
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
        const auto& tree = m.trees[t];
        os << "tree " << t << ' ' << tree.nodes.size() << '\n';
        for (const auto& n : tree.nodes) {
            if (n.is_leaf()) os << "leaf " << format_double(n.value) << '\n';
            else
                os << "split " << n.feature << ' ' << format_double(n.threshold) << ' ' << n.left << ' ' << n.right
                   << '\n';
        }
    }
    os << "end\n";
}

namespace {

void check_tree_structure(const RegressionTree& t, std::size_t n_features, textio::LineReader& r) {
    if (t.nodes.empty()) r.fail("tree has no nodes");
    std::vector<int> refs(t.nodes.size(), 0);
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        if (n.is_leaf()) {
            if (!std::isfinite(n.value)) r.fail("non-finite leaf value");
            continue;
        }
        if (static_cast<std::size_t>(n.feature) >= n_features) r.fail("split feature out of range");
        for (int c : {n.left, n.right}) {
            if (c <= static_cast<int>(i) || c >= static_cast<int>(t.nodes.size())) r.fail("bad child index");
            ++refs[static_cast<std::size_t>(c)];
        }
    }
    for (std::size_t i = 1; i < refs.size(); ++i)
        if (refs[i] != 1) r.fail("tree node referenced " + std::to_string(refs[i]) + " times");
}

} // namespace

GbdtModel load_model(std::istream& is) {
    textio::LineReader r(is);
    if (textio::read_header(r) != "gbdt") r.fail("model kind is not gbdt");
    GbdtModel m;
    auto s = r.expect("schema", 3);
    m.schema_version = s[1];
    m.n_features = r.integer<std::size_t>(s[2]);
    auto c = r.expect("config", 8);
    m.config.n_rounds = r.integer<int>(r.keyed(c[1], "rounds"));
    m.config.learning_rate = r.real(r.keyed(c[2], "learning_rate"));
    m.config.max_depth = r.integer<int>(r.keyed(c[3], "max_depth"));
    m.config.min_child_weight = r.real(r.keyed(c[4], "min_child_weight"));
    m.config.l2_reg = r.real(r.keyed(c[5], "l2_reg"));
    m.config.n_classes = r.integer<int>(r.keyed(c[6], "classes"));
    m.config.max_leaves = r.integer<int>(r.keyed(c[7], "max_leaves"));
    try {
        m.config.validate();
    } catch (const ConfigError& e) {
        r.fail(e.what());
    }
    m.base_score = r.real(r.expect("base_score", 2)[1]);
    const auto n_trees = r.integer<std::size_t>(r.expect("trees", 2)[1]);
    if (n_trees != static_cast<std::size_t>(m.config.n_rounds) * static_cast<std::size_t>(m.config.n_classes))
        r.fail("tree count does not equal rounds x classes");
    m.trees.resize(n_trees);
    for (std::size_t t = 0; t < n_trees; ++t) {
        auto head = r.expect("tree", 3);
        if (r.integer<std::size_t>(head[1]) != t) r.fail("tree index out of sequence");
        const auto n_nodes = r.integer<std::size_t>(head[2]);
        auto& tree = m.trees[t];
        tree.nodes.resize(n_nodes);
        for (auto& node : tree.nodes) {
            auto tok = r.next("tree node");
            if (tok[0] == "leaf" && tok.size() == 2) {
                node.value = r.real(tok[1]);
            } else if (tok[0] == "split" && tok.size() == 5) {
                node.feature = r.integer<int>(tok[1]);
                node.threshold = r.real(tok[2]);
                node.left = r.integer<int>(tok[3]);
                node.right = r.integer<int>(tok[4]);
                if (node.feature < 0) r.fail("negative split feature");
            } else {
                r.fail("expected 'leaf' or 'split' node");
            }
        }
        check_tree_structure(tree, m.n_features, r);
    }
    r.expect("end", 1);
    return m;
}

void save_model(const std::string& path, const GbdtModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write model file " + path);
    save_model(os, m);
    if (!os) throw DataError("error writing model file " + path);
}

GbdtModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open model file " + path);
    return load_model(is);
}

} // namespace fphtc
