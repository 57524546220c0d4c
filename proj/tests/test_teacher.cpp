#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "fphtc/error.hpp"
#include "fphtc/ingestion.hpp"
#include "fphtc/teacher.hpp"

using namespace fphtc;

namespace {

struct Oracle {
    std::optional<SplitResult> best;
};

/// Enumerates every (feature, midpoint) pair and sums children directly.
Oracle brute_force_split(std::span<const std::size_t> idx, const FeatureMatrix& x, std::span<const double> g,
                         std::span<const double> h, const GbdtConfig& cfg) {
    double G = 0, H = 0;
    for (auto i : idx) G += g[i], H += h[i];
    Oracle o;
    for (std::size_t f = 0; f < x.cols; ++f) {
        std::vector<double> vals;
        for (auto i : idx) vals.push_back(x.at(i, f));
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
            const double t = 0.5 * (vals[k] + vals[k + 1]);
            double gl = 0, hl = 0;
            for (auto i : idx)
                if (x.at(i, f) <= t) gl += g[i], hl += h[i];
            const double gr = G - gl, hr = H - hl;
            if (hl < cfg.min_child_weight || hr < cfg.min_child_weight) continue;
            const double gain = 0.5 * (gl * gl / (hl + cfg.l2_reg) + gr * gr / (hr + cfg.l2_reg) - G * G / (H + cfg.l2_reg));
            if (gain > 0 && (!o.best || gain > o.best->gain)) o.best = SplitResult{static_cast<int>(f), t, gain};
        }
    }
    return o;
}

double gain_of(std::span<const std::size_t> idx, const FeatureMatrix& x, std::span<const double> g,
               std::span<const double> h, const GbdtConfig& cfg, int f, double t) {
    double G = 0, H = 0, gl = 0, hl = 0;
    for (auto i : idx) {
        G += g[i], H += h[i];
        if (x.at(i, static_cast<std::size_t>(f)) <= t) gl += g[i], hl += h[i];
    }
    const double gr = G - gl, hr = H - hl;
    return 0.5 * (gl * gl / (hl + cfg.l2_reg) + gr * gr / (hr + cfg.l2_reg) - G * G / (H + cfg.l2_reg));
}

struct Corpus {
    FeatureMatrix x;
    std::vector<CoSLabel> y;
};

Corpus featurize(const std::vector<Flow>& flows) {
    Corpus c{FeatureMatrix(flows.size(), kFeatureDim), {}};
    for (std::size_t i = 0; i < flows.size(); ++i) {
        extract_features_into(flows[i], c.x.row(i));
        c.y.push_back(cos_of_app(*flows[i].true_app));
    }
    return c;
}

double balanced_training_accuracy(const GbdtModel& m, const Corpus& c) {
    const auto pred = predict_labels(m, c.x);
    std::array<double, 3> hit{}, tot{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        tot[encode(c.y[i])] += 1;
        hit[encode(c.y[i])] += pred[i] == c.y[i];
    }
    double s = 0;
    for (int k = 0; k < 3; ++k) s += hit[k] / tot[k];
    return s / 3;
}

} // namespace

TEST_SUITE("teacher") {

TEST_CASE("config validation and presets") {
    CHECK_NOTHROW(GbdtConfig::standard().validate());
    CHECK(GbdtConfig::standard().n_rounds == 100);
    CHECK(GbdtConfig::standard().learning_rate == 0.3);
    CHECK(GbdtConfig::standard().max_depth == 6);
    const auto lw = GbdtConfig::leafwise();
    CHECK(lw.max_leaves == 31);
    CHECK(lw.max_depth == 0);
    CHECK_NOTHROW(lw.validate());
    GbdtConfig c;
    c.n_rounds = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.learning_rate = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.l2_reg = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n_classes = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("softmax gradient examples") {
    auto gh = softmax_gradient_hessian(std::vector<double>{0, 0, 0}, 0);
    CHECK(gh.g[0] == doctest::Approx(-2.0 / 3));
    CHECK(gh.g[1] == doctest::Approx(1.0 / 3));
    CHECK(gh.g[2] == doctest::Approx(1.0 / 3));
    for (double h : gh.h) CHECK(h == doctest::Approx(2.0 / 9));

    gh = softmax_gradient_hessian(std::vector<double>{5, 0, 0}, 0);
    CHECK(gh.g[0] == doctest::Approx(-0.0132).epsilon(0.01));
    CHECK(gh.g[1] == doctest::Approx(0.00662).epsilon(0.01));
    CHECK(gh.g[2] == doctest::Approx(0.00662).epsilon(0.01));

    gh = softmax_gradient_hessian(std::vector<double>{1000, -1000, 0}, 1);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::isfinite(gh.g[k]));
        CHECK(std::isfinite(gh.h[k]));
    }
    CHECK(std::isfinite(softmax_log_loss(std::vector<double>{1000, -1000, 0}, 1)));
}

TEST_CASE("gradient and hessian against central differences") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-4, 4);
    const double eps = 1e-4;
    for (int draw = 0; draw < 100; ++draw) {
        std::vector<double> s{u(rng), u(rng), u(rng)};
        const int cls = static_cast<int>(rng() % 3);
        const auto gh = softmax_gradient_hessian(s, cls);
        CHECK(std::abs(std::accumulate(gh.g.begin(), gh.g.end(), 0.0)) < 1e-12);
        for (std::size_t k = 0; k < 3; ++k) {
            auto up = s, dn = s;
            up[k] += eps;
            dn[k] -= eps;
            const double fd_g = (softmax_log_loss(up, cls) - softmax_log_loss(dn, cls)) / (2 * eps);
            const double fd_h = (softmax_gradient_hessian(up, cls).g[k] - softmax_gradient_hessian(dn, cls).g[k]) / (2 * eps);
            CHECK(std::abs(fd_g - gh.g[k]) <= 1e-4 * std::max(std::abs(gh.g[k]), 1e-3));
            CHECK(std::abs(fd_h - gh.h[k]) <= 1e-4 * std::max(std::abs(gh.h[k]), 1e-3));
        }
    }
}

TEST_CASE("best split examples") {
    FeatureMatrix x(4, 1);
    for (std::size_t i = 0; i < 4; ++i) x.at(i, 0) = static_cast<double>(i + 1);
    const std::vector<double> g{-1, -1, 1, 1}, h{1, 1, 1, 1};
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    GbdtConfig cfg;
    cfg.l2_reg = 0;
    auto s = best_split(idx, x, g, h, cfg);
    REQUIRE(s);
    CHECK(s->feature == 0);
    CHECK(s->threshold == 2.5);
    CHECK(s->gain == doctest::Approx(2.0));

    FeatureMatrix same(4, 3);
    for (auto& v : same.values) v = 7;
    CHECK_FALSE(best_split(idx, same, g, h, cfg));

    cfg.min_child_weight = 3;
    CHECK_FALSE(best_split(idx, x, g, h, cfg));
}

TEST_CASE("best split matches brute-force enumeration") {
    std::mt19937_64 rng(77);
    for (int inst = 0; inst < 60; ++inst) {
        const std::size_t n = 2 + rng() % 199, d = 1 + rng() % 10;
        FeatureMatrix x(n, d);
        const int levels = 2 + static_cast<int>(rng() % 20);
        for (auto& v : x.values) v = static_cast<double>(rng() % static_cast<unsigned>(levels)) * 0.5;
        std::vector<double> g(n), h(n);
        std::normal_distribution<double> nd;
        std::uniform_real_distribution<double> uh(0.01, 0.25);
        for (std::size_t i = 0; i < n; ++i) g[i] = nd(rng), h[i] = uh(rng);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
            if (rng() % 4) idx.push_back(i);
        if (idx.empty()) idx.push_back(0);
        GbdtConfig cfg;
        cfg.l2_reg = inst % 3 == 0 ? 0.0 : 1.0;
        cfg.min_child_weight = inst % 2 ? 0.0 : 1.0;
        const auto got = best_split(idx, x, g, h, cfg);
        const auto want = brute_force_split(idx, x, g, h, cfg).best;
        REQUIRE(got.has_value() == want.has_value());
        if (!got) continue;
        CHECK(got->gain == doctest::Approx(want->gain).epsilon(1e-9));
        CHECK(gain_of(idx, x, g, h, cfg, got->feature, got->threshold) == doctest::Approx(want->gain).epsilon(1e-9));
    }
}

TEST_CASE("training on the separable preset") {
    const auto c = featurize(generate_synthetic(preset("separable"), uniform_mix(kAllApps), 1000, 3));
    TrainTrace trace;
    const auto m = train_gbdt(c.x, c.y, GbdtConfig::standard(), 1, &trace);
    CHECK(m.trees.size() == 300);
    CHECK(m.rounds() == 100);
    CHECK(trace.log_loss.size() == 101);
    for (std::size_t t = 1; t < trace.log_loss.size(); ++t) CHECK(trace.log_loss[t] <= trace.log_loss[t - 1] + 1e-9);
    CHECK(balanced_training_accuracy(m, c) >= 0.99);
    for (const auto& tree : m.trees)
        for (const auto& node : tree.nodes) {
            if (node.is_leaf()) CHECK(std::isfinite(node.value));
            else {
                CHECK(node.left > 0);
                CHECK(node.right > 0);
            }
        }

    for (std::size_t i = 0; i < 50; ++i) {
        const auto row = c.x.row(i);
        CHECK(predict_label(m, row) == predict_labels(m, c.x)[i]);
    }

    std::ostringstream a, b;
    save_model(a, m);
    save_model(b, train_gbdt(c.x, c.y, GbdtConfig::standard(), 1));
    CHECK(a.str() == b.str());
}

TEST_CASE("leafwise preset respects the leaf cap") {
    const auto c = featurize(generate_synthetic(preset("overlapping"), uniform_mix(kAllApps), 600, 4));
    auto cfg = GbdtConfig::leafwise();
    cfg.n_rounds = 5;
    const auto m = train_gbdt(c.x, c.y, cfg, 0);
    for (const auto& t : m.trees) CHECK(t.leaf_count() <= 31);
}

TEST_CASE("training errors") {
    const auto c = featurize(generate_synthetic(preset("separable"), {{AppType::VOIP, 1}, {AppType::WEB, 1}}, 50, 3));
    CHECK_THROWS_AS(train_gbdt(c.x, c.y, GbdtConfig::standard(), 0), DataError);
    auto d = featurize(generate_synthetic(preset("separable"), uniform_mix(kAllApps), 50, 3));
    d.x.at(3, 5) = std::nan("");
    CHECK_THROWS_AS(train_gbdt(d.x, d.y, GbdtConfig::standard(), 0), DataError);
    d.x.at(3, 5) = 0;
    d.y.pop_back();
    CHECK_THROWS_AS(train_gbdt(d.x, d.y, GbdtConfig::standard(), 0), DataError);
}

TEST_CASE("prediction rules") {
    GbdtModel empty;
    empty.config.n_rounds = 1;
    empty.base_score = 0.25;
    const std::vector<double> x(kFeatureDim, 1.0);
    CHECK(predict_scores(empty, x) == std::vector<double>{0.25, 0.25, 0.25});
    CHECK(predict_label(empty, x) == CoSLabel::DelaySensitive);
    CHECK_THROWS_AS(predict_scores(empty, std::vector<double>(3, 0.0)), DataError);

    CHECK(argmax_label(std::vector<double>{0.1, 0.9, 0.2}) == CoSLabel::DelayModerate);
    CHECK(argmax_label(std::vector<double>{0.5, 0.5, 0.1}) == CoSLabel::DelaySensitive);
    CHECK(argmax_label(std::vector<double>{0.1 + 7, 0.9 + 7, 0.2 + 7}) == CoSLabel::DelayModerate);

    // one stump per class on feature 2
    GbdtModel m;
    m.config.n_rounds = 1;
    for (int k = 0; k < 3; ++k) {
        RegressionTree t;
        t.nodes = {{2, 10.0, 1, 2, 0.0}, {-1, 0, -1, -1, k == 0 ? 1.0 : 0.0}, {-1, 0, -1, -1, k == 2 ? 1.0 : 0.0}};
        m.trees.push_back(t);
    }
    std::vector<double> lo(kFeatureDim, 0.0), hi(kFeatureDim, 0.0);
    lo[2] = 10.0;
    hi[2] = 10.5;
    CHECK(predict_scores(m, lo) == std::vector<double>{1.0, 0.0, 0.0});
    CHECK(predict_label(m, lo) == CoSLabel::DelaySensitive);
    CHECK(predict_label(m, hi) == CoSLabel::DelayTolerant);
}

TEST_CASE("model persistence") {
    const auto c = featurize(generate_synthetic(preset("overlapping"), uniform_mix(kAllApps), 400, 12));
    GbdtConfig cfg;
    cfg.n_rounds = 20;
    const auto m = train_gbdt(c.x, c.y, cfg, 0);
    std::stringstream ss;
    save_model(ss, m);
    const auto back = load_model(ss);
    CHECK(back == m);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(kFeatureDim);
        const auto base = c.x.row(rng() % c.x.rows);
        for (std::size_t j = 0; j < kFeatureDim; ++j)
            x[j] = base[j] * std::uniform_real_distribution<double>(0.5, 1.5)(rng);
        CHECK(predict_scores(back, x) == predict_scores(m, x));
    }

    std::stringstream bad("not a model\n");
    CHECK_THROWS_AS(load_model(bad), FormatError);
    std::string text;
    {
        std::ostringstream os;
        save_model(os, m);
        text = os.str();
    }
    std::stringstream cut(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_model(cut), FormatError);
}

}
