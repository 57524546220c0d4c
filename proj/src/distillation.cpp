#include "fphtc/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>

#include "fphtc/error.hpp"
#include "fphtc/kernels.hpp"
#include "fphtc/numfmt.hpp"
#include "fphtc/rng.hpp"

namespace fphtc {

Recalls per_class_recall(std::span<const CoSLabel> pred, std::span<const CoSLabel> truth) {
    if (pred.size() != truth.size())
        throw DataError("balanced accuracy: " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(truth.size()) + " labels");
    if (truth.empty()) throw DataError("balanced accuracy: empty input");
    std::array<std::size_t, kClassCount> total{}, hit{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto c = static_cast<std::size_t>(encode(truth[i]));
        ++total[c];
        if (pred[i] == truth[i]) ++hit[c];
    }
    Recalls r;
    for (std::size_t c = 0; c < kClassCount; ++c)
        if (total[c]) r[c] = static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    return r;
}

namespace {

double mean_recall(const Recalls& r) {
    double sum = 0.0;
    int present = 0;
    for (const auto& v : r)
        if (v) sum += *v, ++present;
    return sum / present;
}

} // namespace

double balanced_accuracy(std::span<const CoSLabel> pred, std::span<const CoSLabel> truth) {
    return mean_recall(per_class_recall(pred, truth));
}

std::pair<double, double> confidence_interval(std::span<const double> scores, double level) {
    if (scores.size() < 2) throw ConfigError("confidence interval needs at least 2 scores");
    if (!(level > 0 && level < 1)) throw ConfigError("confidence level must lie in (0,1)");
    const double n = static_cast<double>(scores.size());
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    const double se = std::sqrt(ss / (n - 1)) / std::sqrt(n);
    const boost::math::students_t dist(n - 1);
    const double t = boost::math::quantile(dist, 0.5 + level / 2);
    return {std::clamp(mean - t * se, 0.0, 1.0), std::clamp(mean + t * se, 0.0, 1.0)};
}

double median(std::vector<double> v) {
    if (v.empty()) throw DataError("median of an empty sequence");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::size_t ExperimentConfig::dpi_flows() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * lambda));
}

void ExperimentConfig::validate() const {
    if (n < 1) throw ConfigError("experiment: n must be >= 1");
    if (!(lambda > 0 && lambda <= 1)) throw ConfigError("experiment: lambda must lie in (0,1]");
    if (dpi_flows() < 1) throw ConfigError("experiment: round(n*lambda) must be >= 1");
    if (!(c_dpi >= 0) || !std::isfinite(c_dpi)) throw ConfigError("experiment: c_dpi must be >= 0");
    teacher_config.validate();
    student_config.validate();
}

GbdtModel train_teacher(std::span<const Flow> dpi_flows, const GbdtConfig& config, std::uint64_t seed) {
    if (dpi_flows.empty()) throw DataError("teacher: no DPI-labeled flows");
    const FeatureMatrix all = omp::extract_feature_matrix(dpi_flows);
    std::vector<int> cls;
    cls.reserve(dpi_flows.size());
    for (const auto& f : dpi_flows) {
        auto t = f.true_cos();
        if (!t) throw DataError("teacher: DPI flow without ground truth");
        cls.push_back(encode(*t));
    }
    const auto idx = balanced_indices(cls, derive_seed(seed, 0x7EAC));
    FeatureMatrix x(idx.size(), all.cols);
    std::vector<CoSLabel> y(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(all.row(idx[r]).begin(), all.cols, x.row(r).begin());
        y[r] = static_cast<CoSLabel>(cls[idx[r]]);
    }
    return train_gbdt(x, y, config, seed);
}

PolicyEvaluation evaluate_policy(const RoutingPolicy& policy, const PacketDataset& test,
                                 std::span<const PacketRecord> exclude) {
    std::unordered_set<PacketFeatures, PacketFeaturesHash> train_keys;
    train_keys.reserve(exclude.size());
    for (const auto& r : exclude) train_keys.insert(r.features);
    PolicyEvaluation ev;
    std::vector<PacketFeatures> feats;
    std::vector<CoSLabel> truth;
    for (const auto& r : test.records) {
        if (train_keys.count(r.features)) {
            ++ev.collisions;
            continue;
        }
        feats.push_back(r.features);
        truth.push_back(r.label);
    }
    if (feats.empty()) throw DataError("policy evaluation: no test packets left after excluding training tuples");
    const auto pred = omp::match_batch(policy, feats);
    ev.records = feats.size();
    ev.recalls = per_class_recall(pred, truth);
    ev.balanced_acc = mean_recall(ev.recalls);
    return ev;
}

namespace {

struct Draw {
    std::vector<Flow> flows; // the student corpus, DPI flows first
    std::size_t n_dpi = 0;
};

Draw draw_corpus(std::span<const Flow> corpus, const ExperimentConfig& cfg) {
    cfg.validate();
    if (corpus.size() < cfg.n)
        throw DataError("experiment: corpus has " + std::to_string(corpus.size()) + " flows, n = " +
                        std::to_string(cfg.n));
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(cfg.seed, 0xD4A3);
    std::shuffle(order.begin(), order.end(), rng);
    Draw d;
    d.n_dpi = cfg.dpi_flows();
    d.flows.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) d.flows.push_back(corpus[order[i]]);
    return d;
}

ArmResult train_and_score(std::span<const Flow> flows, LabelKind kind, const CartConfig& config, std::uint64_t seed,
                          const PacketDataset& test) {
    const PacketDataset train = build_packet_dataset(flows, kind);
    const DecisionTree tree = train_cart(train.records, config, seed);
    const RoutingPolicy policy = compile_rules(tree);
    const PolicyEvaluation ev = evaluate_policy(policy, test, train.records);
    ArmResult a;
    a.balanced_acc = ev.balanced_acc;
    a.recalls = ev.recalls;
    a.rule_count = policy.rules.size();
    a.train_records = train.records.size();
    a.test_records = ev.records;
    a.test_collisions = ev.collisions;
    return a;
}

ExperimentReport run(std::span<const Flow> corpus, const ExperimentConfig& cfg, std::span<const Flow> test,
                     bool fphtc_arm, bool baseline_arm) {
    Draw d = draw_corpus(corpus, cfg);
    if (test.empty()) throw DataError("experiment: empty test set");

    DpiOracle dpi(cfg.c_dpi);
    for (std::size_t i = 0; i < d.n_dpi; ++i) dpi.label(d.flows[i]);
    const std::span<const Flow> dpi_flows(d.flows.data(), d.n_dpi);

    ExperimentReport rep;
    rep.n = cfg.n;
    rep.lambda = cfg.lambda;
    rep.seed = cfg.seed;
    rep.flows_labeled = dpi.flows_labeled();
    rep.dpi_cost = dpi.cost();

    const GbdtModel teacher = train_teacher(dpi_flows, cfg.teacher_config, derive_seed(cfg.seed, 0x7EA));

    std::vector<CoSLabel> test_truth;
    test_truth.reserve(test.size());
    for (const auto& f : test) {
        auto t = f.true_cos();
        if (!t) throw DataError("experiment: test flow without ground truth");
        test_truth.push_back(*t);
    }
    const auto test_pred = predict_labels(teacher, omp::extract_feature_matrix(test));
    rep.teacher_recalls = per_class_recall(test_pred, test_truth);
    rep.teacher_balanced_acc = mean_recall(rep.teacher_recalls);

    const PacketDataset test_packets = build_packet_dataset(test, LabelKind::Truth);

    if (fphtc_arm) {
        const auto labels = predict_labels(teacher, omp::extract_feature_matrix(d.flows));
        std::size_t agree = 0;
        for (std::size_t i = 0; i < d.flows.size(); ++i) {
            Flow& f = d.flows[i];
            f.teacher_label = (cfg.keep_dpi_truth && i < d.n_dpi) ? f.true_cos() : labels[i];
            if (f.true_cos() == f.teacher_label) ++agree;
        }
        rep.teacher_agreement = static_cast<double>(agree) / static_cast<double>(d.flows.size());
        rep.fphtc = train_and_score(d.flows, LabelKind::TeacherPredicted, cfg.student_config,
                                    derive_seed(cfg.seed, 0xCA27), test_packets);
    }
    if (baseline_arm)
        rep.baseline = train_and_score(dpi_flows, LabelKind::Truth, cfg.student_config,
                                       derive_seed(cfg.seed, 0xCA27), test_packets);
    return rep;
}

} // namespace

FphtcArtifacts train_fphtc(std::span<const Flow> corpus, const ExperimentConfig& cfg) {
    Draw d = draw_corpus(corpus, cfg);
    FphtcArtifacts a;
    a.flows_labeled = d.n_dpi;
    a.teacher = train_teacher({d.flows.data(), d.n_dpi}, cfg.teacher_config, derive_seed(cfg.seed, 0x7EA));
    const auto labels = predict_labels(a.teacher, omp::extract_feature_matrix(d.flows));
    for (std::size_t i = 0; i < d.flows.size(); ++i)
        d.flows[i].teacher_label = (cfg.keep_dpi_truth && i < d.n_dpi) ? d.flows[i].true_cos() : labels[i];
    const PacketDataset train = build_packet_dataset(d.flows, LabelKind::TeacherPredicted);
    a.train_records = train.records.size();
    a.student = train_cart(train.records, cfg.student_config, derive_seed(cfg.seed, 0xCA27));
    a.policy = compile_rules(a.student);
    return a;
}

ExperimentReport run_fphtc(std::span<const Flow> corpus, const ExperimentConfig& cfg, std::span<const Flow> test) {
    return run(corpus, cfg, test, true, false);
}

ExperimentReport run_regular_baseline(std::span<const Flow> corpus, const ExperimentConfig& cfg,
                                      std::span<const Flow> test) {
    return run(corpus, cfg, test, false, true);
}

ExperimentReport run_experiment(std::span<const Flow> corpus, const ExperimentConfig& cfg, std::span<const Flow> test) {
    return run(corpus, cfg, test, true, true);
}

ExperimentReport run_synthetic_replica(const SyntheticPreset& preset, const AppMix& mix, const ExperimentConfig& cfg,
                                       std::size_t n_test) {
    cfg.validate();
    const auto corpus = generate_synthetic(preset, mix, cfg.n, derive_seed(cfg.seed, 0xC0));
    const auto test = generate_synthetic(preset, mix, n_test, derive_seed(cfg.seed, 0x7E5));
    return run_experiment(corpus, cfg, test);
}

// ---- reports -------------------------------------------------------------

void write_report_csv_header(std::ostream& os) {
    os << "n,lambda,seed,flows_labeled,dpi_cost,teacher_balanced_acc,fphtc_balanced_acc,baseline_balanced_acc,"
          "rule_count,baseline_rule_count,test_records,test_collisions\n";
}

void write_report_csv_row(std::ostream& os, const ExperimentReport& r) {
    auto acc = [](const std::optional<ArmResult>& a) { return a ? format_double(a->balanced_acc) : std::string(); };
    os << r.n << ',' << format_double(r.lambda) << ',' << r.seed << ',' << r.flows_labeled << ','
       << format_double(r.dpi_cost) << ',' << format_double(r.teacher_balanced_acc) << ',' << acc(r.fphtc) << ','
       << acc(r.baseline) << ',' << (r.fphtc ? std::to_string(r.fphtc->rule_count) : "") << ','
       << (r.baseline ? std::to_string(r.baseline->rule_count) : "") << ','
       << (r.fphtc ? r.fphtc->test_records : r.baseline ? r.baseline->test_records : 0) << ','
       << (r.fphtc ? r.fphtc->test_collisions : r.baseline ? r.baseline->test_collisions : 0) << '\n';
}

nlohmann::json summarize_reports(std::span<const ExperimentReport> reports, double level) {
    std::map<std::pair<std::size_t, double>, std::vector<const ExperimentReport*>> groups;
    for (const auto& r : reports) groups[{r.n, r.lambda}].push_back(&r);

    auto stats = [level](const std::vector<double>& v) {
        nlohmann::json s;
        if (v.empty()) return s;
        s["median"] = median(v);
        s["mean"] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        if (v.size() >= 2) {
            auto [lo, hi] = confidence_interval(v, level);
            s["ci"] = {lo, hi};
        }
        return s;
    };

    nlohmann::json points = nlohmann::json::array();
    for (const auto& [key, rs] : groups) {
        std::vector<double> teacher, fphtc, baseline, rules;
        for (const auto* r : rs) {
            teacher.push_back(r->teacher_balanced_acc);
            if (r->fphtc) fphtc.push_back(r->fphtc->balanced_acc), rules.push_back(double(r->fphtc->rule_count));
            if (r->baseline) baseline.push_back(r->baseline->balanced_acc);
        }
        nlohmann::json p;
        p["n"] = key.first;
        p["lambda"] = key.second;
        p["replicas"] = rs.size();
        p["flows_labeled"] = rs.front()->flows_labeled;
        p["dpi_cost"] = rs.front()->dpi_cost;
        p["teacher_balanced_acc"] = stats(teacher);
        p["fphtc_balanced_acc"] = stats(fphtc);
        p["baseline_balanced_acc"] = stats(baseline);
        p["rule_count"] = stats(rules).value("median", 0.0);
        points.push_back(std::move(p));
    }
    return {{"confidence_level", level}, {"points", std::move(points)}};
}

} // namespace fphtc
