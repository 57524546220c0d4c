#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fphtc/ingestion.hpp"
#include "fphtc/policy.hpp"
#include "fphtc/teacher.hpp"

namespace fphtc {

using Recalls = std::array<std::optional<double>, kClassCount>;

/// Recall of every class present in `truth`; absent classes stay empty.
/// Throws DataError on a length mismatch or empty input.
Recalls per_class_recall(std::span<const CoSLabel> pred, std::span<const CoSLabel> truth);

/// Mean recall over the classes present in `truth`.
double balanced_accuracy(std::span<const CoSLabel> pred, std::span<const CoSLabel> truth);

/// Student-t interval around the mean with n-1 degrees of freedom, clamped
/// to [0,1]. Throws ConfigError for fewer than 2 scores or level outside (0,1).
std::pair<double, double> confidence_interval(std::span<const double> scores, double level);

double median(std::vector<double> v);

struct ExperimentConfig {
    std::size_t n = 5000;
    double lambda = 0.2;
    GbdtConfig teacher_config;
    CartConfig student_config;
    double c_dpi = 1.0;
    std::uint64_t seed = 0;
    bool keep_dpi_truth = false; // DPI-labeled flows keep their true label in the student corpus

    std::size_t dpi_flows() const;
    /// Throws ConfigError.
    void validate() const;
};

struct ArmResult {
    double balanced_acc = 0.0;
    Recalls recalls;
    std::size_t rule_count = 0;
    std::size_t train_records = 0;
    std::size_t test_records = 0;
    std::size_t test_collisions = 0; // test 4-tuples dropped because they also occur in training
};

struct ExperimentReport {
    std::size_t n = 0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::size_t flows_labeled = 0;
    double dpi_cost = 0.0;
    double teacher_balanced_acc = 0.0;
    Recalls teacher_recalls;
    double teacher_agreement = 0.0; // fraction of student-corpus flows the teacher labels correctly
    std::optional<ArmResult> fphtc;
    std::optional<ArmResult> baseline;

    std::size_t rule_count() const { return fphtc ? fphtc->rule_count : 0; }
};

/// Teacher -> teacher-labeled student corpus -> CART routing policy.
/// The first n flows of a seeded permutation of `corpus` form the student
/// corpus; the first dpi_flows() of those are DPI-labeled.
ExperimentReport run_fphtc(std::span<const Flow> corpus, const ExperimentConfig& cfg, std::span<const Flow> test);

/// CART trained directly on the DPI-labeled flows' packets.
ExperimentReport run_regular_baseline(std::span<const Flow> corpus, const ExperimentConfig& cfg,
                                      std::span<const Flow> test);

/// Both arms on one draw; the teacher is shared.
ExperimentReport run_experiment(std::span<const Flow> corpus, const ExperimentConfig& cfg, std::span<const Flow> test);

/// Student corpus of exactly cfg.n flows and a test set of n_test flows,
/// both drawn from `preset` under `mix`, then run_experiment.
ExperimentReport run_synthetic_replica(const SyntheticPreset& preset, const AppMix& mix, const ExperimentConfig& cfg,
                                       std::size_t n_test);

struct FphtcArtifacts {
    GbdtModel teacher;
    DecisionTree student;
    RoutingPolicy policy;
    std::size_t flows_labeled = 0;
    std::size_t train_records = 0;
};

/// The training half of run_fphtc, returning the trained models.
FphtcArtifacts train_fphtc(std::span<const Flow> corpus, const ExperimentConfig& cfg);

// Building blocks shared with the online simulation.

/// Trains the teacher on DPI-labeled flows, upsampled to balance.
GbdtModel train_teacher(std::span<const Flow> dpi_flows, const GbdtConfig& config, std::uint64_t seed);

struct PolicyEvaluation {
    double balanced_acc = 0.0;
    Recalls recalls;
    std::size_t records = 0;
    std::size_t collisions = 0;
};

/// Scores each unique test 4-tuple once against its flow's true class.
/// Tuples present in `exclude` are skipped and counted.
PolicyEvaluation evaluate_policy(const RoutingPolicy& policy, const PacketDataset& test,
                                 std::span<const PacketRecord> exclude = {});

// Reports.

/// Header: n,lambda,seed,flows_labeled,dpi_cost,teacher_balanced_acc,fphtc_balanced_acc,
/// baseline_balanced_acc,rule_count,baseline_rule_count,test_records,test_collisions
void write_report_csv_header(std::ostream& os);
void write_report_csv_row(std::ostream& os, const ExperimentReport& r);

/// Per operating point (n, lambda): replica count, medians, means and, with
/// two or more replicas, `level` confidence intervals of each accuracy.
nlohmann::json summarize_reports(std::span<const ExperimentReport> reports, double level = 0.90);

} // namespace fphtc
