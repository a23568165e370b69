#ifndef CCGL_EVAL_HPP
#define CCGL_EVAL_HPP

#include "ccgl/cgl_encoder.hpp"
#include "ccgl/dgc_classifier.hpp"
#include "ccgl/fc_graph.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ccgl {

/// Mann-Whitney AUC: share of (positive, negative) pairs ordered correctly,
/// ties counting one half.
double auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
    int tp = 0;
    int fp = 0;
    int tn = 0;
    int fn = 0;
    /// Empty when the denominator is zero.
    std::optional<double> acc;
    std::optional<double> sen;
    std::optional<double> spec;
};

Confusion confusion_metrics(std::span<const int> predictions, std::span<const int> labels,
                            int positive_class = 1);

struct RunMetrics {
    std::uint64_t seed = 0;
    double auc = 0.0;
    Confusion confusion;
};

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0; ///< population standard deviation
    int defined_runs = 0;
};

struct MetricsReport {
    std::vector<RunMetrics> runs;
    MetricSummary auc, acc, sen, spec;
};

/// Mean and standard deviation of each metric across runs; undefined rates
/// are skipped.
MetricsReport summarize_runs(std::vector<RunMetrics> runs);

/// {"runs":[{seed, auc, acc, sen, spec, tp, fp, tn, fn}], "mean":{...}, "std":{...}}
std::string metrics_json(const MetricsReport& report);

struct DistributionSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    std::vector<std::size_t> histogram; ///< 50 equal bins over [-1, 1]
};

inline constexpr int kHistogramBins = 50;

DistributionSummary summarize_distribution(std::vector<double> values);

struct AttractionStats {
    std::vector<double> homo;  ///< ordered off-diagonal pairs, same patient
    std::vector<double> heter; ///< ordered pairs, different patients
    DistributionSummary homo_summary;
    DistributionSummary heter_summary;
};

AttractionStats attraction_stats(const AttractionMatrix& m);

/// Writes `<stem>.csv` (pair_type,value), `<stem>_hist.csv` and
/// `<stem>_summary.csv`.
void write_attraction_csv(const AttractionStats& stats, const std::filesystem::path& dir,
                          const std::string& stem);

enum class GraphFormat { Dot, GraphMl };

struct PopulationNode {
    std::string id;
    int label = 0;
    Split split = Split::Unassigned;
};

/// One node per patient with out-edges to its two nearest neighbours.
void export_population_graph(const Matrix& features, std::span<const PopulationNode> nodes,
                             const std::filesystem::path& out_path, GraphFormat format);

struct KnnBaselineResult {
    std::vector<double> scores;    ///< share of label-1 neighbours
    std::vector<int> predictions;  ///< majority vote, ties -> 1
};

KnnBaselineResult knn_baseline(const Matrix& train_features, std::span<const int> train_labels,
                               const Matrix& test_features, int k);

/// Upper-triangle Pearson of the full series followed by the scaled PCD.
Matrix raw_fc_features(const Cohort& cohort, const PcdScaler& scaler);

} // namespace ccgl

#endif // CCGL_EVAL_HPP
