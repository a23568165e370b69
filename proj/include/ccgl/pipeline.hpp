#ifndef CCGL_PIPELINE_HPP
#define CCGL_PIPELINE_HPP

#include "ccgl/config.hpp"

#include <filesystem>
#include <utility>

namespace ccgl {

/// Cohort with fitted PCD scaling and every view graph ready for encoding.
struct PreparedCohort {
    Cohort cohort;
    PcdScaler scaler;
    std::vector<ViewGraph> graphs_flat;   ///< patient-major, n_views per patient
    std::vector<PatientViews> views;
};

/// Loads the manifest named in the config or synthesises the cohort.
Cohort load_source(const RunConfig& cfg);

/// Fits PCD z-scoring on the training split and builds every view graph.
PreparedCohort prepare_cohort(const RunConfig& cfg, Cohort cohort);

std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed);

/// Stage commands. Each writes its artifacts plus the effective config under
/// `<out>/seed_<seed>/` (synth writes `<out>/cohort/`) and throws with the
/// missing path when a prerequisite artifact is absent.
void run_synth(const RunConfig& cfg, const std::filesystem::path& out);
void run_ingest(const RunConfig& cfg, const std::filesystem::path& out, std::uint64_t seed);
void run_train_cgl(const RunConfig& cfg, const std::filesystem::path& out, std::uint64_t seed);
void run_train_dgc(const RunConfig& cfg, const std::filesystem::path& out, std::uint64_t seed);

struct EvaluationResult {
    RunMetrics model;
    RunMetrics knn;
};

EvaluationResult run_evaluate(const RunConfig& cfg, const std::filesystem::path& out, std::uint64_t seed);
void run_export_graph(const RunConfig& cfg, const std::filesystem::path& out, std::uint64_t seed);

struct PipelineReport {
    MetricsReport model;
    MetricsReport knn;
};

/// All stages for every configured seed, then `metrics.json` and
/// `knn_metrics.json` aggregated under `out`.
PipelineReport run_pipeline(const RunConfig& cfg, const std::filesystem::path& out);

} // namespace ccgl

#endif // CCGL_PIPELINE_HPP
