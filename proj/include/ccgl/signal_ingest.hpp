#ifndef CCGL_SIGNAL_INGEST_HPP
#define CCGL_SIGNAL_INGEST_HPP

#include "ccgl/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ccgl {

inline constexpr int kPcdCount = 7;
inline constexpr int kDefaultMinWindow = 30;

/// Personal characteristic data: age, gender, handedness, IQ measure,
/// verbal IQ, performance IQ, full-scale IQ.
using Pcd = std::array<double, kPcdCount>;

enum class Split { Train, Val, Test, Unassigned };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct PatientRecord {
    std::string id;
    Matrix series; ///< T timepoints x R ROIs.
    Pcd pcd{};
    int label = 0;
    std::string site;
    Split split = Split::Unassigned;
};

struct Cohort {
    std::vector<PatientRecord> patients;
    int roi_count = 0;

    std::vector<int> indices(Split s) const;
};

/// Parameters for the synthetic cohort generator.
struct SynthSpec {
    int n_patients = 120;
    int n_rois = 16;
    int n_timepoints = 400;
    int n_sites = 3;
    double class_ratio = 0.5;       ///< Fraction of label-1 patients.
    int subtypes_per_class = 2;
    double noise_level = 0.3;       ///< Std of i.i.d. noise relative to unit-variance signal.
    double edge_density = 0.15;     ///< Fraction of ROI pairs in each precision layer.
    double class_strength = 0.35;   ///< Magnitude of class-specific partial correlations.
    double subtype_strength = 0.35; ///< Magnitude of subtype-specific partial correlations.
    double patient_variation = 0.1; ///< Per-patient jitter on the precision weights.
    double pcd_shift = 0.5;         ///< Class mean shift of each PCD feature, in SD units.
};

/// Checks the structural invariants of a single series.
void validate_series(const Matrix& series, const std::string& who);

/// Reads a cohort manifest (JSON) and the per-patient CSV files it names.
/// Optional "split" fields are honoured.
Cohort load_cohort(const std::filesystem::path& manifest_path);

/// Writes a manifest plus one CSV per patient into `dir`.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

/// Parses a headerless CSV of decimal floats into a T x R matrix.
Matrix read_series_csv(const std::filesystem::path& path, const std::string& patient_id);

/// Cuts `series` into `n_views` consecutive, equal-length, non-overlapping
/// windows starting at t = 0. Trailing remainder rows are dropped.
std::vector<Matrix> slice_views(const Matrix& series, int n_views, int min_window = kDefaultMinWindow);

/// Precision template used by the generator for one (class, subtype) cell.
struct SubtypeTemplate {
    int label = 0;
    int subtype = 0;
    Matrix precision;
    Matrix correlation; ///< Correlation implied by the precision.
};

/// Templates the generator draws from; a pure function of (spec, seed).
std::vector<SubtypeTemplate> synth_templates(const SynthSpec& spec, std::uint64_t seed);

struct SynthCohort {
    Cohort cohort;
    std::vector<int> subtype_of; ///< Index into the template list, per patient.
    std::vector<SubtypeTemplate> templates;
};

SynthCohort synth_cohort_detailed(const SynthSpec& spec, std::uint64_t seed);
Cohort synth_cohort(const SynthSpec& spec, std::uint64_t seed);

/// Stratified train/val/test assignment within each (site, label) cell.
/// Cell sizes are differences of cumulative allocations, so a balanced
/// cohort of 10 splits 7/1/2 overall.
Cohort split_cohort(Cohort cohort, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Split sizes for one stratification cell (largest-remainder rounding, at
/// least one training patient when the cell is non-empty).
std::array<int, 3> cell_allocation(int cell_size, const std::array<double, 3>& ratios);

} // namespace ccgl

#endif // CCGL_SIGNAL_INGEST_HPP
