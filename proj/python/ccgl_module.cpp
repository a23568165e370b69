#include "ccgl/cgl_encoder.hpp"
#include "ccgl/config.hpp"
#include "ccgl/dgc_classifier.hpp"
#include "ccgl/eval.hpp"
#include "ccgl/fc_graph.hpp"
#include "ccgl/pipeline.hpp"
#include "ccgl/signal_ingest.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <utility>
#include <vector>

namespace py = pybind11;

namespace {

ccgl::SparseMatrix to_sparse(const ccgl::Matrix& dense) {
    return dense.sparseView();
}

py::dict summary_dict(const ccgl::MetricSummary& s) {
    py::dict d;
    d["mean"] = s.mean;
    d["std"] = s.std;
    d["defined_runs"] = s.defined_runs;
    return d;
}

py::dict report_dict(const ccgl::MetricsReport& r) {
    py::list runs;
    for (const auto& run : r.runs) {
        py::dict d;
        d["seed"] = run.seed;
        d["auc"] = run.auc;
        d["tp"] = run.confusion.tp;
        d["fp"] = run.confusion.fp;
        d["tn"] = run.confusion.tn;
        d["fn"] = run.confusion.fn;
        runs.append(d);
    }
    py::dict out;
    out["runs"] = runs;
    out["auc"] = summary_dict(r.auc);
    out["acc"] = summary_dict(r.acc);
    out["sen"] = summary_dict(r.sen);
    out["spec"] = summary_dict(r.spec);
    return out;
}

} // namespace

PYBIND11_MODULE(_ccgl, m) {
    m.doc() = "Contrastive graph learning over resting-state fMRI cohorts.";

    py::register_exception<ccgl::Error>(m, "Error", PyExc_ValueError);

    m.def(
        "synth_cohort",
        [](int n_patients, int n_rois, int n_timepoints, std::uint64_t seed) {
            ccgl::SynthSpec spec;
            spec.n_patients = n_patients;
            spec.n_rois = n_rois;
            spec.n_timepoints = n_timepoints;
            const ccgl::Cohort c = ccgl::synth_cohort(spec, seed);
            py::list patients;
            for (const auto& p : c.patients) {
                py::dict d;
                d["id"] = p.id;
                d["series"] = p.series;
                d["pcd"] = std::vector<double>(p.pcd.begin(), p.pcd.end());
                d["label"] = p.label;
                d["site"] = p.site;
                patients.append(d);
            }
            return patients;
        },
        py::arg("n_patients") = 120, py::arg("n_rois") = 16, py::arg("n_timepoints") = 400, py::arg("seed") = 0,
        "Synthetic cohort as a list of dicts with id, series (T x R), pcd, label and site.");

    m.def("pearson_matrix", &ccgl::pearson_matrix, py::arg("view"), "Pearson correlation between ROI columns.");
    m.def("partial_corr_matrix", &ccgl::partial_corr_matrix, py::arg("view"), py::arg("shrinkage") = 0.1,
          "Partial correlation from the shrunk precision matrix.");

    m.def(
        "normalized_laplacian",
        [](const ccgl::Matrix& adjacency) { return ccgl::Matrix(ccgl::normalized_laplacian(to_sparse(adjacency))); },
        py::arg("adjacency"), "I - D^-1/2 A D^-1/2 with isolated nodes kept as identity rows.");
    m.def(
        "largest_eigenvalue",
        [](const ccgl::Matrix& laplacian, double tol) {
            return ccgl::largest_eigenvalue(to_sparse(laplacian), tol);
        },
        py::arg("laplacian"), py::arg("tol") = 1e-6, "Power-iteration estimate of the top eigenvalue.");

    m.def(
        "similarity_matrix",
        [](const ccgl::Matrix& embeddings) { return ccgl::similarity_matrix(embeddings).values; },
        py::arg("embeddings"), "Cosine attraction matrix; rows 2i and 2i+1 are the views of patient i.");
    m.def(
        "contrastive_loss",
        [](const ccgl::Matrix& attraction, double tau) { return ccgl::contrastive_loss(attraction, tau); },
        py::arg("attraction"), py::arg("tau") = 0.1, "Mean pairwise contrastive loss of an attraction matrix.");

    m.def(
        "knn_edges",
        [](const ccgl::Matrix& features, int k) {
            std::vector<std::pair<int, int>> out;
            for (const auto& e : ccgl::knn_edges(features, k)) out.emplace_back(e.src, e.dst);
            return out;
        },
        py::arg("features"), py::arg("k"), "Directed (src, dst) edges to each row's k nearest neighbours.");

    m.def(
        "auc",
        [](const std::vector<double>& scores, const std::vector<int>& labels) { return ccgl::auc(scores, labels); },
        py::arg("scores"), py::arg("labels"), "Rank-sum ROC AUC with tied scores counted as half.");

    m.def(
        "default_config", [] { return ccgl::config_to_json(ccgl::RunConfig{}); },
        "Built-in default run configuration as JSON text.");
    m.def(
        "run_pipeline",
        [](const std::string& config_json, const std::string& out) {
            const ccgl::RunConfig cfg = ccgl::parse_config(config_json);
            ccgl::PipelineReport report;
            {
                py::gil_scoped_release release;
                report = ccgl::run_pipeline(cfg, out);
            }
            py::dict d;
            d["model"] = report_dict(report.model);
            d["knn"] = report_dict(report.knn);
            return d;
        },
        py::arg("config_json"), py::arg("out"), "Run every stage for each configured seed and return the metrics.");
}
