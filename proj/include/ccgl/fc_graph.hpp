#ifndef CCGL_FC_GRAPH_HPP
#define CCGL_FC_GRAPH_HPP

#include "ccgl/signal_ingest.hpp"

#include <span>
#include <vector>

namespace ccgl {

/// Undirected weighted edge with i < j.
struct Edge {
    int i = 0;
    int j = 0;
    double weight = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// One view's functional-connectivity graph.
struct ViewGraph {
    Matrix node_features; ///< R x (R + 7): Pearson row followed by PCD.
    std::vector<Edge> edges;
    int roi_count = 0;
};

struct EdgePolicy {
    int per_node_top = 10;
    double shrinkage = 0.1;
};

/// Sample Pearson correlation of the columns of a T x R view.
Matrix pearson_matrix(const Matrix& view);

/// Partial correlations from the inverse of the shrunk covariance
/// (1 - shrinkage) * S + shrinkage * diag(S).
Matrix partial_corr_matrix(const Matrix& view, double shrinkage);

/// Per-node top-e selection by |partial correlation|, merged into a
/// deduplicated undirected edge list sorted by (i, j).
std::vector<Edge> select_edges(const Matrix& partial, int per_node_top);

ViewGraph build_fc_graph(const Matrix& view, const Pcd& pcd, const EdgePolicy& policy);

/// Z-scoring of PCD columns, fitted on a subset of patients.
class PcdScaler {
public:
    PcdScaler() { scale_.fill(1.0); }

    static PcdScaler fit(const Cohort& cohort, std::span<const int> rows);
    Pcd transform(const Pcd& raw) const;

    const Pcd& mean() const { return mean_; }
    const Pcd& scale() const { return scale_; }

private:
    Pcd mean_{};
    Pcd scale_{};
};

} // namespace ccgl

#endif // CCGL_FC_GRAPH_HPP
