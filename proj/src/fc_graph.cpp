#include "ccgl/fc_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace ccgl {

namespace {

Matrix centered_covariance(const Matrix& view) {
    const Matrix centered = view.rowwise() - view.colwise().mean();
    return (centered.transpose() * centered) / static_cast<double>(view.rows() - 1);
}

} // namespace

Matrix pearson_matrix(const Matrix& view) {
    if (view.rows() < 3) throw DataError("pearson_matrix: need at least 3 timepoints");
    const Matrix cov = centered_covariance(view);
    const Eigen::Index r = cov.rows();
    Vector inv_sd(r);
    for (Eigen::Index a = 0; a < r; ++a) {
        if (!(cov(a, a) > 0.0)) {
            throw NumericError("pearson_matrix: ROI " + std::to_string(a) + " has zero variance");
        }
        inv_sd(a) = 1.0 / std::sqrt(cov(a, a));
    }
    Matrix corr = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
    for (Eigen::Index a = 0; a < r; ++a) {
        for (Eigen::Index b = a + 1; b < r; ++b) {
            const double v = std::clamp(0.5 * (corr(a, b) + corr(b, a)), -1.0, 1.0);
            corr(a, b) = v;
            corr(b, a) = v;
        }
        corr(a, a) = 1.0;
    }
    return corr;
}

Matrix partial_corr_matrix(const Matrix& view, double shrinkage) {
    if (view.rows() < 3) throw DataError("partial_corr_matrix: need at least 3 timepoints");
    if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) {
        throw DataError("partial_corr_matrix: shrinkage must lie in [0, 1]");
    }
    Matrix cov = centered_covariance(view);
    const Eigen::Index r = cov.rows();
    for (Eigen::Index a = 0; a < r; ++a) {
        if (!(cov(a, a) > 0.0)) {
            throw NumericError("partial_corr_matrix: ROI " + std::to_string(a) + " has zero variance");
        }
    }
    const Vector diag = cov.diagonal();
    cov *= (1.0 - shrinkage);
    cov.diagonal() = diag;

    // Work on the correlation scale so the condition estimate is unit-free.
    const Vector inv_sd = diag.cwiseSqrt().cwiseInverse();
    const Matrix scaled = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
    Eigen::LDLT<Matrix> ldlt(scaled);
    const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    if (!(rcond > 1e-12) || !ldlt.isPositive()) {
        throw NumericError("partial_corr_matrix: shrunk covariance is numerically singular (rcond " +
                           std::to_string(rcond) + "); increase shrinkage");
    }
    const Matrix theta = ldlt.solve(Matrix::Identity(r, r));

    Matrix rho(r, r);
    for (Eigen::Index a = 0; a < r; ++a) {
        rho(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < r; ++b) {
            const double t = 0.5 * (theta(a, b) + theta(b, a));
            const double v = std::clamp(-t / std::sqrt(theta(a, a) * theta(b, b)), -1.0, 1.0);
            rho(a, b) = v;
            rho(b, a) = v;
        }
    }
    return rho;
}

std::vector<Edge> select_edges(const Matrix& partial, int per_node_top) {
    if (per_node_top < 0) throw DataError("select_edges: per_node_top must be non-negative");
    const int r = static_cast<int>(partial.rows());
    const int keep = std::min(per_node_top, r - 1);
    std::set<std::pair<int, int>> chosen;
    std::vector<int> order;
    for (int a = 0; a < r; ++a) {
        order.resize(static_cast<std::size_t>(r));
        std::iota(order.begin(), order.end(), 0);
        order.erase(order.begin() + a);
        std::stable_sort(order.begin(), order.end(),
                         [&](int x, int y) { return std::abs(partial(a, x)) > std::abs(partial(a, y)); });
        for (int k = 0; k < keep; ++k) {
            const int b = order[static_cast<std::size_t>(k)];
            chosen.emplace(std::min(a, b), std::max(a, b));
        }
    }
    std::vector<Edge> edges;
    edges.reserve(chosen.size());
    for (const auto& [i, j] : chosen) edges.push_back(Edge{i, j, partial(i, j)});
    return edges;
}

ViewGraph build_fc_graph(const Matrix& view, const Pcd& pcd, const EdgePolicy& policy) {
    const Matrix pearson = pearson_matrix(view);
    const Matrix partial = partial_corr_matrix(view, policy.shrinkage);
    const Eigen::Index r = view.cols();
    ViewGraph g;
    g.roi_count = static_cast<int>(r);
    g.node_features.resize(r, r + kPcdCount);
    g.node_features.leftCols(r) = pearson;
    for (Eigen::Index a = 0; a < r; ++a)
        for (int k = 0; k < kPcdCount; ++k) g.node_features(a, r + k) = pcd[static_cast<std::size_t>(k)];
    g.edges = select_edges(partial, policy.per_node_top);
    return g;
}

PcdScaler PcdScaler::fit(const Cohort& cohort, std::span<const int> rows) {
    PcdScaler s;
    if (rows.empty()) return s;
    const double n = static_cast<double>(rows.size());
    for (std::size_t k = 0; k < kPcdCount; ++k) {
        double mean = 0.0;
        for (int i : rows) mean += cohort.patients[static_cast<std::size_t>(i)].pcd[k];
        mean /= n;
        double var = 0.0;
        for (int i : rows) {
            const double d = cohort.patients[static_cast<std::size_t>(i)].pcd[k] - mean;
            var += d * d;
        }
        var /= n;
        s.mean_[k] = mean;
        s.scale_[k] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
}

Pcd PcdScaler::transform(const Pcd& raw) const {
    Pcd out{};
    for (std::size_t k = 0; k < kPcdCount; ++k) out[k] = (raw[k] - mean_[k]) / scale_[k];
    return out;
}

} // namespace ccgl
