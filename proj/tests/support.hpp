#ifndef CCGL_TEST_SUPPORT_HPP
#define CCGL_TEST_SUPPORT_HPP

#include "ccgl/common.hpp"
#include "ccgl/fc_graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace ccgl::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

/// Random undirected graph on r nodes with signed weights; every node gets
/// a chance at each partner with probability `density`.
inline ViewGraph random_view_graph(int r, double density, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ViewGraph g;
    g.roi_count = r;
    g.node_features = random_matrix(r, r + kPcdCount, rng);
    for (int i = 0; i < r; ++i)
        for (int j = i + 1; j < r; ++j)
            if (u(rng) < density) g.edges.push_back({i, j, u(rng) < 0.5 ? -(0.1 + u(rng)) : 0.1 + u(rng)});
    return g;
}

/// Dense symmetric adjacency |w| built without the library.
inline Matrix dense_adjacency(const ViewGraph& g) {
    Matrix a = Matrix::Zero(g.roi_count, g.roi_count);
    for (const auto& e : g.edges) {
        a(e.i, e.j) = std::abs(e.weight);
        a(e.j, e.i) = std::abs(e.weight);
    }
    return a;
}

/// I - D^{-1/2} A D^{-1/2}, isolated nodes contributing an identity row.
inline Matrix dense_laplacian(const Matrix& a) {
    const Eigen::Index n = a.rows();
    Vector dinv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = a.row(i).sum();
        dinv(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    return Matrix::Identity(n, n) - dinv.asDiagonal() * a * dinv.asDiagonal();
}

class TempDir {
public:
    explicit TempDir(const std::string& stem) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("ccgl_" + stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace ccgl::testing

#endif // CCGL_TEST_SUPPORT_HPP
