#include "ccgl/fc_graph.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

using namespace ccgl;
using ccgl::testing::max_abs_diff;
using ccgl::testing::random_matrix;

namespace {

double residual_correlation(const Matrix& data, Eigen::Index a, Eigen::Index b) {
    // Regress a and b on every other column plus an intercept, then correlate
    // the residuals.
    const Eigen::Index t = data.rows();
    std::vector<Eigen::Index> rest;
    for (Eigen::Index c = 0; c < data.cols(); ++c)
        if (c != a && c != b) rest.push_back(c);
    Matrix design(t, static_cast<Eigen::Index>(rest.size()) + 1);
    design.col(0).setOnes();
    for (std::size_t i = 0; i < rest.size(); ++i) design.col(static_cast<Eigen::Index>(i) + 1) = data.col(rest[i]);
    const auto qr = design.colPivHouseholderQr();
    const Vector ra = data.col(a) - design * qr.solve(Vector(data.col(a)));
    const Vector rb = data.col(b) - design * qr.solve(Vector(data.col(b)));
    const Vector ca = ra.array() - ra.mean();
    const Vector cb = rb.array() - rb.mean();
    return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

Matrix correlated_gaussian(Eigen::Index t, Eigen::Index r, std::mt19937_64& rng) {
    const Matrix mix = random_matrix(r, r, rng) + 2.0 * Matrix::Identity(r, r);
    return random_matrix(t, r, rng) * mix;
}

Pcd pcd_of(double base) {
    Pcd p{};
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = base + static_cast<double>(k);
    return p;
}

} // namespace

TEST_SUITE("fc_graph") {

TEST_CASE("pearson identity, negation and hand-evaluated value") {
    Matrix m(4, 3);
    m << 1, 1, -1,
         2, 2, -2,
         3, 2, -3,
         4, 5, -4;
    Matrix dup(4, 2);
    dup.col(0) = m.col(0);
    dup.col(1) = m.col(0);
    CHECK(pearson_matrix(dup)(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
    const Matrix p = pearson_matrix(m);
    CHECK(p(0, 2) == doctest::Approx(-1.0).epsilon(1e-15));
    // x=(1,2,3,4), y=(1,2,2,5): sxy = 6, sxx = 5, syy = 9.
    CHECK(p(0, 1) == doctest::Approx(6.0 / std::sqrt(45.0)).epsilon(1e-14));
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(p(i, i) == 1.0);
}

TEST_CASE("pearson rejects constant columns and short series") {
    Matrix m(5, 3);
    m << 1, 4, 2,
         2, 4, 1,
         3, 4, 5,
         4, 4, 1,
         5, 4, 0;
    try {
        pearson_matrix(m);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("ROI 1") != std::string::npos);
    }
    CHECK_THROWS(pearson_matrix(Matrix::Random(2, 3)));
}

TEST_CASE("pearson is invariant to positive affine maps per column") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> alpha(0.1, 5.0), beta(-10.0, 10.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = correlated_gaussian(60, 6, rng);
        Matrix y = x;
        for (Eigen::Index c = 0; c < y.cols(); ++c) y.col(c) = (alpha(rng) * y.col(c)).array() + beta(rng);
        CHECK(max_abs_diff(pearson_matrix(x), pearson_matrix(y)) < 1e-12);
    }
}

TEST_CASE("partial correlation of two variables equals pearson") {
    std::mt19937_64 rng(9);
    const Matrix x = correlated_gaussian(100, 2, rng);
    CHECK(std::abs(partial_corr_matrix(x, 0.0)(0, 1) - pearson_matrix(x)(0, 1)) < 1e-14);
}

TEST_CASE("partial correlation matches the residual-regression oracle") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = correlated_gaussian(200, 5, rng);
        const Matrix rho = partial_corr_matrix(x, 0.0);
        for (Eigen::Index a = 0; a < 5; ++a) {
            CHECK(rho(a, a) == 1.0);
            for (Eigen::Index b = a + 1; b < 5; ++b) CHECK(std::abs(rho(a, b) - residual_correlation(x, a, b)) < 1e-8);
        }
    }
}

TEST_CASE("chain data has vanishing partial correlation between the ends") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix d(2000, 3);
    for (Eigen::Index t = 0; t < d.rows(); ++t) {
        const double x = n(rng);
        const double z = x + 0.5 * n(rng);
        const double y = z + 0.5 * n(rng);
        d.row(t) << x, y, z;
    }
    CHECK(pearson_matrix(d)(0, 1) > 0.5);
    CHECK(std::abs(partial_corr_matrix(d, 0.0)(0, 1)) < 0.1);
    CHECK(std::abs(residual_correlation(d, 0, 1)) < 0.1);
}

TEST_CASE("partial correlation is symmetric and bounded, and shrinkage rescues R >= T") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = correlated_gaussian(12, 16, rng);
        CHECK_THROWS_AS(partial_corr_matrix(x, 0.0), NumericError);
        const Matrix rho = partial_corr_matrix(x, 0.1);
        CHECK(max_abs_diff(rho, rho.transpose()) == 0.0);
        CHECK(rho.cwiseAbs().maxCoeff() <= 1.0);
        CHECK(rho.allFinite());
    }
    CHECK_THROWS_AS(partial_corr_matrix(Matrix::Random(10, 3), 1.5), DataError);
}

TEST_CASE("small graphs are complete when the cap exceeds the degree") {
    std::mt19937_64 rng(14);
    const ViewGraph g = build_fc_graph(correlated_gaussian(80, 4, rng), pcd_of(0.0), EdgePolicy{3, 0.1});
    CHECK(g.edges.size() == 6);
    CHECK(g.roi_count == 4);
    CHECK(g.node_features.cols() == 4 + 7);
}

TEST_CASE("top-1 selection matches a brute-force scan") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix p = Matrix::Identity(8, 8);
        for (int a = 0; a < 8; ++a)
            for (int b = a + 1; b < 8; ++b) p(a, b) = p(b, a) = u(rng);
        std::set<std::pair<int, int>> expected;
        for (int a = 0; a < 8; ++a) {
            int best = -1;
            for (int b = 0; b < 8; ++b)
                if (b != a && (best < 0 || std::abs(p(a, b)) > std::abs(p(a, best)))) best = b;
            expected.emplace(std::min(a, best), std::max(a, best));
        }
        const auto edges = select_edges(p, 1);
        CHECK(edges.size() <= 8);
        std::set<std::pair<int, int>> got;
        for (const auto& e : edges) {
            got.emplace(e.i, e.j);
            CHECK(e.weight == p(e.i, e.j));
        }
        CHECK(got == expected);
    }
}

TEST_CASE("fc graph features are the pearson row followed by the pcd") {
    std::mt19937_64 rng(16);
    for (int r : {2, 5, 9}) {
        const Matrix view = correlated_gaussian(120, r, rng);
        const ViewGraph g = build_fc_graph(view, pcd_of(3.0), EdgePolicy{});
        REQUIRE(g.node_features.cols() == r + 7);
        CHECK(g.node_features.leftCols(r) == pearson_matrix(view));
        for (int a = 0; a < r; ++a)
            for (int k = 0; k < 7; ++k) CHECK(g.node_features(a, r + k) == 3.0 + k);
        for (const auto& e : g.edges) {
            CHECK(e.i < e.j);
            CHECK(e.i >= 0);
            CHECK(e.j < r);
        }
    }
}

TEST_CASE("edge selection is permutation equivariant") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int r = 10;
        const Matrix view = correlated_gaussian(150, r, rng);
        std::vector<int> perm(r);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix permuted(view.rows(), r);
        for (int c = 0; c < r; ++c) permuted.col(perm[static_cast<std::size_t>(c)]) = view.col(c);
        const EdgePolicy policy{3, 0.1};
        const ViewGraph a = build_fc_graph(view, pcd_of(0.0), policy);
        const ViewGraph b = build_fc_graph(permuted, pcd_of(0.0), policy);
        std::set<std::pair<int, int>> mapped, got;
        for (const auto& e : a.edges) {
            const int i = perm[static_cast<std::size_t>(e.i)], j = perm[static_cast<std::size_t>(e.j)];
            mapped.emplace(std::min(i, j), std::max(i, j));
        }
        for (const auto& e : b.edges) got.emplace(e.i, e.j);
        CHECK(mapped == got);
    }
}

TEST_CASE("pcd scaler z-scores over the chosen rows only") {
    Cohort c;
    for (int i = 0; i < 4; ++i) {
        PatientRecord p;
        p.pcd = pcd_of(static_cast<double>(i));
        p.pcd[6] = 5.0;
        c.patients.push_back(p);
    }
    const std::vector<int> rows{0, 2};
    const PcdScaler s = PcdScaler::fit(c, rows);
    CHECK(s.mean()[0] == 1.0);
    CHECK(s.scale()[0] == 1.0);
    CHECK(s.scale()[6] == 1.0); // constant column keeps unit scale
    const Pcd z = s.transform(c.patients[2].pcd);
    CHECK(z[0] == 1.0);
    CHECK(z[6] == 0.0);
}

} // TEST_SUITE
