#include "ccgl/tensor.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

using namespace ccgl;
using namespace ccgl::ad;
using ccgl::testing::random_matrix;
using ccgl::testing::TempDir;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

} // namespace

TEST_SUITE("tensor") {

TEST_CASE("linear map gradient is the input broadcast per row") {
    ParamStore ps;
    ps.add("W", Matrix::Identity(2, 2));
    const Objective f = [](Tape& t) { return sum(matmul(t.param("W"), t.constant(mat({{1.0}, {1.0}})))); };
    const auto fb = forward_backward(f, ps);
    CHECK(fb.value == doctest::Approx(2.0));
    CHECK(fb.grads.at("W").isApprox(mat({{1.0, 1.0}, {1.0, 1.0}})));
}

TEST_CASE("untouched parameters get zero gradients") {
    ParamStore ps;
    ps.add("used", Matrix::Constant(1, 3, 2.0));
    ps.add("idle", Matrix::Constant(2, 2, 5.0));
    const auto fb = forward_backward([](Tape& t) { return sum(t.param("used")); }, ps);
    CHECK(fb.grads.at("idle").isZero(0.0));
    CHECK(fb.grads.at("idle").rows() == 2);
    CHECK(fb.grads.at("used").isApprox(Matrix::Ones(1, 3)));
}

TEST_CASE("relu value and subgradient") {
    ParamStore ps;
    ps.add("x", mat({{-1.0, 2.0}}));
    const auto fb = forward_backward([](Tape& t) { return sum(relu(t.param("x"))); }, ps);
    CHECK(fb.value == 2.0);
    CHECK(fb.grads.at("x")(0, 0) == 0.0);
    CHECK(fb.grads.at("x")(0, 1) == 1.0);
}

TEST_CASE("non-scalar loss is rejected") {
    ParamStore ps;
    ps.add("x", Matrix::Ones(2, 2));
    CHECK_THROWS_AS(forward_backward([](Tape& t) { return t.param("x"); }, ps), ShapeError);
}

TEST_CASE("shape mismatch is reported") {
    ParamStore ps;
    ps.add("a", Matrix::Ones(2, 3));
    ps.add("b", Matrix::Ones(2, 3));
    CHECK_THROWS_AS(evaluate([](Tape& t) { return sum(matmul(t.param("a"), t.param("b"))); }, ps), ShapeError);
    CHECK_THROWS_AS(evaluate([](Tape& t) { return sum(add(t.param("a"), transpose(t.param("b")))); }, ps),
                    ShapeError);
}

TEST_CASE("forward values match hand evaluation") {
    ParamStore ps;
    ps.add("a", mat({{1.0, 2.0}, {3.0, 4.0}}));
    Tape t(ps);
    const Var a = t.param("a");
    CHECK(matmul(a, a).value().isApprox(mat({{7.0, 10.0}, {15.0, 22.0}})));
    CHECK(sum_rows(a).value().isApprox(mat({{4.0, 6.0}})));
    CHECK(sum_cols(a).value().isApprox(mat({{3.0}, {7.0}})));
    CHECK(max_rows(a).value().isApprox(mat({{3.0, 4.0}})));
    CHECK(max_cols(a).value().isApprox(mat({{2.0}, {4.0}})));
    CHECK(mean(a).scalar() == doctest::Approx(2.5));
    CHECK(mean_rows(a).value().isApprox(mat({{2.0, 3.0}})));
    CHECK(clamp(a, 1.5, 3.5).value().isApprox(mat({{1.5, 2.0}, {3.0, 3.5}})));
    CHECK(div(a, t.constant(mat({{2.0}, {4.0}}))).value().isApprox(mat({{0.5, 1.0}, {0.75, 1.0}})));
    const std::array<Var, 2> parts{a, a};
    CHECK(concat_cols(parts).value().cols() == 4);
    CHECK(concat_rows(parts).value().rows() == 4);
}

TEST_CASE("every primitive passes a finite-difference check") {
    std::mt19937_64 rng(11);
    ParamStore ps;
    ps.add("a", random_matrix(3, 4, rng));
    ps.add("b", random_matrix(4, 2, rng));
    Matrix pos = random_matrix(3, 4, rng).cwiseAbs();
    pos.array() += 0.5;
    ps.add("p", pos);
    ps.add("r", random_matrix(1, 4, rng));

    const std::vector<int> rows{2, 0, 2};
    SparseMatrix s = gather_matrix(rows, 3);
    std::vector<std::pair<const char*, Objective>> cases{
        {"matmul", [](Tape& t) { return sum(tanh(matmul(t.param("a"), t.param("b")))); }},
        {"spmm", [&](Tape& t) { return sum(mul(spmm(s, t.param("a")), spmm(s, t.param("p")))); }},
        {"transpose", [](Tape& t) { return sum(matmul(transpose(t.param("b")), transpose(t.param("a")))); }},
        {"broadcast add/sub", [](Tape& t) { return sum(tanh(sub(add(t.param("a"), t.param("r")), t.param("p")))); }},
        {"broadcast mul/div", [](Tape& t) { return sum(div(mul(t.param("a"), t.param("r")), t.param("p"))); }},
        {"exp/log/sqrt", [](Tape& t) { return sum(add(log(t.param("p")), mul(sqrt(t.param("p")), exp(scale(t.param("a"), 0.3))))); }},
        {"pow", [](Tape& t) { return sum(pow(t.param("p"), 2.5)); }},
        {"reductions", [](Tape& t) { return add(mean(max_rows(t.param("a"))), sum(mul(max_cols(t.param("a")), sum_cols(t.param("p"))))); }},
        {"means", [](Tape& t) { return sum(mul(mean_rows(t.param("a")), sum_rows(t.param("p")))); }},
        {"concat", [](Tape& t) {
             const std::array<Var, 2> c{t.param("a"), t.param("p")};
             const std::array<Var, 2> r{t.param("a"), t.param("p")};
             return add(sum(tanh(concat_cols(c))), sum(mul(concat_rows(r), concat_rows(r))));
         }},
        {"relu/clamp", [](Tape& t) { return sum(add(relu(t.param("a")), clamp(t.param("a"), -0.5, 0.5))); }},
        {"add_scalar", [](Tape& t) { return sum(log(add_scalar(t.param("p"), 1.0))); }},
    };
    for (auto& [name, f] : cases) {
        CAPTURE(name);
        CHECK(grad_check(f, ps, 1e-6, 24, 3) < 1e-6);
    }
}

TEST_CASE("quadratic loss passes grad_check tightly") {
    std::mt19937_64 rng(5);
    ParamStore ps;
    ps.add("w", random_matrix(4, 3, rng));
    const Objective f = [](Tape& t) { return sum(mul(t.param("w"), t.param("w"))); };
    CHECK(grad_check(f, ps, 1e-4, 12, 9) < 1e-8);
}

TEST_CASE("grad_check validates eps and non-finite losses") {
    ParamStore ps;
    ps.add("w", Matrix::Ones(1, 1));
    const Objective f = [](Tape& t) { return sum(t.param("w")); };
    CHECK_THROWS(grad_check(f, ps, 1e-2, 1, 0));
    CHECK_THROWS(grad_check(f, ps, 1e-9, 1, 0));
    ParamStore zero;
    zero.add("w", Matrix::Zero(1, 1));
    CHECK_THROWS(grad_check([](Tape& t) { return sum(log(t.param("w"))); }, zero, 1e-6, 1, 0));
}

TEST_CASE("pow has a zero subgradient at the origin") {
    ParamStore ps;
    ps.add("x", Matrix::Zero(1, 1));
    const auto fb = forward_backward([](Tape& t) { return sum(pow(t.param("x"), 2.0)); }, ps);
    CHECK(fb.grads.at("x")(0, 0) == 0.0);
    CHECK(std::isfinite(forward_backward([](Tape& t) { return sum(pow(t.param("x"), 0.5)); }, ps).grads.at("x")(0, 0)));
}

TEST_CASE("forward_backward is deterministic") {
    std::mt19937_64 rng(2);
    ParamStore ps;
    ps.add("w", random_matrix(5, 5, rng));
    const Objective f = [](Tape& t) { return sum(tanh(matmul(t.param("w"), t.param("w")))); };
    const auto a = forward_backward(f, ps);
    const auto b = forward_backward(f, ps);
    CHECK(a.value == b.value);
    CHECK(a.grads.at("w") == b.grads.at("w"));
}

TEST_CASE("adam with zero gradient leaves parameters and counts the step") {
    ParamStore ps;
    ps.add("w", mat({{1.0, -2.0}}));
    adam_step(ps, {{"w", Matrix::Zero(1, 2)}}, 0.1);
    CHECK(ps.value("w") == mat({{1.0, -2.0}}));
    CHECK(ps.entry("w").steps == 1);
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
    ParamStore ps;
    ps.add("w", mat({{0.0, 0.0, 0.0}}));
    const Matrix g = mat({{3.0, -0.02, 1e-3}});
    const double lr = 0.01;
    adam_step(ps, {{"w", g}}, lr);
    for (Eigen::Index j = 0; j < 3; ++j) {
        // Step 1 closed form: m_hat = g, v_hat = g^2.
        const double expected = -lr * g(0, j) / (std::abs(g(0, j)) + 1e-8);
        CHECK(ps.value("w")(0, j) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("adam second step matches a hand-rolled reference") {
    ParamStore ps;
    ps.add("w", mat({{0.5}}));
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double g1 = 0.4, g2 = -1.3;
    adam_step(ps, {{"w", mat({{g1}})}}, lr);
    adam_step(ps, {{"w", mat({{g2}})}}, lr);
    double w = 0.5, m = 0.0, v = 0.0;
    int t = 0;
    for (double g : {g1, g2}) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    CHECK(ps.value("w")(0, 0) == doctest::Approx(w).epsilon(1e-14));
}

TEST_CASE("adam with lr 0 is an identity and rejects bad gradients") {
    ParamStore ps;
    ps.add("w", mat({{1.0}}));
    adam_step(ps, {{"w", mat({{5.0}})}}, 0.0);
    CHECK(ps.value("w")(0, 0) == 1.0);
    try {
        adam_step(ps, {{"w", mat({{std::nan("")}})}}, 0.1);
        FAIL("expected an error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
}

TEST_CASE("param store rejects duplicates and unknown names") {
    ParamStore ps;
    ps.add("a", Matrix::Ones(2, 3));
    CHECK_THROWS(ps.add("a", Matrix::Ones(1, 1)));
    CHECK_THROWS(ps.value("missing"));
    CHECK(ps.coefficient_count() == 6);
    CHECK(ps.entry("a").first_moment.rows() == 2);
}

TEST_CASE("checkpoint round trip is exact") {
    std::mt19937_64 rng(4);
    ParamStore ps;
    ps.add("z.last", random_matrix(3, 2, rng));
    ps.add("a.first", random_matrix(1, 5, rng) * 1e-300);
    TempDir dir("ckpt");
    save_checkpoint(ps, dir.path() / "p.json");
    const ParamStore back = load_checkpoint(dir.path() / "p.json");
    CHECK(back.names() == ps.names());
    for (const auto& n : ps.names()) CHECK(back.value(n) == ps.value(n));
}

TEST_CASE("checkpoint loader rejects a wrong version") {
    TempDir dir("ckpt_bad");
    {
        std::ofstream out(dir.path() / "p.json");
        out << R"({"version":"other","params":{},"order":[]})";
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "p.json"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "absent.json"), DataError);
}

} // TEST_SUITE
