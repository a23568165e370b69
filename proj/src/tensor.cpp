#include "ccgl/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ccgl {

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(const std::string& name, Matrix init) {
    if (contains(name)) {
        throw Error("duplicate parameter name '" + name + "'");
    }
    Entry e;
    e.first_moment = Matrix::Zero(init.rows(), init.cols());
    e.second_moment = Matrix::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    entries_.emplace(name, std::move(e));
    order_.push_back(name);
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error("unknown parameter '" + name + "'");
    }
    return it->second;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw Error("unknown parameter '" + name + "'");
    }
    return it->second;
}

std::size_t ParamStore::coefficient_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
        n += static_cast<std::size_t>(e.value.size());
    }
    return n;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const {
    return tape_->value(id_);
}

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("expected a scalar, got " + shape_str(v.rows(), v.cols()));
    }
    return v(0, 0);
}

Var Tape::constant(Matrix value) {
    return record(std::move(value), nullptr);
}

Var Tape::param(const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    Var v = record(params_->value(name), nullptr);
    param_nodes_.emplace(name, v.id());
    return v;
}

Var Tape::record(Matrix value, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& delta) {
    Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (n.adjoint.size() == 0) {
        n.adjoint = delta;
    } else {
        n.adjoint += delta;
    }
}

GradMap Tape::backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw ShapeError("loss must be scalar, got " + shape_str(loss.rows(), loss.cols()));
    }
    for (auto& n : nodes_) {
        n.adjoint.resize(0, 0);
    }
    nodes_[static_cast<std::size_t>(loss.id())].adjoint = Matrix::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.backward && n.adjoint.size() != 0) {
            // Copy: the callback may append to other nodes' adjoints only.
            const Matrix upstream = n.adjoint;
            n.backward(*this, upstream);
        }
    }
    GradMap grads;
    for (const auto& name : params_->names()) {
        const Matrix& value = params_->value(name);
        auto it = param_nodes_.find(name);
        if (it != param_nodes_.end() && nodes_[static_cast<std::size_t>(it->second)].adjoint.size() != 0) {
            grads[name] = nodes_[static_cast<std::size_t>(it->second)].adjoint;
        } else {
            grads[name] = Matrix::Zero(value.rows(), value.cols());
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Primitives

namespace ad {
namespace {

Tape& same_tape(const Var& a, const Var& b, const char* op) {
    if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
        throw Error(std::string(op) + ": operands recorded on different tapes");
    }
    return a.tape();
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y, const char* op, const Var& a, const Var& b) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a.rows(), a.cols()) + " with " +
                     shape_str(b.rows(), b.cols()));
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

template <typename Forward, typename GradA, typename GradB>
Var binary(const Var& a, const Var& b, const char* op, Forward fwd, GradA ga, GradB gb) {
    Tape& t = same_tape(a, b, op);
    const Eigen::Index r = broadcast_dim(a.rows(), b.rows(), op, a, b);
    const Eigen::Index c = broadcast_dim(a.cols(), b.cols(), op, a, b);
    Matrix av = expand(a.value(), r, c);
    Matrix bv = expand(b.value(), r, c);
    Matrix out = fwd(av, bv);
    return t.record(std::move(out), [a, b, r, c, ga, gb](Tape& tape, const Matrix& g) {
        const Matrix av = expand(a.value(), r, c);
        const Matrix bv = expand(b.value(), r, c);
        tape.accumulate(a, reduce_to(ga(g, av, bv), a.rows(), a.cols()));
        tape.accumulate(b, reduce_to(gb(g, av, bv), b.rows(), b.cols()));
    });
}

} // namespace

Var matmul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
    }
    return t.record(a.value() * b.value(), [a, b](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g * b.value().transpose());
        tape.accumulate(b, a.value().transpose() * g);
    });
}

Var spmm(const SparseMatrix& s, const Var& x) {
    if (s.cols() != x.rows()) {
        throw ShapeError("spmm: " + shape_str(s.rows(), s.cols()) + " * " + shape_str(x.rows(), x.cols()));
    }
    Matrix out = s * x.value();
    return x.tape().record(std::move(out), [s, x](Tape& tape, const Matrix& g) {
        tape.accumulate(x, Matrix(s.transpose() * g));
    });
}

Var transpose(const Var& a) {
    return a.tape().record(a.value().transpose(), [a](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g.transpose());
    });
}

Var add(const Var& a, const Var& b) {
    return binary(
        a, b, "add", [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

Var sub(const Var& a, const Var& b) {
    return binary(
        a, b, "sub", [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
        [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return -g; });
}

Var mul(const Var& a, const Var& b) {
    return binary(
        a, b, "mul", [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
        [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); },
        [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.cwiseProduct(x); });
}

Var div(const Var& a, const Var& b) {
    return binary(
        a, b, "div", [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
        [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseQuotient(y); },
        [](const Matrix& g, const Matrix& x, const Matrix& y) -> Matrix {
            return -g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y));
        });
}

Var scale(const Var& a, double factor) {
    return a.tape().record(a.value() * factor, [a, factor](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g * factor);
    });
}

Var add_scalar(const Var& a, double offset) {
    Matrix out = a.value().array() + offset;
    return a.tape().record(std::move(out), [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g); });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
        if (&p.tape() != &parts.front().tape()) throw Error("concat_cols: operands on different tapes");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    std::vector<Var> held(parts.begin(), parts.end());
    return parts.front().tape().record(std::move(out), [held](Tape& tape, const Matrix& g) {
        Eigen::Index at = 0;
        for (const auto& p : held) {
            tape.accumulate(p, g.middleCols(at, p.cols()));
            at += p.cols();
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
        if (&p.tape() != &parts.front().tape()) throw Error("concat_rows: operands on different tapes");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Var> held(parts.begin(), parts.end());
    return parts.front().tape().record(std::move(out), [held](Tape& tape, const Matrix& g) {
        Eigen::Index at = 0;
        for (const auto& p : held) {
            tape.accumulate(p, g.middleRows(at, p.rows()));
            at += p.rows();
        }
    });
}

Var relu(const Var& a) {
    return a.tape().record(a.value().cwiseMax(0.0), [a](Tape& tape, const Matrix& g) {
        tape.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

Var exp(const Var& a) {
    Matrix out = a.value().array().exp();
    const int self = static_cast<int>(a.tape().size());
    return a.tape().record(std::move(out), [a, self](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g.cwiseProduct(tape.value(self)));
    });
}

Var log(const Var& a) {
    Matrix out = a.value().array().log();
    return a.tape().record(std::move(out), [a](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g.cwiseQuotient(a.value()));
    });
}

Var sqrt(const Var& a) {
    Matrix out = a.value().array().sqrt();
    const int self = static_cast<int>(a.tape().size());
    return a.tape().record(std::move(out), [a, self](Tape& tape, const Matrix& g) {
        tape.accumulate(a, (0.5 * g.array() / tape.value(self).array()).matrix());
    });
}

Var tanh(const Var& a) {
    Matrix out = a.value().array().tanh();
    const int self = static_cast<int>(a.tape().size());
    return a.tape().record(std::move(out), [a, self](Tape& tape, const Matrix& g) {
        const auto y = tape.value(self).array();
        tape.accumulate(a, (g.array() * (1.0 - y * y)).matrix());
    });
}

Var pow(const Var& a, double exponent) {
    Matrix out = a.value().array().pow(exponent);
    return a.tape().record(std::move(out), [a, exponent](Tape& tape, const Matrix& g) {
        if (exponent == 0.0) return;
        // Zero subgradient at a = 0 where a^(p-1) is unbounded.
        Matrix d = (a.value().array() == 0.0).select(0.0, exponent * a.value().array().pow(exponent - 1.0));
        tape.accumulate(a, g.cwiseProduct(d));
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
    return a.tape().record(std::move(out), [a, lo, hi](Tape& tape, const Matrix& g) {
        const auto x = a.value().array();
        tape.accumulate(a, ((x >= lo) && (x <= hi)).select(g, 0.0));
    });
}

Var sum(const Var& a) {
    return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), [a](Tape& tape, const Matrix& g) {
        tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
    return a.tape().record(a.value().colwise().sum(), [a](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g.replicate(a.rows(), 1));
    });
}

Var mean_rows(const Var& a) {
    return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var max_rows(const Var& a) {
    const Matrix& v = a.value();
    if (v.rows() == 0) throw ShapeError("max_rows: empty operand");
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.cols()));
    Matrix out(1, v.cols());
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < v.rows(); ++r) {
            if (v(r, c) > v(best, c)) best = r;
        }
        arg[static_cast<std::size_t>(c)] = best;
        out(0, c) = v(best, c);
    }
    return a.tape().record(std::move(out), [a, arg](Tape& tape, const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        for (Eigen::Index c = 0; c < d.cols(); ++c) d(arg[static_cast<std::size_t>(c)], c) = g(0, c);
        tape.accumulate(a, d);
    });
}

Var sum_cols(const Var& a) {
    return a.tape().record(a.value().rowwise().sum(), [a](Tape& tape, const Matrix& g) {
        tape.accumulate(a, g.replicate(1, a.cols()));
    });
}

Var max_cols(const Var& a) {
    const Matrix& v = a.value();
    if (v.cols() == 0) throw ShapeError("max_cols: empty operand");
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.rows()));
    Matrix out(v.rows(), 1);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < v.cols(); ++c) {
            if (v(r, c) > v(r, best)) best = c;
        }
        arg[static_cast<std::size_t>(r)] = best;
        out(r, 0) = v(r, best);
    }
    return a.tape().record(std::move(out), [a, arg](Tape& tape, const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, arg[static_cast<std::size_t>(r)]) = g(r, 0);
        tape.accumulate(a, d);
    });
}

SparseMatrix gather_matrix(std::span<const int> rows, Eigen::Index source_rows) {
    SparseMatrix s(static_cast<Eigen::Index>(rows.size()), source_rows);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= source_rows) {
            throw ShapeError("gather_matrix: row index " + std::to_string(rows[i]) + " out of range");
        }
        trips.emplace_back(static_cast<int>(i), rows[i], 1.0);
    }
    s.setFromTriplets(trips.begin(), trips.end());
    return s;
}

} // namespace ad

// ---------------------------------------------------------------------------
// Drivers

ForwardBackward forward_backward(const Objective& f, const ParamStore& params) {
    Tape tape(params);
    Var loss = f(tape);
    ForwardBackward out;
    out.value = loss.scalar();
    out.grads = tape.backward(loss);
    return out;
}

double evaluate(const Objective& f, const ParamStore& params) {
    Tape tape(params);
    return f(tape).scalar();
}

double grad_check(const Objective& f, ParamStore& params, double eps, int samples, std::uint64_t seed) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw Error("grad_check: eps must lie in [1e-7, 1e-3]");
    }
    const ForwardBackward analytic = forward_backward(f, params);

    std::vector<std::pair<std::string, Eigen::Index>> coords;
    for (const auto& name : params.names()) {
        for (Eigen::Index i = 0; i < params.value(name).size(); ++i) coords.emplace_back(name, i);
    }
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, Eigen::Index>> picked;
    std::sample(coords.begin(), coords.end(), std::back_inserter(picked),
                static_cast<std::size_t>(std::max(samples, 0)), rng);

    double worst = 0.0;
    for (const auto& [name, idx] : picked) {
        double& x = params.value(name).data()[idx];
        const double saved = x;
        x = saved + eps;
        const double plus = evaluate(f, params);
        x = saved - eps;
        const double minus = evaluate(f, params);
        x = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            throw NumericError("grad_check: non-finite loss when perturbing '" + name + "'");
        }
        const double numeric = (plus - minus) / (2.0 * eps);
        const double exact = analytic.grads.at(name).data()[idx];
        const double rel = std::abs(exact - numeric) / std::max(1e-12, std::abs(exact) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

void adam_step(ParamStore& params, const GradMap& grads, double lr, const AdamSettings& s) {
    if (!(lr >= 0.0)) throw Error("adam_step: learning rate must be non-negative");
    for (const auto& [name, g] : grads) {
        auto& e = params.entry(name);
        if (g.rows() != e.value.rows() || g.cols() != e.value.cols()) {
            throw ShapeError("adam_step: gradient for '" + name + "' has shape " + shape_str(g.rows(), g.cols()) +
                             ", parameter has " + shape_str(e.value.rows(), e.value.cols()));
        }
        if (!g.allFinite()) {
            throw NumericError("adam_step: non-finite gradient for '" + name + "'");
        }
    }
    for (const auto& [name, g] : grads) {
        auto& e = params.entry(name);
        e.steps += 1;
        e.first_moment = s.beta1 * e.first_moment + (1.0 - s.beta1) * g;
        e.second_moment = s.beta2 * e.second_moment + (1.0 - s.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(e.steps));
        const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(e.steps));
        e.value.array() -= lr * (e.first_moment.array() / c1) / ((e.second_moment.array() / c2).sqrt() + s.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    nlohmann::json entries = nlohmann::json::object();
    for (const auto& name : params.names()) {
        const Matrix& v = params.value(name);
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(v.size()));
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c) values.push_back(v(r, c));
        entries[name] = {{"shape", {v.rows(), v.cols()}}, {"values", values}};
    }
    j["params"] = std::move(entries);
    j["order"] = params.names();
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << j.dump(1) << '\n';
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    if (j.value("version", std::string{}) != kCheckpointVersion) {
        throw DataError("checkpoint " + path.string() + ": unsupported version");
    }
    ParamStore store;
    const auto& entries = j.at("params");
    std::vector<std::string> order;
    if (j.contains("order")) {
        order = j.at("order").get<std::vector<std::string>>();
    } else {
        for (const auto& [name, _] : entries.items()) order.push_back(name);
    }
    for (const auto& name : order) {
        const auto& e = entries.at(name);
        const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
        const auto values = e.at("values").get<std::vector<double>>();
        if (shape.size() != 2 || static_cast<std::size_t>(shape[0] * shape[1]) != values.size()) {
            throw DataError("checkpoint " + path.string() + ": bad shape for '" + name + "'");
        }
        Matrix m(shape[0], shape[1]);
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[k++];
        store.add(name, std::move(m));
    }
    return store;
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

} // namespace ccgl
