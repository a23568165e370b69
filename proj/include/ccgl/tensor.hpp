#ifndef CCGL_TENSOR_HPP
#define CCGL_TENSOR_HPP

#include "ccgl/common.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ccgl {

/// Named learnable tensors plus their Adam moments.
class ParamStore {
public:
    struct Entry {
        Matrix value;
        Matrix first_moment;
        Matrix second_moment;
        std::int64_t steps = 0;
    };

    /// Registers a new parameter; throws if the name already exists.
    void add(const std::string& name, Matrix init);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Matrix& value(const std::string& name) const { return entry(name).value; }
    Matrix& value(const std::string& name) { return entry(name).value; }
    const Entry& entry(const std::string& name) const;
    Entry& entry(const std::string& name);

    /// Names in registration order.
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    std::size_t coefficient_count() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Entry> entries_;
};

using GradMap = std::map<std::string, Matrix>;

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode recording of one forward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep computes all adjoints. A Tape reads parameter
/// values from its ParamStore when `param` is first called for a name and is
/// meant to be used once, from one thread.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& upstream)>;

    explicit Tape(const ParamStore& params) : params_(&params) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var param(const std::string& name);

    /// Appends a node; `backward` receives the node's adjoint.
    Var record(Matrix value, Backward backward);

    /// Accumulates `delta` into the adjoint of `v`.
    void accumulate(const Var& v, const Matrix& delta);

    /// Runs the reverse sweep from a 1x1 loss. Every parameter of the store
    /// appears in the result; untouched ones get zeros.
    GradMap backward(const Var& loss);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    std::size_t size() const { return nodes_.size(); }
    const ParamStore& params() const { return *params_; }

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        Backward backward;
    };

    const ParamStore* params_;
    std::vector<Node> nodes_;
    std::map<std::string, int> param_nodes_;
};

namespace ad {

// Supported primitives. Binary elementwise operations broadcast dimensions of
// size 1 on either operand (scalar, row vector, column vector).
Var matmul(const Var& a, const Var& b);
Var spmm(const SparseMatrix& s, const Var& x);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var pow(const Var& a, double exponent);
Var clamp(const Var& a, double lo, double hi);
Var sum(const Var& a);
Var mean(const Var& a);
/// Column-wise reductions over rows: R x C -> 1 x C.
Var sum_rows(const Var& a);
Var mean_rows(const Var& a);
Var max_rows(const Var& a);
/// Row-wise reductions over columns: R x C -> R x 1.
Var sum_cols(const Var& a);
Var max_cols(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

/// Selection matrix that gathers `rows` out of `source_rows` (S * X = X[rows]).
SparseMatrix gather_matrix(std::span<const int> rows, Eigen::Index source_rows);

} // namespace ad

using Objective = std::function<Var(Tape&)>;

struct ForwardBackward {
    double value = 0.0;
    GradMap grads;
};

/// Evaluates `f` on a fresh tape and differentiates it with respect to every
/// parameter in `params`.
ForwardBackward forward_backward(const Objective& f, const ParamStore& params);

/// Evaluates `f` without keeping the tape.
double evaluate(const Objective& f, const ParamStore& params);

/// Central-difference check on `samples` randomly chosen coordinates.
/// Returns max |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
/// Parameters are perturbed in place and restored before returning.
double grad_check(const Objective& f, ParamStore& params, double eps, int samples,
                  std::uint64_t seed);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every parameter named in `grads`.
void adam_step(ParamStore& params, const GradMap& grads, double lr, const AdamSettings& settings = {});

inline constexpr const char* kCheckpointVersion = "ccgl-ckpt-1";

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Glorot-uniform initialisation.
Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

} // namespace ccgl

#endif // CCGL_TENSOR_HPP
