#ifndef CCGL_COMMON_HPP
#define CCGL_COMMON_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <stdexcept>
#include <string>

namespace ccgl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data (files, manifests, matrices).
class DataError : public Error {
public:
    using Error::Error;
};

/// Incompatible operand shapes inside a computation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: singular systems, non-finite values, non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value; the message starts with the field path.
class ValidationError : public Error {
public:
    using Error::Error;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

} // namespace ccgl

#endif // CCGL_COMMON_HPP
