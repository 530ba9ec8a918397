#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dfpl {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major batch of samples: one row per sample.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatXd = MatX<double>;
using VecXd = VecX<double>;
using TensorXd = Tensor<double>;

using ClassId = std::uint32_t;
using ClientId = std::uint32_t;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not chain, prototype dimensions that disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Violated operation precondition (bad argument value).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A value left the finite range.
class NumericError : public Error {
 public:
  using Error::Error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace dfpl
