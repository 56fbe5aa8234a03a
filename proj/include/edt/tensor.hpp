#pragma once

#include <Eigen/Core>

#include <sstream>
#include <string>
#include <string_view>

#include "edt/error.hpp"

namespace edt {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense rank-2 tensor, row-major. Vectors are stored as n x 1 or 1 x n.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Boolean mask with the same layout as Matrix.
using Mask = MatrixX<bool>;

template <typename Derived>
std::string shape_str(const Eigen::EigenBase<Derived>& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, std::string_view what) {
  if (!all_finite(m)) {
    throw NumericError("non-finite value produced by " + std::string(what));
  }
}

template <typename A, typename B>
void require_same_shape(const Eigen::EigenBase<A>& a, const Eigen::EigenBase<B>& b,
                        std::string_view what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

}  // namespace edt
