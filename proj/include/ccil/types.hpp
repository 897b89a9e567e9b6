#pragma once

#include <Eigen/Core>

namespace ccil {

using Index = Eigen::Index;

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <class S>
using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

// Default training scalar. Evaluation code and gradient checks instantiate
// the templated core with double where extra precision matters.
using Scalar = float;
using MatX = Matrix<Scalar>;
using VecX = Vector<Scalar>;

}  // namespace ccil
