#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace imaml {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace imaml
