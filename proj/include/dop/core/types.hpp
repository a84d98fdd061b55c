#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace dop {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Discrete joint action, one index per agent.
using JointDiscrete = std::vector<int>;
// Continuous joint action, one vector per agent.
using JointContinuous = std::vector<Vector>;

}  // namespace dop
