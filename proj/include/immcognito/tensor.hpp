#pragma once

#include <Eigen/Dense>

namespace immcognito {

// Row-major so that one row is one node or one edge.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace immcognito
