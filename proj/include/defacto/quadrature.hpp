#pragma once

#include <Eigen/Dense>
#include <utility>

namespace defacto {

// Gauss-Hermite rule normalized for standard-normal expectations:
// E[f(Z)] ~= sum_i w_i f(z_i), weights summing to one. Nodes and weights
// come from the Golub-Welsch eigendecomposition of the Jacobi matrix.
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n);

}  // namespace defacto
