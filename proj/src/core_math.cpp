#include "denoisebid/core_math.hpp"

#include <algorithm>
#include <numeric>

namespace denoisebid {

QuadratureGrid gh_grid(int order) {
  if (order < 1 || order > kMaxQuadratureOrder)
    throw std::domain_error("gh_grid: order must lie in [1, " + std::to_string(kMaxQuadratureOrder) + "]");

  // Jacobi matrix of the physicists' Hermite recurrence: zero diagonal,
  // off-diagonal sqrt(k / 2).
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = std::sqrt(0.5 * k);
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);

  QuadratureGrid grid;
  grid.order = order;
  grid.nodes.resize(order);
  grid.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    grid.nodes[i] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    grid.weights[i] = v0 * v0;
  }

  // Exact symmetry: average mirrored pairs, pin the middle node to zero.
  for (int i = 0; i < order / 2; ++i) {
    const int j = order - 1 - i;
    const double a = 0.5 * (grid.nodes[j] - grid.nodes[i]);
    const double w = 0.5 * (grid.weights[i] + grid.weights[j]);
    grid.nodes[i] = -a;
    grid.nodes[j] = a;
    grid.weights[i] = grid.weights[j] = w;
  }
  if (order % 2 == 1) grid.nodes[order / 2] = 0.0;

  const double total = std::accumulate(grid.weights.begin(), grid.weights.end(), 0.0);
  for (double& w : grid.weights) w /= total;
  return grid;
}

}  // namespace denoisebid
