#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace hilctc {

/// k nearest neighbours of every row, self excluded, ordered by (distance, index).
struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // n*k, row-major
  std::vector<double> distances;     // n*k, row-major

  std::size_t size() const { return k == 0 ? 0 : indices.size() / k; }
  std::size_t neighbor(std::size_t i, std::size_t r) const { return indices[i * k + r]; }
  double distance(std::size_t i, std::size_t r) const { return distances[i * k + r]; }
};

/// Rows above this count switch from brute force to the k-d tree.
inline constexpr std::size_t kBruteForceKnnLimit = 20000;

KnnGraph knn_brute_force(const Eigen::MatrixXd& points, std::size_t k);
KnnGraph knn_kd_tree(const Eigen::MatrixXd& points, std::size_t k);
KnnGraph knn(const Eigen::MatrixXd& points, std::size_t k);

}  // namespace hilctc
