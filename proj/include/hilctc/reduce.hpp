#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hilctc {

struct PcaModel {
  Eigen::VectorXd mean;                // length D
  Eigen::MatrixXd components;          // K x D, orthonormal rows
  Eigen::VectorXd explained_variance;  // length K, non-increasing
  bool rank_deficient = false;         // covariance rank < K at fit time

  Eigen::Index input_dim() const { return mean.size(); }
  Eigen::Index output_dim() const { return components.rows(); }
};

/// Top-K eigenvectors of the sample covariance (N - 1 normalisation). Each
/// component is signed so that its largest-magnitude entry is positive.
PcaModel pca_fit(const Eigen::MatrixXd& X, Eigen::Index k);
Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& X);
Eigen::MatrixXd pca_reconstruct(const PcaModel& model, const Eigen::MatrixXd& projected);

void to_json(nlohmann::json& j, const PcaModel& model);
void from_json(const nlohmann::json& j, PcaModel& model);

struct ProjectionParams {
  int n_neighbors = 15;
  double min_dist = 0.1;
  double spread = 1.0;
  int n_epochs = 200;
  int negative_sample_rate = 5;
  double learning_rate = 1.0;
};

struct Projection2D {
  Eigen::MatrixXd coords;  // N x 2
  ProjectionParams params;
  std::uint64_t seed = 0;
  std::vector<std::string> source_ids;
  bool spectral_init = true;  // false when the random fallback was used
};

/// Neighbour-embedding layout of X into two dimensions (UMAP-style fuzzy
/// graph + seeded SGD on the attractive/repulsive cross-entropy).
Projection2D project_2d(const Eigen::MatrixXd& X, const ProjectionParams& params, std::uint64_t seed,
                        std::vector<std::string> source_ids = {});

/// Curve parameters (a, b) of the low-dimensional similarity 1 / (1 + a d^(2b)).
std::pair<double, double> fit_curve_ab(double spread, double min_dist);

/// Writes "cell_id,x,y,cluster". `clusters` may be empty, in which case -1 is written.
void write_projection_csv(std::ostream& out, const Projection2D& proj, const std::vector<int>& clusters);
void write_projection_csv(const std::filesystem::path& path, const Projection2D& proj,
                          const std::vector<int>& clusters);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace hilctc
