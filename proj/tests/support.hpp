#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hilctc/dataset.hpp"
#include "hilctc/random.hpp"

namespace testing {

inline Eigen::MatrixXd random_matrix(hilctc::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

/// Two isotropic blobs of `per_blob` points with unit spread, `gap` apart on the first axis.
inline Eigen::MatrixXd two_blobs(hilctc::Rng& rng, Eigen::Index per_blob, Eigen::Index dim, double gap) {
  Eigen::MatrixXd m = random_matrix(rng, 2 * per_blob, dim);
  for (Eigen::Index i = per_blob; i < 2 * per_blob; ++i) m(i, 0) += gap;
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hilctc-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small five-blob benchmark-like dataset: fast enough for unit tests.
inline hilctc::SyntheticSpec small_spec(std::uint64_t seed = 3) {
  hilctc::SyntheticSpec s;
  s.n_clusters = 3;
  s.points_per_cluster = 120;
  s.dim = 4;
  s.spread = {1.0};
  s.class_overlap = {0.05, 0.8, 0.05};
  s.center_distance = 8.0;
  s.n_patients = 10;
  s.seed = seed;
  return s;
}

/// Experiment config over small_spec data; two short loops, quick MC-CV.
inline nlohmann::json small_experiment(const std::string& kind = "scenario1") {
  nlohmann::json j = {
      {"kind", kind},
      {"seed", 1},
      {"synthetic",
       {{"n_clusters", 3},
        {"points_per_cluster", 120},
        {"dim", 4},
        {"spread", {1.0}},
        {"class_overlap", {0.05, 0.8, 0.05}},
        {"center_distance", 8.0},
        {"n_patients", 10},
        {"seed", 3}}},
      {"split", {{"train_patients", 6}, {"test_patients", 3}, {"holdout_patients", 1}}},
      {"pipeline", {{"pca_components", 4}, {"min_cluster_size", 20}, {"seed", 7}}},
      {"hil", {{"loops", 2}, {"budget", 20}, {"initial_pool", 40}, {"mc_folds", 5}}},
  };
  if (kind == "scenario2") j["main_cluster"] = 0;
  if (kind == "realworld") j["pipeline"]["hidden_label_fraction"] = 0.5;
  return j;
}

}  // namespace testing
