#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hilctc {

inline constexpr int kBackground = -1;

struct MstEdge {
  std::size_t a;
  std::size_t b;
  double weight;  // mutual reachability distance
};

/// One row of the condensed hierarchy. Node ids >= N are clusters (N is the
/// root); ids < N are points that fell out of `parent` at `lambda`.
struct CondensedRow {
  std::size_t parent;
  std::size_t child;
  double lambda;
  std::size_t size;
};

struct ClusterModel {
  std::vector<int> labels;  // -1 = background
  int min_cluster_size = 0;
  int min_samples = 0;
  std::map<int, double> stabilities;  // keyed by flat cluster id
  std::vector<MstEdge> mst_edges;
  std::vector<CondensedRow> condensed_tree;
  std::vector<std::string> point_ids;  // optional, aligned with labels

  int cluster_count() const;
};

/// Distance from each point to its min_samples-th nearest other point.
std::vector<double> core_distances(const Eigen::MatrixXd& points, int min_samples);

/// max(core_i, core_j, |p_i - p_j|).
double mutual_reachability(const Eigen::MatrixXd& points, const std::vector<double>& core, std::size_t i,
                           std::size_t j);

/// Prim's algorithm on the complete mutual-reachability graph, ties to the lowest index.
std::vector<MstEdge> mutual_reachability_mst(const Eigen::MatrixXd& points, const std::vector<double>& core);

/// Mutual reachability MST, single-linkage hierarchy, condensed tree and
/// excess-of-mass extraction. Fewer points than min_cluster_size yields
/// all-background rather than an error.
ClusterModel hdbscan_fit(const Eigen::MatrixXd& points, int min_cluster_size, int min_samples,
                         std::vector<std::string> point_ids = {});

/// Cluster id for each requested cell. Throws UnknownId for ids the model never saw.
std::unordered_map<std::string, int> assign_clusters(const ClusterModel& model,
                                                     const std::vector<std::string>& ids);

/// Condensed tree, stabilities and parameters as a JSON document.
nlohmann::json condensed_tree_json(const ClusterModel& model);

}  // namespace hilctc
