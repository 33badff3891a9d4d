#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hilctc/classify.hpp"
#include "hilctc/dataset.hpp"

namespace hilctc {

/// Confusion counts with CTC as the positive class.
struct Confusion {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
  long total() const { return tp + fp + fn + tn; }
};

struct Scores {
  Confusion counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static Scores from(const Confusion& c);
};

struct ClusterMetrics {
  std::map<int, Scores> per_cluster;  // includes -1 when background points were evaluated
  Scores total;
  std::map<int, long> n_points;
};

Confusion confusion(std::span<const Label> preds, std::span<const Label> truths);

/// Harmonic mean; 0 when both inputs are 0.
double f1_score(double precision, double recall);
double f1_score(const Confusion& c);

ClusterMetrics per_cluster_metrics(std::span<const Label> preds, std::span<const Label> truths,
                                   std::span<const std::string> ids,
                                   const std::unordered_map<std::string, int>& cluster_of);
/// Same, with cluster ids already aligned to the predictions.
ClusterMetrics per_cluster_metrics(std::span<const Label> preds, std::span<const Label> truths,
                                   std::span<const int> clusters);

struct McCvReport {
  int folds = 0;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  ClusterMetrics pooled;
  std::vector<Confusion> fold_totals;
};

/// Monte-Carlo cross-validation: `folds` seeded stratified train/validation
/// splits, one SVM per fold, validation predictions pooled and scored per cluster.
McCvReport mc_cross_validate(const Eigen::MatrixXd& X, std::span<const Label> labels, std::span<const int> clusters,
                             const SvmConfig& config, int folds, double train_fraction, std::uint64_t seed,
                             double threshold = 0.5);

double positive_predictive_value(long suggested, long confirmed);

void to_json(nlohmann::json& j, const Confusion& c);
void to_json(nlohmann::json& j, const Scores& s);
void to_json(nlohmann::json& j, const ClusterMetrics& m);
void to_json(nlohmann::json& j, const McCvReport& r);

}  // namespace hilctc
