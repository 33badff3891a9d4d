#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hilctc/dataset.hpp"
#include "hilctc/reduce.hpp"

namespace hilctc {

enum class ClassWeight { None, Balanced };

struct SvmConfig {
  double C = 1.0;
  std::optional<double> gamma;  // nullopt = "scale": 1 / (K * var(X))
  ClassWeight class_weight = ClassWeight::Balanced;
  bool break_ties = true;
  bool probability = true;
  double tolerance = 1e-3;
  long max_passes = 1'000'000;     // SMO iteration cap
  int calibration_folds = 3;
  double cache_mb = 10'000.0;      // kernel row cache budget
  std::uint64_t seed = 0;          // calibration fold assignment
};

struct PlattSigmoid {
  double A = 0.0;
  double B = 0.0;
};

/// Fitted RBF soft-margin classifier. The positive class is index 1 of `classes`.
struct SvmModel {
  Eigen::MatrixXd support_vectors;  // S x K
  Eigen::VectorXd dual_coefs;       // alpha_i * y_i
  double intercept = 0.0;
  double gamma = 1.0;
  std::optional<PlattSigmoid> platt;
  std::pair<std::string, std::string> classes{"NON_CTC", "CTC"};
  double C_negative = 1.0;  // effective box bounds
  double C_positive = 1.0;
  bool converged = true;
  long iterations = 0;
  SvmConfig config;

  Eigen::Index feature_dim() const { return support_vectors.cols(); }
};

/// Sequential minimal optimisation on the soft-margin dual with maximal-violating-pair
/// selection. `positive[i]` marks the class at `classes.second`.
SvmModel svm_fit(const Eigen::MatrixXd& X, std::span<const bool> positive, const SvmConfig& config);
SvmModel svm_fit(const Eigen::MatrixXd& X, std::span<const Label> labels, const SvmConfig& config);

Eigen::VectorXd decision_values(const SvmModel& model, const Eigen::MatrixXd& X);
Eigen::VectorXd predict_proba(const SvmModel& model, const Eigen::MatrixXd& X);
double platt_probability(const PlattSigmoid& sigmoid, double decision);

/// Positive iff probability >= threshold when calibrated; otherwise sign of the
/// decision value with |f| < 1e-12 going negative.
std::vector<bool> predict_positive(const SvmModel& model, const Eigen::MatrixXd& X, double threshold = 0.5);
std::vector<Label> predict(const SvmModel& model, const Eigen::MatrixXd& X, double threshold = 0.5);

/// Platt's sigmoid fit (Newton with backtracking, prior-corrected targets).
PlattSigmoid fit_platt(std::span<const double> decisions, std::span<const bool> positive);

/// gamma = scale resolution: 1 / (K * var(X)), var over every entry.
double resolve_gamma(const SvmConfig& config, const Eigen::MatrixXd& X);

/// Dual objective sum(alpha) - 1/2 alpha' Q alpha for a fitted model on its training data.
double dual_objective(const SvmModel& model);

/// Largest KKT violation of the fitted model over (X, y), measured as in the SMO stopping rule.
double kkt_residual(const SvmModel& model, const Eigen::MatrixXd& X, std::span<const bool> positive);

void to_json(nlohmann::json& j, const SvmModel& model);
void from_json(const nlohmann::json& j, SvmModel& model);

// Noise pre-filter: positive class = noisy.
SvmModel noise_filter_fit(const Eigen::MatrixXd& X_noisy, const Eigen::MatrixXd& X_clean, const SvmConfig& config);

struct NoiseFilterResult {
  std::vector<CellRecord> kept;
  std::size_t dropped = 0;
};

/// Drops records predicted noisy. `pca` (optional) maps embeddings to the filter's feature space.
NoiseFilterResult noise_filter_apply(const SvmModel& model, const std::vector<CellRecord>& records,
                                     const PcaModel* pca = nullptr, double threshold = 0.5);

/// PCA + classifier, the unit persisted and applied to hold-out patients.
struct FinalModel {
  PcaModel pca;
  SvmModel svm;
};

void to_json(nlohmann::json& j, const FinalModel& model);
void from_json(const nlohmann::json& j, FinalModel& model);

}  // namespace hilctc
