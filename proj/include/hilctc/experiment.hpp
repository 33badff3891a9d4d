#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hilctc/cluster.hpp"
#include "hilctc/dataset.hpp"
#include "hilctc/hil.hpp"
#include "hilctc/reduce.hpp"

namespace hilctc {

enum class PcaScope { TrainingPool, LabeledTraining };

struct PipelineConfig {
  int pca_components = 32;
  PcaScope pca_scope = PcaScope::TrainingPool;
  ProjectionParams projection;
  int min_cluster_size = 50;
  std::optional<int> min_samples;  // defaults to min_cluster_size
  double hidden_label_fraction = 0.0;  // training labels withheld into the unlabeled pool
  bool noise_filter = false;
  std::optional<std::uint64_t> seed;  // split, projection and hidden labels; defaults to the run seed
};

struct SplitConfig {
  int train_patients = 0;
  int test_patients = 0;
  int holdout_patients = 0;
};

/// Everything a run needs, as read from a JSON config file.
struct ExperimentConfig {
  std::string kind = "scenario1";  // scenario1 | scenario2 | realworld
  std::optional<std::uint64_t> seed;
  std::optional<std::string> manifest;
  std::optional<SyntheticSpec> synthetic;
  SplitConfig split;
  PipelineConfig pipeline;
  HilConfig hil;
  std::optional<int> main_cluster;
  std::optional<int> target_cluster;
  long scripted_ms_per_label = 1000;
};

/// Parses and validates; errors name the offending field as a JSON pointer.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json config_json(const ExperimentConfig& config);
nlohmann::json config_json(const HilConfig& config);
nlohmann::json config_json(const PipelineConfig& config);
nlohmann::json config_json(const SvmConfig& config);
nlohmann::json config_json(const SyntheticSpec& spec);

struct PipelineResult {
  DatasetSplit split;
  PcaModel pca;
  std::optional<SvmModel> noise_filter;
  std::size_t noise_dropped = 0;
  Projection2D projection;  // rows aligned with data
  ClusterModel clusters;
  std::shared_ptr<HilData> data;
  std::vector<CellRecord> records;  // training + test, aligned with data
  std::vector<CellRecord> holdout;
};

/// PCA on the training pool, joint 2-D projection and clustering of training
/// and test cells; hold-out patients bypass clustering.
PipelineResult run_pipeline(const std::vector<CellRecord>& records, const DatasetSplit& split,
                            const PipelineConfig& config, std::uint64_t seed);

/// Loads or generates records, splits, and runs the pipeline (seeded by
/// `config.pipeline.seed` when set, else `seed`).
PipelineResult prepare_experiment(const ExperimentConfig& config, std::uint64_t seed);

/// Protocol driver for the configured kind, before its first loop.
ProtocolRun start_protocol(const ExperimentConfig& config, const PipelineResult& prepared, std::uint64_t seed);

/// The canonical report text for a run (CLI files and HTTP bodies alike). The
/// experiment config is echoed with the effective seed filled in.
std::string render_report(const RunReport& report, ExperimentConfig config);

/// Runs the configured protocol. Real-world runs use a scripted oracle that
/// confirms ground truth for every presented candidate.
RunReport run_experiment(const ExperimentConfig& config, const PipelineResult& prepared, std::uint64_t seed);

}  // namespace hilctc
