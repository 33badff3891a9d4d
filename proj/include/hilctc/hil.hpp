#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "hilctc/classify.hpp"
#include "hilctc/dataset.hpp"
#include "hilctc/metrics.hpp"

namespace hilctc {

enum class Strategy { ClusterSpecific, Random };
enum class Steering { McCvTrainingPool, TestSet };
enum class LabelSource { SimulatedOracle, Human };
enum class MergePolicy { AllLabels, ConfirmedCtcOnly };
enum class Role { TrainLabeled, TrainUnlabeled, Test };

std::string_view to_string(Strategy s) noexcept;
std::string_view to_string(Steering s) noexcept;
std::string_view to_string(LabelSource s) noexcept;
std::string_view to_string(Role r) noexcept;

// ---------------------------------------------------------------------------
// Sampling

struct SamplingPlan {
  std::map<int, double> scores;       // s_i
  std::map<int, double> frequencies;  // c_i
  long budget = 0;
  std::map<int, long> allocation;
};

/// c_i = (1 - s_i) / sum_j (1 - s_j); uniform when every s_i is 1.
std::map<int, double> sampling_frequencies(const std::map<int, double>& scores);

/// Largest-remainder integerisation of c_i * budget; quota beyond a cluster's
/// pool is redistributed in proportion to c_i among clusters with room left.
std::map<int, long> allocate_budget(const std::map<int, double>& frequencies, long budget,
                                    const std::map<int, long>& pool_sizes);

// ---------------------------------------------------------------------------
// Experiment data and loop state

/// Read-only view of one experiment: classifier features, roles, clusters and
/// whatever ground truth is known (test labels, simulated oracle labels).
struct HilData {
  std::vector<std::string> ids;
  Eigen::MatrixXd features;
  std::vector<std::optional<Label>> truth;
  std::vector<int> cluster;
  std::vector<Role> role;
  std::vector<std::string> patient;

  std::size_t size() const { return ids.size(); }
  std::size_t row_of(const std::string& id) const;
  std::vector<std::size_t> rows_with(Role r) const;
  void build_index();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

struct LabelEvent {
  std::string cell_id;
  Label assigned_label = Label::NonCtc;
  LabelSource source = LabelSource::SimulatedOracle;
  int loop_index = 0;
  std::optional<std::string> timestamp;  // RFC 3339 UTC; absent for simulated labels
  long elapsed_ms = 0;

  bool operator==(const LabelEvent&) const = default;
};

struct HilConfig {
  SvmConfig svm;
  double threshold = 0.5;
  int loops = 4;
  long budget = 100;
  long initial_pool = 100;
  Steering steering = Steering::McCvTrainingPool;
  int mc_folds = 100;
  double mc_train_fraction = 0.9;
  bool include_background = false;
  double scenario2_initial_fraction = 0.2;
  double scenario2_other_fraction = 0.8;
  double scenario2_random_pool_fraction = 0.2;
  long relabel_pool_size = 1000;
  long label_budget_ms = 300'000;
  bool review_most_likely_first = true;  // queue order among predicted NON_CTC
};

struct HilRunState {
  std::shared_ptr<const HilData> data;
  Strategy strategy = Strategy::ClusterSpecific;
  MergePolicy merge = MergePolicy::AllLabels;
  int loop_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> training_pool;  // rows, insertion order
  std::vector<Label> training_labels;      // aligned with training_pool
  std::vector<std::size_t> relabel_pool;   // rows
  std::vector<ClusterMetrics> metrics_history;
  std::vector<std::optional<ClusterMetrics>> steering_history;
  std::vector<SamplingPlan> plans;
  std::vector<LabelEvent> event_log;
  std::vector<long> added_per_loop;
  std::shared_ptr<const SvmModel> model;  // fitted on the current training pool
};

/// A drawn batch awaiting labels.
struct PendingStep {
  int loop_index = 0;  // loop being executed
  SamplingPlan plan;
  std::optional<ClusterMetrics> steering;
  std::vector<std::size_t> candidates;  // presentation order
  std::vector<double> probabilities;    // CTC probability under the current model
  std::optional<long> max_confirmed;    // stop accepting once this many CTCs are confirmed
};

struct LabelRequest {
  int loop_index = 0;
  std::vector<std::string> cell_ids;
  std::vector<double> probabilities;
  long budget_ms = 0;
};

class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  /// Events in labeling order. Candidates the oracle did not reach are omitted.
  virtual std::vector<LabelEvent> label(const LabelRequest& request) = 0;
};

/// Ground-truth labels for every candidate, instantly.
class SimulatedOracle final : public LabelOracle {
 public:
  explicit SimulatedOracle(std::shared_ptr<const HilData> data) : data_(std::move(data)) {}
  std::vector<LabelEvent> label(const LabelRequest& request) override;

 private:
  std::shared_ptr<const HilData> data_;
};

/// Deterministic stand-in for a human: `decide` labels each candidate (nullopt
/// skips it) at `ms_per_item`; the session ends when the budget runs out.
class ScriptedOracle final : public LabelOracle {
 public:
  using Decide = std::function<std::optional<Label>(const std::string& cell_id)>;
  ScriptedOracle(Decide decide, long ms_per_item) : decide_(std::move(decide)), ms_per_item_(ms_per_item) {}
  std::vector<LabelEvent> label(const LabelRequest& request) override;

 private:
  Decide decide_;
  long ms_per_item_;
};

/// Fits the classifier on the state's pool and records test-set metrics as loop 0.
HilRunState hil_init(std::shared_ptr<const HilData> data, Strategy strategy, MergePolicy merge,
                     std::vector<std::size_t> training_pool, std::vector<Label> training_labels,
                     std::vector<std::size_t> relabel_pool, const HilConfig& config, std::uint64_t seed);

/// Plan and draw for the next loop (cluster-specific or random per the state's strategy).
PendingStep plan_step(const HilRunState& state, const HilConfig& config);

/// Relabel-pool rows the current model predicts NON_CTC, ordered by CTC
/// probability (descending unless configured otherwise) or shuffled.
PendingStep plan_review_step(const HilRunState& state, const HilConfig& config, bool shuffle,
                             std::optional<long> max_confirmed);

/// Merge labels into a new state, refit and evaluate. Events for cells that were
/// not candidates, repeats, and events past the label budget are rejected.
HilRunState commit_step(const HilRunState& state, const PendingStep& step, const std::vector<LabelEvent>& events,
                        const HilConfig& config);

/// plan -> oracle -> commit. The input state is untouched if the oracle throws.
HilRunState hil_step(const HilRunState& state, LabelOracle& oracle, const HilConfig& config);

/// Throws InvalidState if pool conservation or disjointness is violated.
void check_state_invariants(const HilRunState& state, const std::vector<std::size_t>& initial_pool);

// ---------------------------------------------------------------------------
// Protocols

struct ArmReport {
  Strategy strategy = Strategy::ClusterSpecific;
  std::vector<ClusterMetrics> test_metrics;  // index = loop
  std::vector<std::optional<ClusterMetrics>> steering_metrics;
  std::vector<SamplingPlan> plans;
  std::vector<LabelEvent> events;
  std::vector<long> training_sizes;
  std::vector<long> added_per_loop;
};

struct RunReport {
  std::string kind;  // scenario1 | scenario2 | realworld
  std::uint64_t seed = 0;
  std::optional<int> focus_cluster;  // main / target cluster
  HilConfig config;
  ArmReport cluster_specific;
  ArmReport random;
  std::shared_ptr<const SvmModel> final_model;  // cluster-specific arm after the last loop
};

ArmReport arm_report(const HilRunState& state);

/// Step-wise driver for one protocol run with both arms. The library runners
/// below and the HTTP service both go through it.
class ProtocolRun {
 public:
  static ProtocolRun scenario1(std::shared_ptr<const HilData> data, const HilConfig& config, std::uint64_t seed);
  static ProtocolRun scenario2(std::shared_ptr<const HilData> data, int main_cluster, const HilConfig& config,
                               std::uint64_t seed);
  /// Target defaults to the cluster with the lowest initial test-set F1.
  static ProtocolRun realworld(std::shared_ptr<const HilData> data, std::optional<int> target_cluster,
                               const HilConfig& config, std::uint64_t seed);

  const std::string& kind() const { return kind_; }
  const HilConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  int loop_index() const { return cluster_arm_.loop_index; }
  bool finished() const { return loop_index() >= config_.loops; }
  std::optional<int> focus_cluster() const { return focus_; }
  const HilRunState& cluster_arm() const { return cluster_arm_; }
  const HilRunState& random_arm() const { return random_arm_; }

  /// Simulated protocols: one loop on both arms with ground-truth labels.
  void advance();

  /// Real-world: the cluster arm's next candidates, most suspicious first.
  PendingStep review_step() const;
  /// Real-world: commits the expert's labels for the cluster arm, then runs the
  /// random arm until it has the same number of confirmed CTCs.
  void commit_review(const PendingStep& step, const std::vector<LabelEvent>& events, LabelOracle& random_oracle);
  /// Real-world repeat runs: the cluster arm's pool becomes exactly these cells.
  void replace_cluster_pool(const std::vector<std::string>& cell_ids);

  RunReport report() const;

 private:
  ProtocolRun() = default;
  void check_invariants() const;

  std::string kind_;
  HilConfig config_;
  std::uint64_t seed_ = 0;
  std::optional<int> focus_;
  long per_loop_ = 0;  // scenario 2 draw size
  HilRunState cluster_arm_;
  HilRunState random_arm_;
  std::vector<std::size_t> cluster_union_;
  std::vector<std::size_t> random_union_;
};

RunReport run_scenario1(std::shared_ptr<const HilData> data, const HilConfig& config, std::uint64_t seed);
RunReport run_scenario2(std::shared_ptr<const HilData> data, int main_cluster, const HilConfig& config,
                        std::uint64_t seed);

/// Labels from an earlier run, reused with their per-loop counts and shuffled order.
struct RealworldReplay {
  std::vector<std::vector<std::string>> confirmed_per_loop;
};

/// `oracle` labels the cluster arm's candidates within the time budget and the
/// random arm's candidates until the confirmation counts match.
RunReport run_realworld(std::shared_ptr<const HilData> data, std::optional<int> target_cluster, LabelOracle& oracle,
                        const HilConfig& config, std::uint64_t seed,
                        const std::optional<RealworldReplay>& replay = std::nullopt);

/// Cluster with the lowest test-set F1 in the given metrics (background excluded).
int weakest_cluster(const ClusterMetrics& metrics);

// ---------------------------------------------------------------------------
// Final-model application

struct Suggestion {
  std::string cell_id;
  std::string patient_id;
  double probability = 0.0;
  std::optional<std::string> cartridge_id;
  std::optional<std::pair<double, double>> cartridge_xy;
};

struct PatientRow {
  long suggested = 0;
  std::optional<long> confirmed;
  std::optional<double> ppv;
};

struct ApplicationReport {
  double threshold = 0.5;
  double dedup_radius = 5.0;
  std::vector<Suggestion> suggestions;  // descending probability
  long duplicates_removed = 0;
  std::map<std::string, PatientRow> per_patient;
};

ApplicationReport apply_final_model(const FinalModel& model, const std::vector<CellRecord>& holdout, double threshold,
                                    double dedup_radius = 5.0);

/// Fills confirmed counts and PPV per patient. Throws EmptySuggestion when nothing was suggested.
void attach_confirmations(ApplicationReport& report, const std::set<std::string>& confirmed_ids);

}  // namespace hilctc
