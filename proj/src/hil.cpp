#include "hilctc/hil.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "hilctc/error.hpp"
#include "hilctc/random.hpp"
#include "hilctc/reduce.hpp"

namespace hilctc {

std::string_view to_string(Strategy s) noexcept {
  return s == Strategy::ClusterSpecific ? "cluster_specific" : "random";
}

std::string_view to_string(Steering s) noexcept {
  return s == Steering::McCvTrainingPool ? "mccv_training_pool" : "test_set";
}

std::string_view to_string(LabelSource s) noexcept {
  return s == LabelSource::Human ? "human" : "simulated_oracle";
}

std::string_view to_string(Role r) noexcept {
  switch (r) {
    case Role::TrainLabeled: return "train_labeled";
    case Role::TrainUnlabeled: return "train_unlabeled";
    case Role::Test: return "test";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

std::map<int, double> sampling_frequencies(const std::map<int, double>& scores) {
  if (scores.empty()) fail(ErrorKind::EmptyScores, "no cluster scores to turn into sampling frequencies");
  double total = 0.0;
  for (const auto& [id, s] : scores) {
    if (!(s >= 0.0 && s <= 1.0)) fail(ErrorKind::InvalidSpec, "score of cluster " + std::to_string(id) + " outside [0, 1]");
    total += 1.0 - s;
  }
  std::map<int, double> out;
  for (const auto& [id, s] : scores) {
    out[id] = total > 0.0 ? (1.0 - s) / total : 1.0 / static_cast<double>(scores.size());
  }
  return out;
}

std::map<int, long> allocate_budget(const std::map<int, double>& frequencies, long budget,
                                    const std::map<int, long>& pool_sizes) {
  if (budget < 0) fail(ErrorKind::InvalidSpec, "budget must be non-negative");
  std::map<int, long> alloc;
  std::map<int, long> room;
  long capacity = 0;
  for (const auto& [id, c] : frequencies) {
    alloc[id] = 0;
    auto it = pool_sizes.find(id);
    room[id] = it == pool_sizes.end() ? 0 : std::max(0L, it->second);
    capacity += room[id];
  }
  long remaining = std::min(budget, capacity);

  // Each round hands out `remaining` over clusters with room, proportionally to c_i,
  // by largest remainder; quota above a cluster's room spills into the next round.
  while (remaining > 0) {
    double weight = 0.0;
    std::vector<int> open;
    for (const auto& [id, c] : frequencies) {
      if (room[id] > 0) {
        open.push_back(id);
        weight += c;
      }
    }
    if (open.empty()) break;
    struct Share {
      int id;
      long whole;
      double frac;
    };
    std::vector<Share> shares;
    long handed = 0;
    for (int id : open) {
      const double exact = weight > 0.0 ? frequencies.at(id) / weight * static_cast<double>(remaining)
                                        : static_cast<double>(remaining) / static_cast<double>(open.size());
      const auto whole = static_cast<long>(std::floor(exact));
      shares.push_back({id, whole, exact - static_cast<double>(whole)});
      handed += whole;
    }
    std::stable_sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) { return a.frac > b.frac; });
    for (std::size_t i = 0; handed < remaining && i < shares.size(); ++i, ++handed) ++shares[i].whole;

    long given = 0;
    for (const auto& s : shares) {
      const long take = std::min(s.whole, room[s.id]);
      alloc[s.id] += take;
      room[s.id] -= take;
      given += take;
    }
    remaining -= given;
    if (given == 0) {
      // All open clusters got a zero share; give one each in id order.
      for (int id : open) {
        if (remaining == 0) break;
        ++alloc[id];
        --room[id];
        --remaining;
      }
    }
  }
  return alloc;
}

// ---------------------------------------------------------------------------

std::size_t HilData::row_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) fail(ErrorKind::UnknownId, "unknown cell '" + id + "'");
  return it->second;
}

std::vector<std::size_t> HilData::rows_with(Role r) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < role.size(); ++i) {
    if (role[i] == r) out.push_back(i);
  }
  return out;
}

void HilData::build_index() {
  const std::size_t n = ids.size();
  if (static_cast<std::size_t>(features.rows()) != n || truth.size() != n || cluster.size() != n || role.size() != n ||
      (!patient.empty() && patient.size() != n)) {
    fail(ErrorKind::LengthMismatch, "experiment arrays must have one entry per cell");
  }
  index_.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (!index_.emplace(ids[i], i).second) fail(ErrorKind::DuplicateId, "duplicate cell id '" + ids[i] + "'");
  }
}

std::vector<LabelEvent> SimulatedOracle::label(const LabelRequest& request) {
  std::vector<LabelEvent> out;
  out.reserve(request.cell_ids.size());
  for (const auto& id : request.cell_ids) {
    const auto& t = data_->truth[data_->row_of(id)];
    if (!t) fail(ErrorKind::OracleFailure, "no ground truth for cell '" + id + "'");
    out.push_back({id, *t, LabelSource::SimulatedOracle, request.loop_index, std::nullopt, 0});
  }
  return out;
}

std::vector<LabelEvent> ScriptedOracle::label(const LabelRequest& request) {
  std::vector<LabelEvent> out;
  long elapsed = 0;
  for (const auto& id : request.cell_ids) {
    if (elapsed + ms_per_item_ > request.budget_ms) break;
    elapsed += ms_per_item_;
    if (auto l = decide_(id)) out.push_back({id, *l, LabelSource::SimulatedOracle, request.loop_index, std::nullopt, elapsed});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd rows_of(const HilData& data, const std::vector<std::size_t>& rows) {
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return data.features(idx, Eigen::all);
}

std::shared_ptr<const SvmModel> fit_pool(const HilRunState& s, const HilConfig& config) {
  SvmConfig cfg = config.svm;
  cfg.seed = mix_seed(s.seed, 0x5f);
  return std::make_shared<const SvmModel>(svm_fit(rows_of(*s.data, s.training_pool), s.training_labels, cfg));
}

ClusterMetrics evaluate_test(const HilData& data, const SvmModel& model, double threshold) {
  std::vector<std::size_t> rows;
  for (std::size_t r : data.rows_with(Role::Test)) {
    if (data.truth[r]) rows.push_back(r);
  }
  if (rows.empty()) return {};
  const auto preds = predict(model, rows_of(data, rows), threshold);
  std::vector<Label> truth;
  std::vector<int> clusters;
  for (std::size_t r : rows) {
    truth.push_back(*data.truth[r]);
    clusters.push_back(data.cluster[r]);
  }
  return per_cluster_metrics(preds, truth, clusters);
}

std::set<int> planned_clusters(const HilRunState& s, const HilConfig& config) {
  std::set<int> out;
  for (auto* pool : {&s.training_pool, &s.relabel_pool}) {
    for (std::size_t r : *pool) {
      const int c = s.data->cluster[r];
      if (c >= 0 || config.include_background) out.insert(c);
    }
  }
  return out;
}

std::map<int, long> counts_by_cluster(const HilData& data, const std::vector<std::size_t>& rows) {
  std::map<int, long> out;
  for (std::size_t r : rows) ++out[data.cluster[r]];
  return out;
}

void attach_probabilities(const HilRunState& s, PendingStep& step) {
  step.probabilities.clear();
  if (step.candidates.empty() || !s.model->platt) return;
  const Eigen::VectorXd p = predict_proba(*s.model, rows_of(*s.data, step.candidates));
  step.probabilities.assign(p.data(), p.data() + p.size());
}

// Draws allocation[c] rows of cluster c from the relabel pool, clusters in id order.
PendingStep scheduled_step(const HilRunState& s, const std::map<int, long>& allocation) {
  PendingStep step;
  step.loop_index = s.loop_index + 1;
  std::map<int, std::vector<std::size_t>> by_cluster;
  for (std::size_t r : s.relabel_pool) by_cluster[s.data->cluster[r]].push_back(r);
  Rng rng(mix_seed(s.seed, 0x100 + static_cast<std::uint64_t>(step.loop_index)));
  for (const auto& [c, want] : allocation) {
    const auto& members = by_cluster[c];
    for (std::size_t k : rng.sample_indices(members.size(), static_cast<std::size_t>(std::max(0L, want)))) {
      step.candidates.push_back(members[k]);
    }
  }
  step.plan.allocation = allocation;
  for (auto& [c, n] : step.plan.allocation) n = std::min<long>(n, static_cast<long>(by_cluster[c].size()));
  step.plan.budget = static_cast<long>(step.candidates.size());
  return step;
}

PendingStep uniform_step(const HilRunState& s, long count) {
  PendingStep step;
  step.loop_index = s.loop_index + 1;
  Rng rng(mix_seed(s.seed, 0x100 + static_cast<std::uint64_t>(step.loop_index)));
  for (std::size_t k : rng.sample_indices(s.relabel_pool.size(), static_cast<std::size_t>(std::max(0L, count)))) {
    step.candidates.push_back(s.relabel_pool[k]);
  }
  step.plan.budget = static_cast<long>(step.candidates.size());
  step.plan.allocation = counts_by_cluster(*s.data, step.candidates);
  return step;
}

LabelRequest request_for(const HilRunState& s, const PendingStep& step, long budget_ms) {
  LabelRequest req;
  req.loop_index = step.loop_index;
  req.budget_ms = budget_ms;
  for (std::size_t r : step.candidates) req.cell_ids.push_back(s.data->ids[r]);
  req.probabilities = step.probabilities;
  return req;
}

long budget_for(const HilRunState& s, const PendingStep& step, const HilConfig& config) {
  if (s.merge == MergePolicy::AllLabels || step.max_confirmed) return std::numeric_limits<long>::max() / 4;
  return config.label_budget_ms;
}

}  // namespace

HilRunState hil_init(std::shared_ptr<const HilData> data, Strategy strategy, MergePolicy merge,
                     std::vector<std::size_t> training_pool, std::vector<Label> training_labels,
                     std::vector<std::size_t> relabel_pool, const HilConfig& config, std::uint64_t seed) {
  if (training_pool.size() != training_labels.size()) {
    fail(ErrorKind::LengthMismatch, "training pool and labels must align");
  }
  std::vector<char> seen(data->size(), 0);
  for (auto* pool : {&training_pool, &relabel_pool}) {
    for (std::size_t r : *pool) {
      if (r >= data->size()) fail(ErrorKind::UnknownId, "pool row out of range");
      if (seen[r]++) fail(ErrorKind::InvalidState, "cell '" + data->ids[r] + "' appears twice across pools");
    }
  }
  HilRunState s;
  s.data = std::move(data);
  s.strategy = strategy;
  s.merge = merge;
  s.seed = seed;
  s.training_pool = std::move(training_pool);
  s.training_labels = std::move(training_labels);
  s.relabel_pool = std::move(relabel_pool);
  s.model = fit_pool(s, config);
  s.metrics_history.push_back(evaluate_test(*s.data, *s.model, config.threshold));
  s.steering_history.emplace_back();
  return s;
}

PendingStep plan_step(const HilRunState& state, const HilConfig& config) {
  if (state.strategy == Strategy::Random) {
    PendingStep step = uniform_step(state, config.budget);
    attach_probabilities(state, step);
    return step;
  }

  const std::set<int> clusters = planned_clusters(state, config);
  if (clusters.empty()) fail(ErrorKind::EmptyScores, "no clusters to sample from");
  std::map<int, double> scores;
  std::optional<ClusterMetrics> steering;
  if (config.steering == Steering::McCvTrainingPool) {
    std::vector<int> pool_clusters;
    for (std::size_t r : state.training_pool) pool_clusters.push_back(state.data->cluster[r]);
    SvmConfig cfg = config.svm;
    cfg.seed = mix_seed(state.seed, 0x200 + static_cast<std::uint64_t>(state.loop_index));
    const McCvReport cv =
        mc_cross_validate(rows_of(*state.data, state.training_pool), state.training_labels, pool_clusters, cfg,
                          config.mc_folds, config.mc_train_fraction,
                          mix_seed(state.seed, 0x300 + static_cast<std::uint64_t>(state.loop_index)), config.threshold);
    steering = cv.pooled;
  } else {
    steering = state.metrics_history.back();
  }
  for (int c : clusters) {
    auto it = steering->per_cluster.find(c);
    scores[c] = it == steering->per_cluster.end() ? 0.0 : it->second.f1;
  }

  const auto freq = sampling_frequencies(scores);
  std::map<int, long> pool_sizes = counts_by_cluster(*state.data, state.relabel_pool);
  PendingStep step = scheduled_step(state, allocate_budget(freq, config.budget, pool_sizes));
  step.plan.scores = scores;
  step.plan.frequencies = freq;
  step.steering = std::move(steering);
  attach_probabilities(state, step);
  return step;
}

PendingStep plan_review_step(const HilRunState& state, const HilConfig& config, bool shuffle,
                             std::optional<long> max_confirmed) {
  PendingStep step;
  step.loop_index = state.loop_index + 1;
  step.max_confirmed = max_confirmed;
  if (!state.relabel_pool.empty()) {
    const Eigen::MatrixXd X = rows_of(*state.data, state.relabel_pool);
    const auto preds = predict(*state.model, X, config.threshold);
    const Eigen::VectorXd p = predict_proba(*state.model, X);
    std::vector<std::pair<std::size_t, double>> queue;
    for (std::size_t i = 0; i < state.relabel_pool.size(); ++i) {
      if (preds[i] == Label::NonCtc) queue.emplace_back(state.relabel_pool[i], p(static_cast<Eigen::Index>(i)));
    }
    if (shuffle) {
      Rng rng(mix_seed(state.seed, 0x100 + static_cast<std::uint64_t>(step.loop_index)));
      rng.shuffle(queue);
    } else {
      const auto& ids = state.data->ids;
      const bool desc = config.review_most_likely_first;
      std::sort(queue.begin(), queue.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second) return desc ? a.second > b.second : a.second < b.second;
        return ids[a.first] < ids[b.first];
      });
    }
    for (const auto& [r, prob] : queue) {
      step.candidates.push_back(r);
      step.probabilities.push_back(prob);
    }
  }
  step.plan.budget = static_cast<long>(step.candidates.size());
  step.plan.allocation = counts_by_cluster(*state.data, step.candidates);
  return step;
}

HilRunState commit_step(const HilRunState& state, const PendingStep& step, const std::vector<LabelEvent>& events,
                        const HilConfig& config) {
  if (step.loop_index != state.loop_index + 1) {
    fail(ErrorKind::InvalidState, "step for loop " + std::to_string(step.loop_index) + " does not follow loop " +
                                      std::to_string(state.loop_index));
  }
  const HilData& data = *state.data;
  std::unordered_set<std::size_t> candidates(step.candidates.begin(), step.candidates.end());
  const long budget = budget_for(state, step, config);

  HilRunState next = state;
  next.loop_index = step.loop_index;
  std::vector<char> examined(data.size(), 0);
  long confirmed = 0, added = 0;
  for (const auto& e : events) {
    if (step.max_confirmed && confirmed >= *step.max_confirmed) break;
    const std::size_t r = data.row_of(e.cell_id);
    if (!candidates.contains(r) || examined[r] || e.elapsed_ms > budget) continue;
    examined[r] = 1;
    LabelEvent accepted = e;
    accepted.loop_index = step.loop_index;
    next.event_log.push_back(std::move(accepted));
    if (e.assigned_label == Label::Ctc) ++confirmed;
    if (next.merge == MergePolicy::AllLabels || e.assigned_label == Label::Ctc) {
      next.training_pool.push_back(r);
      next.training_labels.push_back(e.assigned_label);
      ++added;
    }
  }
  std::erase_if(next.relabel_pool, [&](std::size_t r) { return examined[r] != 0; });

  const std::size_t removed = std::count(examined.begin(), examined.end(), 1) - static_cast<std::size_t>(added);
  if (next.training_pool.size() + next.relabel_pool.size() + removed !=
      state.training_pool.size() + state.relabel_pool.size()) {
    fail(ErrorKind::InvalidState, "pool sizes not conserved across loop " + std::to_string(step.loop_index));
  }

  if (added > 0) next.model = fit_pool(next, config);
  next.metrics_history.push_back(evaluate_test(data, *next.model, config.threshold));
  next.steering_history.push_back(step.steering);
  next.plans.push_back(step.plan);
  next.added_per_loop.push_back(added);
  return next;
}

HilRunState hil_step(const HilRunState& state, LabelOracle& oracle, const HilConfig& config) {
  const PendingStep step = state.merge == MergePolicy::AllLabels
                               ? plan_step(state, config)
                               : plan_review_step(state, config, state.strategy == Strategy::Random, std::nullopt);
  const auto events = oracle.label(request_for(state, step, budget_for(state, step, config)));
  return commit_step(state, step, events, config);
}

void check_state_invariants(const HilRunState& state, const std::vector<std::size_t>& initial_pool) {
  const std::size_t n = state.data->size();
  std::vector<char> mark(n, 0);
  auto place = [&](std::size_t r, const char* where) {
    if (r >= n) fail(ErrorKind::InvalidState, std::string("row out of range in ") + where);
    if (mark[r]) fail(ErrorKind::InvalidState, "cell '" + state.data->ids[r] + "' duplicated in " + where);
    mark[r] = 1;
  };
  for (std::size_t r : state.training_pool) place(r, "training pool");
  for (std::size_t r : state.relabel_pool) place(r, "relabel pool");
  for (const auto& e : state.event_log) {
    const std::size_t r = state.data->row_of(e.cell_id);
    if (!mark[r]) mark[r] = 1;
  }
  std::vector<char> expected(n, 0);
  for (std::size_t r : initial_pool) expected[r] = 1;
  if (mark != expected) fail(ErrorKind::InvalidState, "pool union differs from the initial pool");
  if (state.training_labels.size() != state.training_pool.size()) {
    fail(ErrorKind::InvalidState, "training labels out of step with the pool");
  }
}

// ---------------------------------------------------------------------------

ArmReport arm_report(const HilRunState& state) {
  ArmReport a;
  a.strategy = state.strategy;
  a.test_metrics = state.metrics_history;
  a.steering_metrics = state.steering_history;
  a.plans = state.plans;
  a.events = state.event_log;
  a.added_per_loop = state.added_per_loop;
  long size = static_cast<long>(state.training_pool.size()) -
              std::accumulate(state.added_per_loop.begin(), state.added_per_loop.end(), 0L);
  a.training_sizes.push_back(size);
  for (long add : state.added_per_loop) a.training_sizes.push_back(size += add);
  return a;
}

namespace {

std::vector<std::size_t> labeled_training(const HilData& data) {
  std::vector<std::size_t> out;
  for (std::size_t r : data.rows_with(Role::TrainLabeled)) {
    if (data.truth[r]) out.push_back(r);
  }
  return out;
}

std::vector<Label> truths(const HilData& data, const std::vector<std::size_t>& rows) {
  std::vector<Label> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(*data.truth[r]);
  return out;
}

std::vector<std::size_t> minus(const std::vector<std::size_t>& all, const std::vector<std::size_t>& taken) {
  std::unordered_set<std::size_t> t(taken.begin(), taken.end());
  std::vector<std::size_t> out;
  for (std::size_t r : all) {
    if (!t.contains(r)) out.push_back(r);
  }
  return out;
}

std::vector<std::size_t> pick(const std::vector<std::size_t>& from, std::size_t k, Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i : rng.sample_indices(from.size(), k)) out.push_back(from[i]);
  std::sort(out.begin(), out.end());
  return out;
}

void validate_config(const HilConfig& c) {
  if (c.loops < 0) fail(ErrorKind::InvalidSpec, "loops must be non-negative");
  if (c.budget < 0 || c.initial_pool < 2) fail(ErrorKind::InvalidSpec, "budget must be >= 0 and initial_pool >= 2");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) fail(ErrorKind::InvalidSpec, "threshold must lie in (0, 1)");
}

}  // namespace

int weakest_cluster(const ClusterMetrics& metrics) {
  std::optional<int> best;
  for (const auto& [c, s] : metrics.per_cluster) {
    if (c < 0) continue;
    if (!best || s.f1 < metrics.per_cluster.at(*best).f1) best = c;
  }
  if (!best) fail(ErrorKind::InsufficientData, "no non-background cluster in the evaluation");
  return *best;
}

RunReport ProtocolRun::report() const {
  RunReport r;
  r.kind = kind_;
  r.seed = seed_;
  r.focus_cluster = focus_;
  r.config = config_;
  r.cluster_specific = arm_report(cluster_arm_);
  r.random = arm_report(random_arm_);
  r.final_model = cluster_arm_.model;
  return r;
}

void ProtocolRun::check_invariants() const {
  check_state_invariants(cluster_arm_, cluster_union_);
  check_state_invariants(random_arm_, random_union_);
}

ProtocolRun ProtocolRun::scenario1(std::shared_ptr<const HilData> data, const HilConfig& config, std::uint64_t seed) {
  validate_config(config);
  const auto labeled = labeled_training(*data);
  if (static_cast<long>(labeled.size()) < config.initial_pool + config.budget) {
    fail(ErrorKind::InsufficientData, "labeled training pool has " + std::to_string(labeled.size()) +
                                          " cells, need at least " +
                                          std::to_string(config.initial_pool + config.budget));
  }
  Rng rng(mix_seed(seed, 1));
  const auto init = pick(labeled, static_cast<std::size_t>(config.initial_pool), rng);
  const auto rest = minus(labeled, init);

  ProtocolRun run;
  run.kind_ = "scenario1";
  run.config_ = config;
  run.seed_ = seed;
  run.cluster_arm_ = hil_init(data, Strategy::ClusterSpecific, MergePolicy::AllLabels, init, truths(*data, init), rest,
                              config, mix_seed(seed, 2));
  run.random_arm_ = run.cluster_arm_;  // both arms start from the same fitted model
  run.random_arm_.strategy = Strategy::Random;
  run.random_arm_.seed = mix_seed(seed, 3);
  run.cluster_union_ = labeled;
  run.random_union_ = labeled;
  return run;
}

ProtocolRun ProtocolRun::scenario2(std::shared_ptr<const HilData> data, int main_cluster, const HilConfig& config,
                                   std::uint64_t seed) {
  validate_config(config);
  const auto labeled = labeled_training(*data);
  std::map<int, std::vector<std::size_t>> by_cluster;
  for (std::size_t r : labeled) by_cluster[data->cluster[r]].push_back(r);
  if (main_cluster < 0 || !by_cluster.contains(main_cluster)) {
    fail(ErrorKind::InvalidSpec, "main cluster " + std::to_string(main_cluster) + " has no labeled training cells");
  }
  const auto n_main = static_cast<long>(by_cluster[main_cluster].size());
  const auto per_loop = static_cast<long>(std::floor(config.scenario2_initial_fraction * static_cast<double>(n_main)));
  if (n_main < 5 || per_loop < 1) fail(ErrorKind::InsufficientData, "main cluster has too few labeled cells");

  Rng rng(mix_seed(seed, 1));
  std::vector<std::size_t> init, main_left, random_pool;
  for (const auto& [c, members] : by_cluster) {
    const double frac = c == main_cluster ? config.scenario2_initial_fraction : config.scenario2_other_fraction;
    const auto keep = pick(members, static_cast<std::size_t>(std::floor(frac * static_cast<double>(members.size()))), rng);
    const auto left = minus(members, keep);
    init.insert(init.end(), keep.begin(), keep.end());
    if (c == main_cluster) main_left = left;
    const auto flagged = pick(
        left, static_cast<std::size_t>(std::llround(config.scenario2_random_pool_fraction * static_cast<double>(left.size()))),
        rng);
    random_pool.insert(random_pool.end(), flagged.begin(), flagged.end());
  }
  std::sort(init.begin(), init.end());
  std::sort(random_pool.begin(), random_pool.end());

  ProtocolRun run;
  run.kind_ = "scenario2";
  run.config_ = config;
  run.seed_ = seed;
  run.focus_ = main_cluster;
  run.per_loop_ = per_loop;
  run.cluster_arm_ = hil_init(data, Strategy::ClusterSpecific, MergePolicy::AllLabels, init, truths(*data, init),
                              main_left, config, mix_seed(seed, 2));
  run.random_arm_ = run.cluster_arm_;
  run.random_arm_.strategy = Strategy::Random;
  run.random_arm_.seed = mix_seed(seed, 3);
  run.random_arm_.relabel_pool = random_pool;
  run.cluster_union_ = init;
  run.cluster_union_.insert(run.cluster_union_.end(), main_left.begin(), main_left.end());
  run.random_union_ = init;
  run.random_union_.insert(run.random_union_.end(), random_pool.begin(), random_pool.end());
  return run;
}

ProtocolRun ProtocolRun::realworld(std::shared_ptr<const HilData> data, std::optional<int> target_cluster,
                                   const HilConfig& config, std::uint64_t seed) {
  validate_config(config);
  const auto labeled = labeled_training(*data);
  const auto unlabeled = data->rows_with(Role::TrainUnlabeled);
  if (unlabeled.empty()) fail(ErrorKind::InsufficientData, "no unlabeled training cells to relabel");

  ProtocolRun run;
  run.kind_ = "realworld";
  run.config_ = config;
  run.seed_ = seed;
  run.cluster_arm_ = hil_init(data, Strategy::ClusterSpecific, MergePolicy::ConfirmedCtcOnly, labeled,
                              truths(*data, labeled), {}, config, mix_seed(seed, 2));
  const int target = target_cluster ? *target_cluster : weakest_cluster(run.cluster_arm_.metrics_history[0]);
  if (std::find(data->cluster.begin(), data->cluster.end(), target) == data->cluster.end()) {
    fail(ErrorKind::InvalidSpec, "target cluster " + std::to_string(target) + " does not exist");
  }
  run.focus_ = target;

  const auto preds = predict(*run.cluster_arm_.model, rows_of(*data, unlabeled), config.threshold);
  std::vector<std::size_t> in_target, anywhere;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    if (preds[i] != Label::NonCtc) continue;
    anywhere.push_back(unlabeled[i]);
    if (data->cluster[unlabeled[i]] == target) in_target.push_back(unlabeled[i]);
  }
  const auto cap = static_cast<std::size_t>(config.relabel_pool_size);
  Rng rng_a(mix_seed(seed, 11)), rng_b(mix_seed(seed, 12));
  run.cluster_arm_.relabel_pool = pick(in_target, cap, rng_a);

  run.random_arm_ = run.cluster_arm_;
  run.random_arm_.strategy = Strategy::Random;
  run.random_arm_.seed = mix_seed(seed, 3);
  run.random_arm_.relabel_pool = pick(anywhere, cap, rng_b);

  for (auto [arm, u] : {std::pair{&run.cluster_arm_, &run.cluster_union_}, std::pair{&run.random_arm_, &run.random_union_}}) {
    *u = arm->training_pool;
    u->insert(u->end(), arm->relabel_pool.begin(), arm->relabel_pool.end());
  }
  return run;
}

void ProtocolRun::advance() {
  if (kind_ == "realworld") fail(ErrorKind::InvalidState, "real-world runs advance through expert review");
  if (finished()) fail(ErrorKind::InvalidState, "run already finished");
  SimulatedOracle oracle(cluster_arm_.data);
  if (kind_ == "scenario1") {
    cluster_arm_ = hil_step(cluster_arm_, oracle, config_);
    random_arm_ = hil_step(random_arm_, oracle, config_);
  } else {
    const int main = *focus_;
    const long left = static_cast<long>(cluster_arm_.relabel_pool.size());
    const long count = loop_index() + 1 == config_.loops ? left : std::min(per_loop_, left);
    PendingStep a = scheduled_step(cluster_arm_, {{main, count}});
    a.plan.frequencies = {{main, 1.0}};
    attach_probabilities(cluster_arm_, a);
    cluster_arm_ = commit_step(cluster_arm_, a, oracle.label(request_for(cluster_arm_, a, 0)), config_);

    PendingStep b = uniform_step(random_arm_, count);
    attach_probabilities(random_arm_, b);
    random_arm_ = commit_step(random_arm_, b, oracle.label(request_for(random_arm_, b, 0)), config_);
  }
  check_invariants();
}

PendingStep ProtocolRun::review_step() const {
  if (kind_ != "realworld") fail(ErrorKind::InvalidState, "only real-world runs have review steps");
  if (finished()) fail(ErrorKind::InvalidState, "run already finished");
  return plan_review_step(cluster_arm_, config_, false, std::nullopt);
}

void ProtocolRun::commit_review(const PendingStep& step, const std::vector<LabelEvent>& events,
                                LabelOracle& random_oracle) {
  if (kind_ != "realworld") fail(ErrorKind::InvalidState, "only real-world runs have review steps");
  if (finished()) fail(ErrorKind::InvalidState, "run already finished");
  HilRunState cs = commit_step(cluster_arm_, step, events, config_);
  const long confirmed = cs.added_per_loop.back();
  const PendingStep matched = plan_review_step(random_arm_, config_, true, confirmed);
  const auto random_events = random_oracle.label(request_for(random_arm_, matched, budget_for(random_arm_, matched, config_)));
  HilRunState rnd = commit_step(random_arm_, matched, random_events, config_);
  cluster_arm_ = std::move(cs);
  random_arm_ = std::move(rnd);
  check_invariants();
}

void ProtocolRun::replace_cluster_pool(const std::vector<std::string>& cell_ids) {
  if (loop_index() != 0) fail(ErrorKind::InvalidState, "pool can only be replaced before the first loop");
  std::vector<std::size_t> rows;
  for (const auto& id : cell_ids) rows.push_back(cluster_arm_.data->row_of(id));
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  const std::unordered_set<std::size_t> training(cluster_arm_.training_pool.begin(), cluster_arm_.training_pool.end());
  for (std::size_t r : rows) {
    if (training.contains(r)) fail(ErrorKind::InvalidState, "cell '" + cluster_arm_.data->ids[r] + "' is already labeled");
  }
  cluster_arm_.relabel_pool = rows;
  cluster_union_ = cluster_arm_.training_pool;
  cluster_union_.insert(cluster_union_.end(), rows.begin(), rows.end());
}

RunReport run_scenario1(std::shared_ptr<const HilData> data, const HilConfig& config, std::uint64_t seed) {
  ProtocolRun run = ProtocolRun::scenario1(std::move(data), config, seed);
  while (!run.finished()) run.advance();
  return run.report();
}

RunReport run_scenario2(std::shared_ptr<const HilData> data, int main_cluster, const HilConfig& config,
                        std::uint64_t seed) {
  ProtocolRun run = ProtocolRun::scenario2(std::move(data), main_cluster, config, seed);
  while (!run.finished()) run.advance();
  return run.report();
}

namespace {

// Replays a fixed list of confirmations for the cluster arm.
class ReplayOracle final : public LabelOracle {
 public:
  explicit ReplayOracle(std::vector<std::vector<std::string>> loops) : loops_(std::move(loops)) {}
  std::vector<LabelEvent> label(const LabelRequest& request) override {
    std::vector<LabelEvent> out;
    const auto k = static_cast<std::size_t>(request.loop_index) - 1;
    if (k >= loops_.size()) return out;
    for (const auto& id : loops_[k]) out.push_back({id, Label::Ctc, LabelSource::Human, request.loop_index, std::nullopt, 0});
    return out;
  }

 private:
  std::vector<std::vector<std::string>> loops_;
};

}  // namespace

RunReport run_realworld(std::shared_ptr<const HilData> data, std::optional<int> target_cluster, LabelOracle& oracle,
                        const HilConfig& config, std::uint64_t seed, const std::optional<RealworldReplay>& replay) {
  ProtocolRun run = ProtocolRun::realworld(data, target_cluster, config, seed);
  std::optional<ReplayOracle> replayed;
  if (replay) {
    std::vector<std::string> all;
    for (const auto& loop : replay->confirmed_per_loop) all.insert(all.end(), loop.begin(), loop.end());
    Rng rng(mix_seed(seed, 13));
    rng.shuffle(all);
    std::vector<std::vector<std::string>> loops;
    std::size_t at = 0;
    for (const auto& loop : replay->confirmed_per_loop) {
      loops.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(at),
                         all.begin() + static_cast<std::ptrdiff_t>(at + loop.size()));
      at += loop.size();
    }
    run.replace_cluster_pool(all);
    replayed.emplace(std::move(loops));
  }
  while (!run.finished()) {
    const PendingStep step = run.review_step();
    LabelOracle& expert = replayed ? static_cast<LabelOracle&>(*replayed) : oracle;
    auto events = expert.label(request_for(run.cluster_arm(), step, config.label_budget_ms));
    run.commit_review(step, events, oracle);
  }
  return run.report();
}

// ---------------------------------------------------------------------------

ApplicationReport apply_final_model(const FinalModel& model, const std::vector<CellRecord>& holdout, double threshold,
                                    double dedup_radius) {
  if (model.svm.support_vectors.rows() == 0 || !model.svm.platt) {
    fail(ErrorKind::MissingModel, "final model has no fitted calibrated classifier");
  }
  // Thresholds at or above 1 are allowed and simply suggest nothing.
  if (!(threshold > 0.0) || !std::isfinite(threshold)) fail(ErrorKind::InvalidSpec, "threshold must be a positive number");
  ApplicationReport report;
  report.threshold = threshold;
  report.dedup_radius = dedup_radius;
  for (const auto& rec : holdout) report.per_patient[rec.patient_id];
  if (holdout.empty()) return report;

  const Eigen::VectorXd p = predict_proba(model.svm, pca_transform(model.pca, embedding_matrix(holdout)));
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    if (p(static_cast<Eigen::Index>(i)) >= threshold) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = p(static_cast<Eigen::Index>(a)), pb = p(static_cast<Eigen::Index>(b));
    return pa != pb ? pa > pb : holdout[a].cell_id < holdout[b].cell_id;
  });

  for (std::size_t i : order) {
    const auto& rec = holdout[i];
    bool duplicate = false;
    if (rec.cartridge_id && rec.cartridge_xy) {
      for (const auto& kept : report.suggestions) {
        if (kept.cartridge_id != rec.cartridge_id || !kept.cartridge_xy) continue;
        const double dx = kept.cartridge_xy->first - rec.cartridge_xy->first;
        const double dy = kept.cartridge_xy->second - rec.cartridge_xy->second;
        if (std::hypot(dx, dy) <= dedup_radius) {
          duplicate = true;
          break;
        }
      }
    }
    if (duplicate) {
      ++report.duplicates_removed;
      continue;
    }
    report.suggestions.push_back(
        {rec.cell_id, rec.patient_id, p(static_cast<Eigen::Index>(i)), rec.cartridge_id, rec.cartridge_xy});
    ++report.per_patient[rec.patient_id].suggested;
  }
  return report;
}

void attach_confirmations(ApplicationReport& report, const std::set<std::string>& confirmed_ids) {
  if (report.suggestions.empty()) fail(ErrorKind::EmptySuggestion, "no candidates were suggested");
  for (auto& [pid, row] : report.per_patient) {
    row.confirmed = 0;
    row.ppv.reset();
  }
  for (const auto& s : report.suggestions) {
    if (confirmed_ids.contains(s.cell_id)) ++*report.per_patient[s.patient_id].confirmed;
  }
  for (auto& [pid, row] : report.per_patient) {
    if (row.suggested > 0) row.ppv = positive_predictive_value(row.suggested, *row.confirmed);
  }
}

}  // namespace hilctc
