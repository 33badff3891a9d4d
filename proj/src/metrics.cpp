#include "hilctc/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/parallel.hpp"
#include "hilctc/random.hpp"

namespace hilctc {

Scores Scores::from(const Confusion& c) {
  Scores s;
  s.counts = c;
  s.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  s.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  s.f1 = c.tp > 0 ? f1_score(s.precision, s.recall) : 0.0;
  return s;
}

Confusion confusion(std::span<const Label> preds, std::span<const Label> truths) {
  if (preds.size() != truths.size()) {
    fail(ErrorKind::LengthMismatch, "prediction count " + std::to_string(preds.size()) + " differs from truth count " +
                                        std::to_string(truths.size()));
  }
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == Label::Ctc, t = truths[i] == Label::Ctc;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

double f1_score(const Confusion& c) { return Scores::from(c).f1; }

ClusterMetrics per_cluster_metrics(std::span<const Label> preds, std::span<const Label> truths,
                                   std::span<const int> clusters) {
  if (preds.size() != truths.size() || preds.size() != clusters.size()) {
    fail(ErrorKind::LengthMismatch, "predictions, truths and cluster ids must align");
  }
  std::map<int, Confusion> counts;
  Confusion total;
  ClusterMetrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Confusion one = confusion(preds.subspan(i, 1), truths.subspan(i, 1));
    counts[clusters[i]] += one;
    total += one;
    ++m.n_points[clusters[i]];
  }
  for (const auto& [id, c] : counts) m.per_cluster[id] = Scores::from(c);
  m.total = Scores::from(total);
  return m;
}

ClusterMetrics per_cluster_metrics(std::span<const Label> preds, std::span<const Label> truths,
                                   std::span<const std::string> ids,
                                   const std::unordered_map<std::string, int>& cluster_of) {
  if (ids.size() != preds.size()) fail(ErrorKind::LengthMismatch, "ids must align with predictions");
  std::vector<int> clusters(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = cluster_of.find(ids[i]);
    if (it == cluster_of.end()) fail(ErrorKind::MissingAssignment, "cell '" + ids[i] + "' has no cluster assignment");
    clusters[i] = it->second;
  }
  return per_cluster_metrics(preds, truths, clusters);
}

McCvReport mc_cross_validate(const Eigen::MatrixXd& X, std::span<const Label> labels, std::span<const int> clusters,
                             const SvmConfig& config, int folds, double train_fraction, std::uint64_t seed,
                             double threshold) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (labels.size() != n || clusters.size() != n) fail(ErrorKind::LengthMismatch, "pool arrays must align");
  if (folds < 1) fail(ErrorKind::InvalidSpec, "folds must be at least 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorKind::InvalidSpec, "train_fraction must lie in (0, 1)");

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i] == Label::Ctc ? 1 : 0].push_back(i);
  if (by_class[0].empty() || by_class[1].empty()) {
    fail(ErrorKind::DegeneratePool, "cross-validation pool contains a single class");
  }

  struct FoldResult {
    std::vector<std::size_t> validation;
    std::vector<Label> predicted;
  };
  std::vector<FoldResult> results(static_cast<std::size_t>(folds));

  parallel_for(results.size(), [&](std::size_t fold) {
    Rng rng(mix_seed(seed, fold));
    std::vector<Eigen::Index> train;
    std::vector<std::size_t>& validation = results[fold].validation;
    for (const auto& members : by_class) {
      std::vector<std::size_t> shuffled = members;
      rng.shuffle(shuffled);
      const double want = std::round((1.0 - train_fraction) * static_cast<double>(shuffled.size()));
      const auto n_val = std::min(static_cast<std::size_t>(want), shuffled.size() - 1);
      validation.insert(validation.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
      for (std::size_t r = n_val; r < shuffled.size(); ++r) train.push_back(static_cast<Eigen::Index>(shuffled[r]));
    }
    std::sort(train.begin(), train.end());
    std::sort(validation.begin(), validation.end());
    std::vector<Label> y_train;
    y_train.reserve(train.size());
    for (auto t : train) y_train.push_back(labels[static_cast<std::size_t>(t)]);
    SvmConfig fold_config = config;
    fold_config.seed = mix_seed(config.seed, fold);
    const SvmModel model = svm_fit(X(train, Eigen::all), std::span<const Label>(y_train), fold_config);
    if (validation.empty()) return;
    std::vector<Eigen::Index> rows(validation.begin(), validation.end());
    results[fold].predicted = predict(model, X(rows, Eigen::all), threshold);
  });

  McCvReport report;
  report.folds = folds;
  report.train_fraction = train_fraction;
  report.seed = seed;
  std::vector<Label> pooled_pred, pooled_truth;
  std::vector<int> pooled_cluster;
  for (const auto& r : results) {
    std::vector<Label> truth;
    for (std::size_t t = 0; t < r.validation.size(); ++t) {
      pooled_pred.push_back(r.predicted[t]);
      pooled_truth.push_back(labels[r.validation[t]]);
      pooled_cluster.push_back(clusters[r.validation[t]]);
      truth.push_back(labels[r.validation[t]]);
    }
    report.fold_totals.push_back(confusion(r.predicted, truth));
  }
  report.pooled = per_cluster_metrics(pooled_pred, pooled_truth, pooled_cluster);
  return report;
}

double positive_predictive_value(long suggested, long confirmed) {
  if (suggested <= 0) fail(ErrorKind::EmptySuggestion, "no candidates were suggested");
  if (confirmed < 0 || confirmed > suggested) {
    fail(ErrorKind::InvalidSpec, "confirmed count must lie in [0, suggested]");
  }
  return static_cast<double>(confirmed) / static_cast<double>(suggested);
}

void to_json(nlohmann::json& j, const Confusion& c) {
  j = nlohmann::json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

void to_json(nlohmann::json& j, const Scores& s) {
  j = nlohmann::json{{"tp", s.counts.tp}, {"fp", s.counts.fp}, {"fn", s.counts.fn}, {"tn", s.counts.tn},
                     {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

void to_json(nlohmann::json& j, const ClusterMetrics& m) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, s] : m.per_cluster) {
    nlohmann::json entry = s;
    entry["n_points"] = m.n_points.at(id);
    per[std::to_string(id)] = entry;
  }
  j = nlohmann::json{{"per_cluster", per}, {"total", m.total}};
}

void to_json(nlohmann::json& j, const McCvReport& r) {
  j = nlohmann::json{{"folds", r.folds}, {"train_fraction", r.train_fraction}, {"seed", r.seed},
                     {"pooled", r.pooled}, {"fold_totals", r.fold_totals}};
}

}  // namespace hilctc
