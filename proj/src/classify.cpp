#include "hilctc/classify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <memory>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/random.hpp"

namespace hilctc {

namespace {

constexpr double kTau = 1e-12;

double rbf(const Eigen::MatrixXd& A, Eigen::Index i, const Eigen::MatrixXd& B, Eigen::Index j, double gamma) {
  return std::exp(-gamma * (A.row(i) - B.row(j)).squaredNorm());
}

// Kernel rows computed on demand, least-recently-used eviction beyond the budget.
class KernelCache {
 public:
  KernelCache(const Eigen::MatrixXd& X, double gamma, double budget_mb)
      : gamma_(gamma), n_(static_cast<std::size_t>(X.rows())), dim_(static_cast<std::size_t>(X.cols())),
        data_(n_ * dim_), rows_(n_) {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c < dim_; ++c) data_[i * dim_ + c] = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    }
    const double row_bytes = static_cast<double>(n_) * sizeof(double);
    capacity_ = std::max<std::size_t>(2, static_cast<std::size_t>(budget_mb * 1024.0 * 1024.0 / std::max(row_bytes, 1.0)));
  }

  static double diag(std::size_t) { return 1.0; }

  const std::vector<double>& row(std::size_t i) {
    Slot& slot = rows_[i];
    if (!slot.data.empty()) {
      lru_.splice(lru_.begin(), lru_, slot.pos);
      return slot.data;
    }
    if (lru_.size() >= capacity_) {
      const std::size_t victim = lru_.back();
      lru_.pop_back();
      rows_[victim].data.clear();
      rows_[victim].data.shrink_to_fit();
    }
    slot.data.resize(n_);
    const double* xi = data_.data() + i * dim_;
    for (std::size_t j = 0; j < n_; ++j) {
      const double* xj = data_.data() + j * dim_;
      double d2 = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) {
        const double d = xi[c] - xj[c];
        d2 += d * d;
      }
      slot.data[j] = std::exp(-gamma_ * d2);
    }
    lru_.push_front(i);
    slot.pos = lru_.begin();
    return slot.data;
  }

 private:
  struct Slot {
    std::vector<double> data;
    std::list<std::size_t>::iterator pos;
  };
  double gamma_;
  std::size_t n_;
  std::size_t dim_;
  std::vector<double> data_;
  std::vector<Slot> rows_;
  std::list<std::size_t> lru_;
  std::size_t capacity_ = 0;
};

struct SmoResult {
  std::vector<double> alpha;
  double rho = 0.0;
  bool converged = true;
  long iterations = 0;
};

SmoResult solve_smo(const Eigen::MatrixXd& X, const std::vector<signed char>& y, double c_pos, double c_neg,
                    double gamma, double tolerance, long max_iter, double cache_mb) {
  const std::size_t n = y.size();
  KernelCache kernel(X, gamma, cache_mb);
  std::vector<double> alpha(n, 0.0), grad(n, -1.0), bound(n);
  for (std::size_t t = 0; t < n; ++t) bound[t] = y[t] > 0 ? c_pos : c_neg;

  auto in_up = [&](std::size_t t) { return y[t] > 0 ? alpha[t] < bound[t] : alpha[t] > 0.0; };
  auto in_low = [&](std::size_t t) { return y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < bound[t]; };

  SmoResult res;
  for (;;) {
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if (in_up(t) && v > g_max) {
        g_max = v;
        i = t;
      }
      if (in_low(t) && v < g_min) {
        g_min = v;
        j = t;
      }
    }
    if (i == n || j == n || g_max - g_min < tolerance) break;
    if (res.iterations >= max_iter) {
      res.converged = false;
      break;
    }
    ++res.iterations;

    const std::vector<double>& Ki = kernel.row(i);
    const std::vector<double>& Kj = kernel.row(j);
    const double Ci = bound[i], Cj = bound[j];
    const double old_i = alpha[i], old_j = alpha[j];
    const double Qij = y[i] * y[j] * Ki[j];
    if (y[i] != y[j]) {
      double quad = kernel.diag(i) + kernel.diag(j) + 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > Ci - Cj) {
        if (alpha[i] > Ci) {
          alpha[i] = Ci;
          alpha[j] = Ci - diff;
        }
      } else if (alpha[j] > Cj) {
        alpha[j] = Cj;
        alpha[i] = Cj + diff;
      }
    } else {
      double quad = kernel.diag(i) + kernel.diag(j) - 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > Ci) {
        if (alpha[i] > Ci) {
          alpha[i] = Ci;
          alpha[j] = sum - Ci;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > Cj) {
        if (alpha[j] > Cj) {
          alpha[j] = Cj;
          alpha[i] = sum - Cj;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
    const double si = y[i] * di, sj = y[j] * dj;
    for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * (Ki[t] * si + Kj[t] * sj);
  }

  // Intercept: mean over free vectors, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] >= bound[t]) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0.0) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  res.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  res.alpha = std::move(alpha);
  return res;
}

SvmModel assemble(const Eigen::MatrixXd& X, const std::vector<signed char>& y, const SmoResult& res, double gamma) {
  SvmModel model;
  std::size_t s = 0;
  for (double a : res.alpha) s += a > 0.0 ? 1 : 0;
  model.support_vectors.resize(static_cast<Eigen::Index>(s), X.cols());
  model.dual_coefs.resize(static_cast<Eigen::Index>(s));
  Eigen::Index row = 0;
  for (std::size_t t = 0; t < res.alpha.size(); ++t) {
    if (res.alpha[t] <= 0.0) continue;
    model.support_vectors.row(row) = X.row(static_cast<Eigen::Index>(t));
    model.dual_coefs(row) = res.alpha[t] * y[t];
    ++row;
  }
  model.intercept = -res.rho;
  model.gamma = gamma;
  model.converged = res.converged;
  model.iterations = res.iterations;
  return model;
}

Eigen::VectorXd raw_decision(const SvmModel& model, const Eigen::MatrixXd& X) {
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    double f = model.intercept;
    for (Eigen::Index s = 0; s < model.support_vectors.rows(); ++s) {
      f += model.dual_coefs(s) * rbf(model.support_vectors, s, X, r, model.gamma);
    }
    out(r) = f;
  }
  return out;
}

// Out-of-fold decision values for calibration, stratified folds.
std::vector<double> out_of_fold_decisions(const Eigen::MatrixXd& X, const std::vector<signed char>& y,
                                          const SvmConfig& config, double c_pos, double c_neg, double gamma) {
  const std::size_t n = y.size();
  const int folds = std::max(2, config.calibration_folds);
  std::vector<int> fold_of(n, 0);
  Rng rng(mix_seed(config.seed, 0xCA1));
  for (signed char cls : {static_cast<signed char>(1), static_cast<signed char>(-1)}) {
    std::vector<std::size_t> members;
    for (std::size_t t = 0; t < n; ++t) if (y[t] == cls) members.push_back(t);
    rng.shuffle(members);
    for (std::size_t r = 0; r < members.size(); ++r) fold_of[members[r]] = static_cast<int>(r % static_cast<std::size_t>(folds));
  }
  std::vector<double> dec(n, 0.0);
  for (int fold = 0; fold < folds; ++fold) {
    std::vector<Eigen::Index> train, held;
    std::size_t pos = 0, neg = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (fold_of[t] == fold) {
        held.push_back(static_cast<Eigen::Index>(t));
      } else {
        train.push_back(static_cast<Eigen::Index>(t));
        (y[t] > 0 ? pos : neg)++;
      }
    }
    if (held.empty()) continue;
    if (pos == 0 || neg == 0) {
      const double v = pos > 0 ? 1.0 : (neg > 0 ? -1.0 : 0.0);
      for (auto t : held) dec[static_cast<std::size_t>(t)] = v;
      continue;
    }
    Eigen::MatrixXd Xt = X(train, Eigen::all);
    std::vector<signed char> yt;
    for (auto t : train) yt.push_back(y[static_cast<std::size_t>(t)]);
    const SmoResult sub = solve_smo(Xt, yt, c_pos, c_neg, gamma, config.tolerance, config.max_passes, config.cache_mb);
    const SvmModel m = assemble(Xt, yt, sub, gamma);
    const Eigen::MatrixXd Xh = X(held, Eigen::all);
    const Eigen::VectorXd f = raw_decision(m, Xh);
    for (std::size_t r = 0; r < held.size(); ++r) dec[static_cast<std::size_t>(held[r])] = f(static_cast<Eigen::Index>(r));
  }
  return dec;
}

}  // namespace

double resolve_gamma(const SvmConfig& config, const Eigen::MatrixXd& X) {
  if (config.gamma) {
    if (!(*config.gamma > 0.0)) fail(ErrorKind::InvalidSpec, "gamma must be positive");
    return *config.gamma;
  }
  const double mean = X.mean();
  const double var = (X.array() - mean).square().mean();
  return var > 0.0 ? 1.0 / (static_cast<double>(X.cols()) * var) : 1.0;
}

double platt_probability(const PlattSigmoid& sigmoid, double decision) {
  const double z = sigmoid.A * decision + sigmoid.B;
  return z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

PlattSigmoid fit_platt(std::span<const double> decisions, std::span<const bool> positive) {
  if (decisions.size() != positive.size()) fail(ErrorKind::LengthMismatch, "decision/label length mismatch");
  const std::size_t n = decisions.size();
  double prior1 = 0.0, prior0 = 0.0;
  for (bool p : positive) (p ? prior1 : prior0) += 1.0;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = positive[i] ? hi : lo;

  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10, kSigma = 1e-12, kEps = 1e-5;
  double A = 0.0, B = std::log((prior0 + 1.0) / (prior1 + 1.0));
  auto objective = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = decisions[i] * a + b;
      f += z >= 0.0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
  };
  double fval = objective(A, B);
  for (int iter = 0; iter < kMaxIter; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = decisions[i] * A + B;
      double p, q;
      if (z >= 0.0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += decisions[i] * decisions[i] * d2;
      h22 += d2;
      h21 += decisions[i] * d2;
      const double d1 = t[i] - p;
      g1 += decisions[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < kEps && std::abs(g2) < kEps) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= kMinStep) {
      const double nA = A + step * dA, nB = B + step * dB;
      const double nf = objective(nA, nB);
      if (nf < fval + 1e-4 * step * gd) {
        A = nA;
        B = nB;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < kMinStep) break;
  }
  return {A, B};
}

SvmModel svm_fit(const Eigen::MatrixXd& X, std::span<const bool> positive, const SvmConfig& config) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (positive.size() != n) fail(ErrorKind::LengthMismatch, "label count differs from row count");
  if (n < 2) fail(ErrorKind::SingleClass, "SVM needs at least two samples");
  if (!(config.C > 0.0)) fail(ErrorKind::InvalidSpec, "C must be positive");
  std::vector<signed char> y(n);
  std::size_t n_pos = 0;
  for (std::size_t t = 0; t < n; ++t) {
    y[t] = positive[t] ? 1 : -1;
    n_pos += positive[t] ? 1 : 0;
  }
  if (n_pos == 0 || n_pos == n) fail(ErrorKind::SingleClass, "training labels contain a single class");

  double c_pos = config.C, c_neg = config.C;
  if (config.class_weight == ClassWeight::Balanced) {
    c_pos *= static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
    c_neg *= static_cast<double>(n) / (2.0 * static_cast<double>(n - n_pos));
  }
  const double gamma = resolve_gamma(config, X);
  const SmoResult res = solve_smo(X, y, c_pos, c_neg, gamma, config.tolerance, config.max_passes, config.cache_mb);
  SvmModel model = assemble(X, y, res, gamma);
  model.C_positive = c_pos;
  model.C_negative = c_neg;
  model.config = config;
  if (config.probability) {
    const auto dec = out_of_fold_decisions(X, y, config, c_pos, c_neg, gamma);
    model.platt = fit_platt(dec, positive);
  }
  return model;
}

SvmModel svm_fit(const Eigen::MatrixXd& X, std::span<const Label> labels, const SvmConfig& config) {
  std::unique_ptr<bool[]> flags(new bool[labels.size()]);
  for (std::size_t i = 0; i < labels.size(); ++i) flags[i] = labels[i] == Label::Ctc;
  return svm_fit(X, std::span<const bool>(flags.get(), labels.size()), config);
}

Eigen::VectorXd decision_values(const SvmModel& model, const Eigen::MatrixXd& X) {
  if (X.rows() == 0) return Eigen::VectorXd(0);
  if (X.cols() != model.feature_dim()) {
    fail(ErrorKind::DimensionMismatch, "feature width " + std::to_string(X.cols()) + " differs from model width " +
                                           std::to_string(model.feature_dim()));
  }
  return raw_decision(model, X);
}

Eigen::VectorXd predict_proba(const SvmModel& model, const Eigen::MatrixXd& X) {
  if (!model.platt) fail(ErrorKind::NoCalibration, "model was fitted without probability calibration");
  Eigen::VectorXd f = decision_values(model, X);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = platt_probability(*model.platt, f(i));
  return f;
}

std::vector<bool> predict_positive(const SvmModel& model, const Eigen::MatrixXd& X, double threshold) {
  std::vector<bool> out(static_cast<std::size_t>(X.rows()));
  if (model.platt) {
    const Eigen::VectorXd p = predict_proba(model, X);
    for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) >= threshold;
  } else {
    const Eigen::VectorXd f = decision_values(model, X);
    for (Eigen::Index i = 0; i < f.size(); ++i) out[static_cast<std::size_t>(i)] = f(i) > 0.0 && std::abs(f(i)) >= 1e-12;
  }
  return out;
}

std::vector<Label> predict(const SvmModel& model, const Eigen::MatrixXd& X, double threshold) {
  const auto pos = predict_positive(model, X, threshold);
  std::vector<Label> out(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) out[i] = pos[i] ? Label::Ctc : Label::NonCtc;
  return out;
}

double dual_objective(const SvmModel& model) {
  const Eigen::MatrixXd& S = model.support_vectors;
  double linear = model.dual_coefs.cwiseAbs().sum();
  double quad = 0.0;
  for (Eigen::Index a = 0; a < S.rows(); ++a) {
    for (Eigen::Index b = 0; b < S.rows(); ++b) {
      quad += model.dual_coefs(a) * model.dual_coefs(b) * rbf(S, a, S, b, model.gamma);
    }
  }
  return linear - 0.5 * quad;
}

double kkt_residual(const SvmModel& model, const Eigen::MatrixXd& X, std::span<const bool> positive) {
  // Recover alpha_i for every training row by matching support vectors.
  const Eigen::VectorXd f = decision_values(model, X);
  std::vector<double> alpha(static_cast<std::size_t>(X.rows()), 0.0);
  std::vector<char> used(static_cast<std::size_t>(model.support_vectors.rows()), 0);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (Eigen::Index s = 0; s < model.support_vectors.rows(); ++s) {
      if (!used[static_cast<std::size_t>(s)] && (model.support_vectors.row(s) - X.row(r)).squaredNorm() == 0.0) {
        used[static_cast<std::size_t>(s)] = 1;
        alpha[static_cast<std::size_t>(r)] = std::abs(model.dual_coefs(s));
        break;
      }
    }
  }
  // Gradient of the dual (minimisation form) is y_i f_i - y_i b - 1, i.e. y_i (f_i - b) - 1.
  double g_max = -std::numeric_limits<double>::infinity(), g_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const auto t = static_cast<std::size_t>(r);
    const double y = positive[t] ? 1.0 : -1.0;
    const double bound = positive[t] ? model.C_positive : model.C_negative;
    const double grad = y * (f(r) - model.intercept) - 1.0;
    const double v = -y * grad;
    const bool up = y > 0 ? alpha[t] < bound : alpha[t] > 0.0;
    const bool low = y > 0 ? alpha[t] > 0.0 : alpha[t] < bound;
    if (up) g_max = std::max(g_max, v);
    if (low) g_min = std::min(g_min, v);
  }
  return std::max(0.0, g_max - g_min);
}

void to_json(nlohmann::json& j, const SvmModel& model) {
  std::vector<std::vector<double>> sv(static_cast<std::size_t>(model.support_vectors.rows()));
  for (Eigen::Index r = 0; r < model.support_vectors.rows(); ++r) {
    sv[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(model.support_vectors.cols()));
    for (Eigen::Index c = 0; c < model.support_vectors.cols(); ++c) sv[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = model.support_vectors(r, c);
  }
  const auto& cfg = model.config;
  j = nlohmann::json{
      {"format", "hilctc.svm"},
      {"version", 1},
      {"classes", {model.classes.first, model.classes.second}},
      {"support_vectors", sv},
      {"dual_coefs", std::vector<double>(model.dual_coefs.data(), model.dual_coefs.data() + model.dual_coefs.size())},
      {"intercept", model.intercept},
      {"gamma", model.gamma},
      {"C_positive", model.C_positive},
      {"C_negative", model.C_negative},
      {"converged", model.converged},
      {"iterations", model.iterations},
      {"platt", model.platt ? nlohmann::json{{"A", model.platt->A}, {"B", model.platt->B}} : nlohmann::json(nullptr)},
      {"config",
       {{"C", cfg.C},
        {"gamma", cfg.gamma ? nlohmann::json(*cfg.gamma) : nlohmann::json("scale")},
        {"class_weight", cfg.class_weight == ClassWeight::Balanced ? "balanced" : "none"},
        {"break_ties", cfg.break_ties},
        {"probability", cfg.probability},
        {"tolerance", cfg.tolerance},
        {"max_passes", cfg.max_passes},
        {"calibration_folds", cfg.calibration_folds},
        {"cache_mb", cfg.cache_mb},
        {"seed", cfg.seed}}},
  };
}

void from_json(const nlohmann::json& j, SvmModel& model) {
  if (j.value("format", std::string()) != "hilctc.svm") fail(ErrorKind::Parse, "not an SVM model document");
  if (j.value("version", 0) != 1) fail(ErrorKind::Parse, "unsupported SVM model version");
  const auto classes = j.at("classes").get<std::vector<std::string>>();
  if (classes.size() != 2) fail(ErrorKind::Parse, "model must name two classes");
  model.classes = {classes[0], classes[1]};
  const auto sv = j.at("support_vectors").get<std::vector<std::vector<double>>>();
  const auto coefs = j.at("dual_coefs").get<std::vector<double>>();
  if (sv.size() != coefs.size()) fail(ErrorKind::Parse, "support vector / coefficient count mismatch");
  const std::size_t width = sv.empty() ? 0 : sv.front().size();
  model.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < sv.size(); ++r) {
    if (sv[r].size() != width) fail(ErrorKind::Parse, "ragged support vectors");
    for (std::size_t c = 0; c < width; ++c) model.support_vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sv[r][c];
  }
  model.dual_coefs = Eigen::Map<const Eigen::VectorXd>(coefs.data(), static_cast<Eigen::Index>(coefs.size()));
  model.intercept = j.at("intercept").get<double>();
  model.gamma = j.at("gamma").get<double>();
  model.C_positive = j.value("C_positive", 1.0);
  model.C_negative = j.value("C_negative", 1.0);
  model.converged = j.value("converged", true);
  model.iterations = j.value("iterations", 0L);
  if (j.contains("platt") && !j.at("platt").is_null()) {
    model.platt = PlattSigmoid{j.at("platt").at("A").get<double>(), j.at("platt").at("B").get<double>()};
  } else {
    model.platt.reset();
  }
  if (j.contains("config")) {
    const auto& c = j.at("config");
    SvmConfig cfg;
    cfg.C = c.value("C", 1.0);
    if (c.contains("gamma") && c.at("gamma").is_number()) cfg.gamma = c.at("gamma").get<double>();
    cfg.class_weight = c.value("class_weight", std::string("balanced")) == "none" ? ClassWeight::None : ClassWeight::Balanced;
    cfg.break_ties = c.value("break_ties", true);
    cfg.probability = c.value("probability", true);
    cfg.tolerance = c.value("tolerance", 1e-3);
    cfg.max_passes = c.value("max_passes", 1'000'000L);
    cfg.calibration_folds = c.value("calibration_folds", 3);
    cfg.cache_mb = c.value("cache_mb", 10'000.0);
    cfg.seed = c.value("seed", std::uint64_t{0});
    model.config = cfg;
  }
}

SvmModel noise_filter_fit(const Eigen::MatrixXd& X_noisy, const Eigen::MatrixXd& X_clean, const SvmConfig& config) {
  if (X_noisy.rows() == 0 || X_clean.rows() == 0) fail(ErrorKind::SingleClass, "noise filter needs both noisy and clean examples");
  if (X_noisy.cols() != X_clean.cols()) fail(ErrorKind::DimensionMismatch, "noisy and clean feature widths differ");
  Eigen::MatrixXd X(X_noisy.rows() + X_clean.rows(), X_noisy.cols());
  X << X_noisy, X_clean;
  std::unique_ptr<bool[]> noisy(new bool[static_cast<std::size_t>(X.rows())]);
  for (Eigen::Index i = 0; i < X.rows(); ++i) noisy[static_cast<std::size_t>(i)] = i < X_noisy.rows();
  SvmModel model = svm_fit(X, std::span<const bool>(noisy.get(), static_cast<std::size_t>(X.rows())), config);
  model.classes = {"valid", "noisy"};
  return model;
}

NoiseFilterResult noise_filter_apply(const SvmModel& model, const std::vector<CellRecord>& records,
                                     const PcaModel* pca, double threshold) {
  NoiseFilterResult result;
  if (records.empty()) return result;
  Eigen::MatrixXd X = embedding_matrix(records);
  if (pca) X = pca_transform(*pca, X);
  const auto noisy = predict_positive(model, X, threshold);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (noisy[i]) {
      ++result.dropped;
    } else {
      result.kept.push_back(records[i]);
    }
  }
  return result;
}

void to_json(nlohmann::json& j, const FinalModel& model) {
  j = nlohmann::json{{"format", "hilctc.final_model"}, {"version", 1}, {"pca", model.pca}, {"svm", model.svm}};
}

void from_json(const nlohmann::json& j, FinalModel& model) {
  if (j.value("format", std::string()) != "hilctc.final_model") fail(ErrorKind::MissingModel, "not a final model document");
  model.pca = j.at("pca").get<PcaModel>();
  model.svm = j.at("svm").get<SvmModel>();
}

}  // namespace hilctc
