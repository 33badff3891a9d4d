#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oracle {

SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, double tol, int max_sweeps) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
    if (off < tol) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  SymmetricEigen out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows(), d = x.cols();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) mean[static_cast<std::size_t>(j)] += x(i, j);
    mean[static_cast<std::size_t>(j)] /= static_cast<double>(n);
  }
  Eigen::MatrixXd cov(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        s += (x(i, a) - mean[static_cast<std::size_t>(a)]) * (x(i, b) - mean[static_cast<std::size_t>(b)]);
      }
      cov(a, b) = s / static_cast<double>(n - 1);
    }
  }
  return cov;
}

double euclidean(const Eigen::MatrixXd& points, Eigen::Index i, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const double d = points(i, c) - points(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

// Projection onto {0 <= a <= ub, y.a = 0}: a_i = clip(v_i - mu y_i), mu by bisection.
Eigen::VectorXd project(const Eigen::VectorXd& v, const Eigen::VectorXd& y, const Eigen::VectorXd& ub) {
  auto at = [&](double mu) {
    Eigen::VectorXd a(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) a(i) = std::clamp(v(i) - mu * y(i), 0.0, ub(i));
    return a;
  };
  double lo = -1.0, hi = 1.0;
  while (y.dot(at(lo)) < 0) lo *= 2;
  while (y.dot(at(hi)) > 0) hi *= 2;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (y.dot(at(mid)) > 0 ? lo : hi) = mid;
  }
  return at(0.5 * (lo + hi));
}

}  // namespace

double svm_dual_qp(const Eigen::MatrixXd& x, const std::vector<bool>& positive, double gamma, double c_positive,
                   double c_negative, Eigen::VectorXd* alpha) {
  const Eigen::Index n = x.rows();
  Eigen::VectorXd y(n), ub(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = positive[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    ub(i) = positive[static_cast<std::size_t>(i)] ? c_positive : c_negative;
  }
  Eigen::MatrixXd q(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = euclidean(x, i, j);
      q(i, j) = y(i) * y(j) * std::exp(-gamma * d * d);
    }
  }
  const double lipschitz = std::max(jacobi_eigen(q).values(0), 1e-12);
  auto objective = [&](const Eigen::VectorXd& a) { return a.sum() - 0.5 * a.dot(q * a); };

  Eigen::VectorXd a = Eigen::VectorXd::Zero(n), z = a;
  double t = 1.0, best = objective(a);
  for (int it = 0; it < 200000; ++it) {
    const Eigen::VectorXd grad = Eigen::VectorXd::Ones(n) - q * z;  // ascent direction
    const Eigen::VectorXd next = project(z + grad / lipschitz, y, ub);
    const double f = objective(next);
    if (f < best - 1e-15) {  // restart on non-monotone step
      t = 1.0;
      z = a;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = next + ((t - 1.0) / t_next) * (next - a);
    const double step = (next - a).norm();
    a = next;
    t = t_next;
    best = f;
    if (step < 1e-13) break;
  }
  if (alpha) *alpha = a;
  return best;
}

std::vector<double> core_distances(const Eigen::MatrixXd& points, int k) {
  const Eigen::Index n = points.rows();
  std::vector<double> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> d;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) d.push_back(euclidean(points, i, j));
    }
    std::sort(d.begin(), d.end());
    out.push_back(d.at(static_cast<std::size_t>(k - 1)));
  }
  return out;
}

std::vector<double> kruskal_mst_weights(const Eigen::MatrixXd& points, const std::vector<double>& core) {
  struct Edge {
    double w;
    std::size_t a, b;
  };
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = euclidean(points, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      edges.push_back({std::max({core[i], core[j], d}), i, j});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.w < r.w; });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<double> tree;
  for (const auto& e : edges) {
    const auto ra = root(e.a), rb = root(e.b);
    if (ra == rb) continue;
    parent[ra] = rb;
    tree.push_back(e.w);
  }
  return tree;
}

double trustworthiness(const Eigen::MatrixXd& high, const Eigen::MatrixXd& low, int k) {
  const Eigen::Index n = high.rows();
  auto ordered = [&](const Eigen::MatrixXd& m, Eigen::Index i) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return euclidean(m, i, a) < euclidean(m, i, b); });
    return idx;
  };
  double penalty = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto hi = ordered(high, i);
    std::vector<long> rank(static_cast<std::size_t>(n), 0);
    for (std::size_t r = 0; r < hi.size(); ++r) rank[static_cast<std::size_t>(hi[r])] = static_cast<long>(r) + 1;
    const auto lo = ordered(low, i);
    for (int r = 0; r < k; ++r) {
      const long rr = rank[static_cast<std::size_t>(lo[static_cast<std::size_t>(r)])];
      if (rr > k) penalty += static_cast<double>(rr - k);
    }
  }
  const double nn = static_cast<double>(n), kk = k;
  return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * penalty;
}

std::pair<double, double> newton_platt(const std::vector<double>& f, const std::vector<bool>& positive) {
  double n_pos = 0, n_neg = 0;
  for (bool p : positive) (p ? n_pos : n_neg) += 1;
  std::vector<double> t;
  for (bool p : positive) t.push_back(p ? (n_pos + 1) / (n_pos + 2) : 1.0 / (n_neg + 2));
  // p_i = 1 / (1 + exp(A f_i + B)); loss = -sum t log p + (1 - t) log(1 - p)
  auto loss = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double z = a * f[i] + b;
      const double log_p = -std::log1p(std::exp(z));       // log(1 / (1 + e^z))
      const double log_q = z - std::log1p(std::exp(z));    // log(e^z / (1 + e^z))
      s -= t[i] * log_p + (1 - t[i]) * log_q;
    }
    return s;
  };
  double a = 0.0, b = 0.0;
  for (int it = 0; it < 500; ++it) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double q = 1.0 / (1.0 + std::exp(-(a * f[i] + b)));  // 1 - p
      const double r = q - (1 - t[i]);
      ga += r * f[i];
      gb += r;
      const double w = q * (1 - q);
      haa += w * f[i] * f[i];
      hab += w * f[i];
      hbb += w;
    }
    if (std::hypot(ga, gb) < 1e-13) break;
    const double det = haa * hbb - hab * hab;
    double da = -(hbb * ga - hab * gb) / det, db = -(-hab * ga + haa * gb) / det;
    double step = 1.0;
    const double current = loss(a, b);
    while (step > 1e-12 && loss(a + step * da, b + step * db) > current) step /= 2;
    a += step * da;
    b += step * db;
  }
  return {a, b};
}

Tally tally(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("length mismatch");
  Tally t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++t.tp;
    if (predicted[i] && !truth[i]) ++t.fp;
    if (!predicted[i] && truth[i]) ++t.fn;
    if (!predicted[i] && !truth[i]) ++t.tn;
  }
  return t;
}

}  // namespace oracle
