#include "hilctc/reduce.hpp"

#include <algorithm>
#include <limits>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/knn.hpp"
#include "hilctc/random.hpp"

namespace hilctc {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// PCA

PcaModel pca_fit(const Eigen::MatrixXd& X, Eigen::Index k) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) fail(ErrorKind::DegenerateInput, "PCA needs at least two rows");
  if (k < 1 || k > std::min(n, d)) {
    fail(ErrorKind::InvalidSpec, "component count must lie in [1, min(N, D)]");
  }
  PcaModel model;
  model.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorKind::DegenerateInput, "covariance eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& vectors = solver.eigenvectors();

  const double largest = std::max(values(d - 1), 0.0);
  const double rank_tol = largest * static_cast<double>(d) * 1e-12;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d; ++i) rank += values(i) > rank_tol && values(i) > 0.0 ? 1 : 0;
  model.rank_deficient = rank < k;

  model.components.resize(k, d);
  model.explained_variance.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const Eigen::Index src = d - 1 - c;
    Eigen::RowVectorXd v = vectors.col(src).transpose();
    Eigen::Index pivot = 0;
    for (Eigen::Index j = 1; j < d; ++j) {
      if (std::abs(v(j)) > std::abs(v(pivot))) pivot = j;
    }
    if (v(pivot) < 0.0) v = -v;
    model.components.row(c) = v;
    model.explained_variance(c) = std::max(values(src), 0.0);
  }
  return model;
}

Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.input_dim()) {
    fail(ErrorKind::DimensionMismatch, "PCA input has " + std::to_string(X.cols()) + " columns, model expects " +
                                           std::to_string(model.input_dim()));
  }
  return (X.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Eigen::MatrixXd pca_reconstruct(const PcaModel& model, const Eigen::MatrixXd& projected) {
  if (projected.cols() != model.output_dim()) fail(ErrorKind::DimensionMismatch, "projected width mismatch");
  return (projected * model.components).rowwise() + model.mean.transpose();
}

void to_json(nlohmann::json& j, const PcaModel& model) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
    rows.emplace_back(static_cast<std::size_t>(model.components.cols()));
    for (Eigen::Index c = 0; c < model.components.cols(); ++c) rows.back()[c] = model.components(r, c);
  }
  j = nlohmann::json{
      {"mean", std::vector<double>(model.mean.data(), model.mean.data() + model.mean.size())},
      {"components", rows},
      {"explained_variance", std::vector<double>(model.explained_variance.data(),
                                                 model.explained_variance.data() + model.explained_variance.size())},
      {"rank_deficient", model.rank_deficient},
  };
}

void from_json(const nlohmann::json& j, PcaModel& model) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto rows = j.at("components").get<std::vector<std::vector<double>>>();
  const auto var = j.at("explained_variance").get<std::vector<double>>();
  model.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  model.components.resize(static_cast<Eigen::Index>(rows.size()), model.mean.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != mean.size()) fail(ErrorKind::Parse, "PCA component width mismatch");
    for (std::size_t c = 0; c < mean.size(); ++c) model.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  model.explained_variance = Eigen::Map<const Eigen::VectorXd>(var.data(), static_cast<Eigen::Index>(var.size()));
  model.rank_deficient = j.value("rank_deficient", false);
}

// ---------------------------------------------------------------------------
// 2-D neighbour embedding

std::pair<double, double> fit_curve_ab(double spread, double min_dist) {
  constexpr int kSamples = 300;
  std::vector<double> xs(kSamples), ys(kSamples);
  for (int i = 0; i < kSamples; ++i) {
    xs[i] = spread * 3.0 * i / (kSamples - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto residual = [&](double a, double b) {
    double s = 0.0;
    for (int i = 0; i < kSamples; ++i) {
      const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b)) - ys[i];
      s += r * r;
    }
    return s;
  };
  // Levenberg-Marquardt on two parameters.
  double a = 1.0, b = 1.0, mu = 1e-3;
  double current = residual(a, b);
  for (int iter = 0; iter < 500; ++iter) {
    double jtj[2][2] = {{0, 0}, {0, 0}};
    double jtr[2] = {0, 0};
    for (int i = 0; i < kSamples; ++i) {
      const double x = xs[i];
      const double p = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
      const double denom = 1.0 + a * p;
      const double f = 1.0 / denom;
      const double r = f - ys[i];
      const double da = -p / (denom * denom);
      const double db = x > 0.0 ? -a * p * 2.0 * std::log(x) / (denom * denom) : 0.0;
      jtj[0][0] += da * da;
      jtj[0][1] += da * db;
      jtj[1][1] += db * db;
      jtr[0] += da * r;
      jtr[1] += db * r;
    }
    jtj[1][0] = jtj[0][1];
    bool improved = false;
    while (mu < 1e12) {
      const double m00 = jtj[0][0] * (1.0 + mu), m11 = jtj[1][1] * (1.0 + mu), m01 = jtj[0][1];
      const double det = m00 * m11 - m01 * m01;
      const double step_a = -(m11 * jtr[0] - m01 * jtr[1]) / det;
      const double step_b = -(m00 * jtr[1] - m01 * jtr[0]) / det;
      const double na = a + step_a, nb = b + step_b;
      if (na > 0.0 && nb > 0.0) {
        const double next = residual(na, nb);
        if (next < current) {
          const double gain = current - next;
          a = na;
          b = nb;
          current = next;
          mu = std::max(mu * 0.3, 1e-12);
          improved = true;
          if (gain < 1e-16) iter = 500;
          break;
        }
      }
      mu *= 10.0;
    }
    if (!improved) break;
  }
  return {a, b};
}

namespace {

struct Edge {
  std::size_t head;
  std::size_t tail;
  double weight;
};

// Fuzzy simplicial set: per-point smooth kNN memberships, symmetrised by probabilistic union.
std::vector<Edge> fuzzy_graph(const KnnGraph& graph, double n_neighbors) {
  const std::size_t n = graph.size();
  const std::size_t k = graph.k;
  const double target = std::log2(n_neighbors);
  double mean_all = 0.0;
  for (double d : graph.distances) mean_all += d;
  mean_all /= static_cast<double>(graph.distances.size());

  std::vector<std::vector<std::pair<std::size_t, double>>> directed(n);
  for (std::size_t i = 0; i < n; ++i) {
    double rho = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      if (graph.distance(i, r) > 0.0) {
        rho = graph.distance(i, r);
        break;
      }
    }
    double lo = 0.0, hi = INFINITY, mid = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
      double psum = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        const double d = graph.distance(i, r) - rho;
        psum += d > 0.0 ? std::exp(-d / mid) : 1.0;
      }
      if (std::abs(psum - target) < 1e-5) break;
      if (psum > target) {
        hi = mid;
        mid = (lo + hi) / 2.0;
      } else {
        lo = mid;
        mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
      }
    }
    double mean_i = 0.0;
    for (std::size_t r = 0; r < k; ++r) mean_i += graph.distance(i, r);
    mean_i /= static_cast<double>(k);
    const double floor_sigma = 1e-3 * (rho > 0.0 ? mean_i : mean_all);
    const double sigma = std::max(mid, floor_sigma);
    for (std::size_t r = 0; r < k; ++r) {
      const double d = graph.distance(i, r) - rho;
      const double w = d <= 0.0 || sigma == 0.0 ? 1.0 : std::exp(-d / sigma);
      directed[i].emplace_back(graph.neighbor(i, r), w);
    }
    std::sort(directed[i].begin(), directed[i].end());
  }
  auto lookup = [&](std::size_t from, std::size_t to) {
    const auto& row = directed[from];
    auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(to, -std::numeric_limits<double>::infinity()));
    return it != row.end() && it->first == to ? it->second : -1.0;  // -1: not a neighbour
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, w_ij] : directed[i]) {
      const double found = lookup(j, i);
      if (found >= 0.0 && j < i) continue;  // emitted from j's side already
      const double w_ji = std::max(found, 0.0);
      const double w = w_ij + w_ji - w_ij * w_ji;
      edges.push_back({i, j, w});
      edges.push_back({j, i, w});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.head != b.head ? a.head < b.head : a.tail < b.tail;
  });
  return edges;
}

// Eigenvectors 2 and 3 of the normalised graph Laplacian, by subspace iteration on (I + D^-1/2 W D^-1/2) / 2.
bool spectral_layout(const std::vector<Edge>& edges, std::size_t n, Rng& rng, Eigen::MatrixXd& out) {
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (const auto& e : edges) degree(static_cast<Eigen::Index>(e.head)) += e.weight;
  if ((degree.array() <= 0.0).any()) return false;
  const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();

  auto apply = [&](const Eigen::MatrixXd& V) {
    Eigen::MatrixXd R = 0.5 * V;
    for (const auto& e : edges) {
      const auto h = static_cast<Eigen::Index>(e.head), t = static_cast<Eigen::Index>(e.tail);
      const double s = 0.5 * e.weight * inv_sqrt(h) * inv_sqrt(t);
      R.row(h) += s * V.row(t);
    }
    return R;
  };

  const auto nn = static_cast<Eigen::Index>(n);
  Eigen::VectorXd trivial = degree.array().sqrt();
  trivial.normalize();
  Eigen::MatrixXd V(nn, 2);
  for (Eigen::Index i = 0; i < nn; ++i) {
    V(i, 0) = rng.normal();
    V(i, 1) = rng.normal();
  }
  auto orthonormalize = [&](Eigen::MatrixXd& M) {
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      M.col(c) -= trivial.dot(M.col(c)) * trivial;
      for (Eigen::Index p = 0; p < c; ++p) M.col(c) -= M.col(p).dot(M.col(c)) * M.col(p);
      const double norm = M.col(c).norm();
      if (!(norm > 1e-300)) return false;
      M.col(c) /= norm;
    }
    return true;
  };
  if (!orthonormalize(V)) return false;
  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::MatrixXd next = apply(V);
    if (!orthonormalize(next)) return false;
    const double change = std::abs(std::abs(next.col(0).dot(V.col(0))) - 1.0) +
                          std::abs(std::abs(next.col(1).dot(V.col(1))) - 1.0);
    V = std::move(next);
    if (change < 1e-12) break;
  }
  if (!V.allFinite()) return false;
  out = V;
  return true;
}

void rescale_columns(Eigen::MatrixXd& Y) {
  for (Eigen::Index c = 0; c < Y.cols(); ++c) {
    const double lo = Y.col(c).minCoeff(), hi = Y.col(c).maxCoeff();
    const double range = hi - lo;
    if (range > 0.0) Y.col(c) = 10.0 * (Y.col(c).array() - lo) / range;
  }
}

double clip(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

Projection2D project_2d(const Eigen::MatrixXd& X, const ProjectionParams& params, std::uint64_t seed,
                        std::vector<std::string> source_ids) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (params.n_neighbors < 2) fail(ErrorKind::InvalidSpec, "n_neighbors must be at least 2");
  if (n < static_cast<std::size_t>(params.n_neighbors) + 1) {
    fail(ErrorKind::TooFewPoints, "projection needs at least n_neighbors + 1 points");
  }
  if (!source_ids.empty() && source_ids.size() != n) {
    fail(ErrorKind::LengthMismatch, "source_ids must align with rows");
  }

  // Work in a canonical row order (by id when ids are given) so that the result
  // does not depend on the order rows were supplied in.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!source_ids.empty()) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return source_ids[a] < source_ids[b]; });
  }
  Eigen::MatrixXd canonical(X.rows(), X.cols());
  for (std::size_t i = 0; i < n; ++i) canonical.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(order[i]));

  const KnnGraph graph = knn(canonical, static_cast<std::size_t>(params.n_neighbors));
  std::vector<Edge> edges = fuzzy_graph(graph, params.n_neighbors);

  Rng rng(seed);
  Projection2D proj;
  proj.params = params;
  proj.seed = seed;

  Eigen::MatrixXd Y;
  if (spectral_layout(edges, n, rng, Y)) {
    const double expansion = 10.0 / Y.cwiseAbs().maxCoeff();
    Y *= expansion;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      Y(i, 0) += 1e-4 * rng.normal();
      Y(i, 1) += 1e-4 * rng.normal();
    }
  } else {
    proj.spectral_init = false;
    Y.resize(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      Y(i, 0) = 20.0 * rng.uniform() - 10.0;
      Y(i, 1) = 20.0 * rng.uniform() - 10.0;
    }
  }
  rescale_columns(Y);

  // Drop edges too weak to be sampled once over the whole schedule.
  double max_w = 0.0;
  for (const auto& e : edges) max_w = std::max(max_w, e.weight);
  const double epochs = params.n_epochs;
  std::erase_if(edges, [&](const Edge& e) { return e.weight < max_w / epochs; });

  const auto [a, b] = fit_curve_ab(params.spread, params.min_dist);
  std::vector<double> per_sample(edges.size()), next_sample(edges.size()), per_negative(edges.size()),
      next_negative(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    per_sample[e] = max_w / edges[e].weight;
    next_sample[e] = per_sample[e];
    per_negative[e] = per_sample[e] / params.negative_sample_rate;
    next_negative[e] = per_negative[e];
  }

  for (int epoch = 0; epoch < params.n_epochs; ++epoch) {
    const double alpha = params.learning_rate * (1.0 - static_cast<double>(epoch) / epochs);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (next_sample[e] > epoch) continue;
      const auto i = static_cast<Eigen::Index>(edges[e].head);
      const auto j = static_cast<Eigen::Index>(edges[e].tail);
      double dx = Y(i, 0) - Y(j, 0), dy = Y(i, 1) - Y(j, 1);
      double d2 = dx * dx + dy * dy;
      if (d2 > 0.0) {
        const double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
        const double gx = clip(coeff * dx), gy = clip(coeff * dy);
        Y(i, 0) += gx * alpha;
        Y(i, 1) += gy * alpha;
        Y(j, 0) -= gx * alpha;
        Y(j, 1) -= gy * alpha;
      }
      next_sample[e] += per_sample[e];

      const int n_neg = static_cast<int>((epoch - next_negative[e]) / per_negative[e]);
      for (int s = 0; s < n_neg; ++s) {
        const auto k = static_cast<Eigen::Index>(rng.index(n));
        if (k == i) continue;
        dx = Y(i, 0) - Y(k, 0);
        dy = Y(i, 1) - Y(k, 1);
        d2 = dx * dx + dy * dy;
        double gx = 4.0, gy = 4.0;
        if (d2 > 0.0) {
          const double coeff = 2.0 * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
          gx = clip(coeff * dx);
          gy = clip(coeff * dy);
        }
        Y(i, 0) += gx * alpha;
        Y(i, 1) += gy * alpha;
      }
      next_negative[e] += n_neg * per_negative[e];
    }
  }

  if (!Y.allFinite()) fail(ErrorKind::DegenerateInput, "projection diverged");
  proj.coords.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) proj.coords.row(static_cast<Eigen::Index>(order[i])) = Y.row(static_cast<Eigen::Index>(i));
  proj.source_ids = std::move(source_ids);
  return proj;
}

void write_projection_csv(std::ostream& out, const Projection2D& proj, const std::vector<int>& clusters) {
  out << "cell_id,x,y,cluster\n";
  for (Eigen::Index i = 0; i < proj.coords.rows(); ++i) {
    const auto row = static_cast<std::size_t>(i);
    out << (proj.source_ids.empty() ? std::to_string(i) : proj.source_ids[row]) << ','
        << format_double(proj.coords(i, 0)) << ',' << format_double(proj.coords(i, 1)) << ','
        << (clusters.empty() ? -1 : clusters[row]) << '\n';
  }
}

void write_projection_csv(const std::filesystem::path& path, const Projection2D& proj,
                          const std::vector<int>& clusters) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  write_projection_csv(out, proj, clusters);
}

}  // namespace hilctc
