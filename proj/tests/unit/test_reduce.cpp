#include <doctest.h>

#include <cstring>

#include "hilctc/error.hpp"
#include "hilctc/knn.hpp"
#include "hilctc/reduce.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace hilctc;

namespace {

// Max deviation between PCA rows and oracle eigenvector columns, allowing a sign flip per component.
double component_gap(const PcaModel& m, const oracle::SymmetricEigen& ref) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < m.components.rows(); ++k) {
    const Eigen::VectorXd c = m.components.row(k).transpose();
    const double same = (c - ref.vectors.col(k)).cwiseAbs().maxCoeff();
    const double flip = (c + ref.vectors.col(k)).cwiseAbs().maxCoeff();
    worst = std::max(worst, std::min(same, flip));
  }
  return worst;
}

// Perceptron; returns training accuracy after convergence or the iteration cap.
double linear_separability(const Eigen::MatrixXd& x, const std::vector<int>& y) {
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  for (int epoch = 0; epoch < 1000; ++epoch) {
    int mistakes = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::Vector3d p(x(i, 0), x(i, 1), 1.0);
      const int t = y[static_cast<std::size_t>(i)] ? 1 : -1;
      if (t * w.dot(p) <= 0) {
        w += t * p;
        ++mistakes;
      }
    }
    if (mistakes == 0) break;
  }
  int ok = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Vector3d p(x(i, 0), x(i, 1), 1.0);
    ok += (w.dot(p) > 0) == (y[static_cast<std::size_t>(i)] == 1);
  }
  return static_cast<double>(ok) / static_cast<double>(x.rows());
}

}  // namespace

TEST_SUITE("reduce") {

TEST_CASE("PCA matches the Jacobi oracle on a random 50x8 matrix") {
  Rng rng(21);
  const Eigen::MatrixXd X = testing::random_matrix(rng, 50, 8);
  const auto model = pca_fit(X, 4);
  const auto ref = oracle::jacobi_eigen(oracle::sample_covariance(X));
  CHECK(component_gap(model, ref) < 1e-6);
  for (Eigen::Index k = 0; k < 4; ++k) CHECK(model.explained_variance(k) == doctest::Approx(ref.values(k)).epsilon(1e-9));

  const Eigen::MatrixXd gram = model.components * model.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index k = 0; k < 4; ++k) {
    Eigen::Index arg;
    model.components.row(k).cwiseAbs().maxCoeff(&arg);
    CHECK(model.components(k, arg) > 0.0);
  }
}

TEST_CASE("PCA transform matches the oracle projection") {
  Rng rng(22);
  const Eigen::MatrixXd X = testing::random_matrix(rng, 10, 8);
  const auto model = pca_fit(X, 3);
  const auto ref = oracle::jacobi_eigen(oracle::sample_covariance(X));
  const Eigen::MatrixXd Z = pca_transform(model, X);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  double worst = 0.0;
  for (Eigen::Index k = 0; k < 3; ++k) {
    Eigen::VectorXd col = ref.vectors.col(k);
    if (col.dot(model.components.row(k).transpose()) < 0) col = -col;
    const Eigen::VectorXd expected = (X.rowwise() - mean) * col;
    worst = std::max(worst, (Z.col(k) - expected).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-6);
  CHECK(pca_transform(model, mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("PCA subspace, zero-variance and isometry cases") {
  Rng rng(23);
  const Eigen::MatrixXd basis = testing::random_matrix(rng, 2, 5);
  const Eigen::MatrixXd X = testing::random_matrix(rng, 40, 2) * basis;
  const auto sub = pca_fit(X, 2);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const double total = (X.rowwise() - mean).squaredNorm() / 39.0;
  CHECK(sub.explained_variance.sum() == doctest::Approx(total).epsilon(1e-10));
  CHECK((pca_reconstruct(sub, pca_transform(sub, X)) - X).cwiseAbs().maxCoeff() < 1e-8);

  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(6, 3, 2.5);
  const auto flat = pca_fit(same, 1);
  CHECK(flat.explained_variance(0) == doctest::Approx(0.0));
  CHECK(pca_transform(flat, same).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  const Eigen::MatrixXd Y = testing::random_matrix(rng, 12, 4);
  const auto full = pca_fit(Y, 4);
  const Eigen::MatrixXd P = pca_transform(full, Y);
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index j = 0; j < 12; ++j) CHECK(std::abs((P.row(i) - P.row(j)).norm() - (Y.row(i) - Y.row(j)).norm()) < 1e-8);
}

TEST_CASE("PCA reconstruction error does not grow with K") {
  Rng rng(24);
  const Eigen::MatrixXd X = testing::random_matrix(rng, 30, 6);
  double previous = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 1; k <= 6; ++k) {
    const auto m = pca_fit(X, k);
    const double err = (pca_reconstruct(m, pca_transform(m, X)) - X).squaredNorm();
    CHECK(err <= previous + 1e-9);
    previous = err;
  }
}

TEST_CASE("PCA contract errors") {
  Rng rng(25);
  CHECK_THROWS_AS(pca_fit(testing::random_matrix(rng, 1, 3), 1), Error);
  const auto m = pca_fit(testing::random_matrix(rng, 10, 3), 2);
  try {
    pca_transform(m, testing::random_matrix(rng, 2, 4));
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionMismatch);
  }
}

TEST_CASE("PCA ignores row order") {
  Rng rng(26);
  const Eigen::MatrixXd X = testing::random_matrix(rng, 25, 5);
  Eigen::MatrixXd Y = X.colwise().reverse();
  const auto a = pca_fit(X, 3), b = pca_fit(Y, 3);
  CHECK((a.components - b.components).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("kd-tree neighbours equal brute force") {
  Rng rng(27);
  const Eigen::MatrixXd X = testing::random_matrix(rng, 300, 3);
  const auto a = knn_brute_force(X, 7), b = knn_kd_tree(X, 7);
  CHECK(a.indices == b.indices);
  CHECK(a.distances == b.distances);
}

TEST_CASE("two separated blobs stay trustworthy and separable in 2-D") {
  Rng rng(28);
  // Isotropic blobs in more than a few dimensions cannot keep their local
  // neighbourhoods in 2-D; reference UMAP lands near 0.92 at eight dimensions.
  const Eigen::MatrixXd X = testing::two_blobs(rng, 100, 3, 10.0);
  const auto proj = project_2d(X, ProjectionParams{}, 99);
  CHECK(proj.coords.rows() == 200);
  CHECK(proj.coords.allFinite());
  CHECK(oracle::trustworthiness(X, proj.coords, 15) >= 0.95);
  std::vector<int> side(200, 0);
  for (int i = 100; i < 200; ++i) side[static_cast<std::size_t>(i)] = 1;
  CHECK(linear_separability(proj.coords, side) == doctest::Approx(1.0));
}

TEST_CASE("projection is byte-identical for a fixed seed") {
  Rng rng(29);
  const Eigen::MatrixXd X = testing::two_blobs(rng, 40, 4, 6.0);
  const auto a = project_2d(X, ProjectionParams{}, 5);
  const auto b = project_2d(X, ProjectionParams{}, 5);
  CHECK(std::memcmp(a.coords.data(), b.coords.data(), sizeof(double) * static_cast<std::size_t>(a.coords.size())) == 0);
}

TEST_CASE("projection needs more points than neighbours") {
  Rng rng(30);
  ProjectionParams p;
  try {
    project_2d(testing::random_matrix(rng, p.n_neighbors, 3), p, 1);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewPoints);
  }
}

}  // TEST_SUITE
