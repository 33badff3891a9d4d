#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "hilctc/cluster.hpp"
#include "hilctc/error.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace hilctc;

namespace {

std::set<std::set<std::size_t>> partition(const std::vector<int>& labels, const std::vector<std::size_t>& original) {
  std::map<int, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].insert(original[i]);
  std::set<std::set<std::size_t>> out;
  for (auto& [id, members] : groups) out.insert(members);
  return out;
}

}  // namespace

TEST_SUITE("cluster") {

TEST_CASE("core distances by hand") {
  Eigen::MatrixXd line(3, 2);
  line << 0, 0, 1, 0, 2, 0;
  CHECK(core_distances(line, 1) == std::vector<double>{1.0, 1.0, 1.0});

  Eigen::MatrixXd dup(5, 2);
  dup << 0, 0, 0, 0, 0, 0, 5, 5, 9, 9;
  const auto core = core_distances(dup, 2);
  CHECK(core[0] == 0.0);
  CHECK(core[1] == 0.0);
  CHECK(core[2] == 0.0);

  CHECK_THROWS_AS(core_distances(line, 3), Error);
}

TEST_CASE("core distances equal a brute-force sort") {
  Rng rng(41);
  for (int k : {1, 3, 7}) {
    const Eigen::MatrixXd pts = testing::random_matrix(rng, 20, 2);
    CHECK(core_distances(pts, k) == oracle::core_distances(pts, k));
  }
}

TEST_CASE("Prim MST matches Kruskal on the complete mutual-reachability graph") {
  Rng rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    const auto n = static_cast<Eigen::Index>(10 + rng.index(150));
    const Eigen::MatrixXd pts = testing::random_matrix(rng, n, 2);
    const int k = 1 + static_cast<int>(rng.index(5));
    const auto core = core_distances(pts, k);
    auto edges = mutual_reachability_mst(pts, core);
    std::vector<double> weights;
    for (const auto& e : edges) weights.push_back(e.weight);
    std::sort(weights.begin(), weights.end());
    CHECK(weights == oracle::kruskal_mst_weights(pts, core));
    for (const auto& e : edges) {
      CHECK(e.weight >= oracle::euclidean(pts, static_cast<Eigen::Index>(e.a), static_cast<Eigen::Index>(e.b)));
    }
  }
}

TEST_CASE("two separated blobs give two clusters and no background") {
  Rng rng(43);
  const Eigen::MatrixXd pts = testing::two_blobs(rng, 50, 2, 10.0);
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("p" + std::to_string(i));
  const auto model = hdbscan_fit(pts, 10, 10, ids);
  CHECK(model.cluster_count() == 2);
  CHECK(std::count(model.labels.begin(), model.labels.end(), kBackground) == 0);
  for (int i = 1; i < 50; ++i) CHECK(model.labels[static_cast<std::size_t>(i)] == model.labels[0]);
  for (int i = 51; i < 100; ++i) CHECK(model.labels[static_cast<std::size_t>(i)] == model.labels[50]);
  CHECK(model.labels[0] != model.labels[50]);

  const auto map = assign_clusters(model, {"p0", "p99"});
  CHECK(map.at("p0") == model.labels[0]);
  CHECK(map.at("p99") == model.labels[50]);
  CHECK(assign_clusters(model, {}).empty());
  try {
    assign_clusters(model, {"nope"});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownId);
  }
}

TEST_CASE("degenerate inputs") {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(30, 2, 1.0);
  const auto one = hdbscan_fit(same, 10, 10);
  CHECK(one.cluster_count() == 1);
  CHECK(std::count(one.labels.begin(), one.labels.end(), kBackground) == 0);

  Rng rng(44);
  Eigen::MatrixXd uniform(20, 2);
  for (Eigen::Index i = 0; i < 20; ++i) uniform.row(i) << rng.uniform(), rng.uniform();
  const auto none = hdbscan_fit(uniform, 25, 25);
  CHECK(std::all_of(none.labels.begin(), none.labels.end(), [](int l) { return l == kBackground; }));
}

TEST_CASE("cluster ids are consecutive and respect the minimum size") {
  Rng rng(45);
  Eigen::MatrixXd pts(400, 2);
  for (Eigen::Index i = 0; i < 400; ++i) {
    const double cx = static_cast<double>(i % 4) * 7.0, cy = static_cast<double>((i % 4) / 2) * 9.0;
    pts.row(i) << cx + rng.normal() * (0.5 + 0.3 * static_cast<double>(i % 4)), cy + rng.normal();
  }
  const auto model = hdbscan_fit(pts, 25, 10);
  std::map<int, long> sizes;
  for (int l : model.labels) ++sizes[l];
  int expected = 0;
  for (const auto& [id, count] : sizes) {
    if (id == kBackground) continue;
    CHECK(id == expected++);
    CHECK(count >= 25);
  }
  for (const auto& [id, s] : model.stabilities) CHECK(s >= 0.0);
}

TEST_CASE("permuting the input keeps the partition") {
  // Blobs far enough apart that no point is equidistant (in mutual reachability)
  // from both; such ties are broken by row index and may move between clusters.
  Rng rng(46);
  const Eigen::MatrixXd pts = testing::two_blobs(rng, 60, 2, 10.0);
  std::vector<std::size_t> order(120);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> perm = order;
  rng.shuffle(perm);
  Eigen::MatrixXd shuffled(120, 2);
  for (std::size_t i = 0; i < 120; ++i) shuffled.row(static_cast<Eigen::Index>(i)) = pts.row(static_cast<Eigen::Index>(perm[i]));
  const auto a = hdbscan_fit(pts, 15, 5), b = hdbscan_fit(shuffled, 15, 5);
  CHECK(partition(a.labels, order) == partition(b.labels, perm));
}

TEST_CASE("condensed tree export") {
  Rng rng(47);
  const auto model = hdbscan_fit(testing::two_blobs(rng, 30, 2, 10.0), 10, 5);
  const auto j = condensed_tree_json(model);
  CHECK(j.contains("condensed_tree"));
  CHECK(j["condensed_tree"].size() == model.condensed_tree.size());
}

}  // TEST_SUITE
