#include "hilctc/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/knn.hpp"

namespace hilctc {

namespace {

// Lambda for zero-distance merges; finite so stability sums never produce inf - inf.
constexpr double kMaxLambda = 1e300;

double lambda_of(double distance) { return distance > 1.0 / kMaxLambda ? 1.0 / distance : kMaxLambda; }

struct LinkageNode {
  std::size_t left;
  std::size_t right;
  double distance;
  std::size_t size;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void link(std::size_t child, std::size_t root) { parent_[child] = root; }

  std::size_t add() {
    parent_.push_back(parent_.size());
    return parent_.size() - 1;
  }

 private:
  std::vector<std::size_t> parent_;
};

// Dendrogram over points 0..n-1; internal node n + t is the t-th merge.
std::vector<LinkageNode> single_linkage(std::size_t n, std::vector<MstEdge> edges) {
  std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    if (x.weight != y.weight) return x.weight < y.weight;
    const auto xl = std::min(x.a, x.b), yl = std::min(y.a, y.b);
    if (xl != yl) return xl < yl;
    return std::max(x.a, x.b) < std::max(y.a, y.b);
  });
  UnionFind uf(n);
  std::vector<std::size_t> sizes(n, 1);
  std::vector<LinkageNode> nodes;
  nodes.reserve(n - 1);
  for (const auto& e : edges) {
    const std::size_t ra = uf.find(e.a);
    const std::size_t rb = uf.find(e.b);
    const std::size_t merged = uf.add();
    sizes.push_back(sizes[ra] + sizes[rb]);
    uf.link(ra, merged);
    uf.link(rb, merged);
    nodes.push_back({ra, rb, e.weight, sizes.back()});
  }
  return nodes;
}

std::vector<CondensedRow> condense(std::size_t n, const std::vector<LinkageNode>& linkage,
                                   std::size_t min_cluster_size) {
  const std::size_t root = 2 * n - 2;
  auto size_of = [&](std::size_t node) { return node < n ? std::size_t{1} : linkage[node - n].size; };
  auto collect_leaves = [&](std::size_t start, std::vector<std::size_t>& out) {
    std::vector<std::size_t> stack{start};
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      if (node < n) {
        out.push_back(node);
      } else {
        stack.push_back(linkage[node - n].right);
        stack.push_back(linkage[node - n].left);
      }
    }
  };

  std::vector<CondensedRow> rows;
  std::vector<std::size_t> relabel(root + 1, 0);
  std::size_t next_label = n + 1;
  relabel[root] = n;

  // Breadth-first over the dendrogram; subtrees that shed points are never revisited.
  std::vector<std::size_t> queue{root};
  std::vector<std::size_t> leaves;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t node = queue[head];
    const LinkageNode& link = linkage[node - n];
    const double lambda = lambda_of(link.distance);
    const std::size_t left = link.left, right = link.right;
    const std::size_t left_size = size_of(left), right_size = size_of(right);
    const bool left_big = left_size >= min_cluster_size;
    const bool right_big = right_size >= min_cluster_size;
    auto shed = [&](std::size_t child) {
      leaves.clear();
      collect_leaves(child, leaves);
      for (std::size_t p : leaves) rows.push_back({relabel[node], p, lambda, 1});
    };
    auto follow = [&](std::size_t child) {
      if (child >= n) queue.push_back(child);
    };
    if (left_big && right_big) {
      relabel[left] = next_label++;
      rows.push_back({relabel[node], relabel[left], lambda, left_size});
      relabel[right] = next_label++;
      rows.push_back({relabel[node], relabel[right], lambda, right_size});
      follow(left);
      follow(right);
    } else if (!left_big && !right_big) {
      shed(left);
      shed(right);
    } else if (!left_big) {
      relabel[right] = relabel[node];
      shed(left);
      follow(right);
    } else {
      relabel[left] = relabel[node];
      shed(right);
      follow(left);
    }
  }
  return rows;
}

}  // namespace

int ClusterModel::cluster_count() const {
  int best = -1;
  for (int l : labels) best = std::max(best, l);
  return best + 1;
}

std::vector<double> core_distances(const Eigen::MatrixXd& points, int min_samples) {
  if (min_samples < 1) fail(ErrorKind::InvalidSpec, "min_samples must be at least 1");
  const auto n = static_cast<std::size_t>(points.rows());
  if (n <= static_cast<std::size_t>(min_samples)) {
    fail(ErrorKind::TooFewPoints, "core distances need more than min_samples points");
  }
  const KnnGraph graph = knn(points, static_cast<std::size_t>(min_samples));
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = graph.distance(i, static_cast<std::size_t>(min_samples) - 1);
  return core;
}

double mutual_reachability(const Eigen::MatrixXd& points, const std::vector<double>& core, std::size_t i,
                           std::size_t j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const double d = points(static_cast<Eigen::Index>(i), c) - points(static_cast<Eigen::Index>(j), c);
    s += d * d;
  }
  return std::max({core[i], core[j], std::sqrt(s)});
}

std::vector<MstEdge> mutual_reachability_mst(const Eigen::MatrixXd& points, const std::vector<double>& core) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<double> key(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::vector<char> in_tree(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t best = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const double w = mutual_reachability(points, core, current, v);
      if (w < key[v]) {
        key[v] = w;
        from[v] = current;
      }
      if (best == n || key[v] < key[best]) best = v;
    }
    in_tree[best] = 1;
    edges.push_back({from[best], best, key[best]});
    current = best;
  }
  return edges;
}

ClusterModel hdbscan_fit(const Eigen::MatrixXd& points, int min_cluster_size, int min_samples,
                         std::vector<std::string> point_ids) {
  if (min_cluster_size < 2) fail(ErrorKind::InvalidSpec, "min_cluster_size must be at least 2");
  const auto n = static_cast<std::size_t>(points.rows());
  if (!point_ids.empty() && point_ids.size() != n) fail(ErrorKind::LengthMismatch, "point_ids must align with rows");
  ClusterModel model;
  model.min_cluster_size = min_cluster_size;
  model.min_samples = min_samples;
  model.labels.assign(n, kBackground);
  model.point_ids = std::move(point_ids);
  if (n < static_cast<std::size_t>(min_cluster_size)) return model;

  const auto core = core_distances(points, min_samples);
  model.mst_edges = mutual_reachability_mst(points, core);
  const auto linkage = single_linkage(n, model.mst_edges);
  model.condensed_tree = condense(n, linkage, static_cast<std::size_t>(min_cluster_size));

  std::size_t max_node = n;
  for (const auto& row : model.condensed_tree) max_node = std::max({max_node, row.parent, row.child});
  const std::size_t n_nodes = max_node + 1;
  std::vector<double> birth(n_nodes, 0.0);
  std::vector<std::size_t> parent_of(n_nodes, n);
  std::vector<std::vector<std::size_t>> child_clusters(n_nodes);
  for (const auto& row : model.condensed_tree) {
    parent_of[row.child] = row.parent;
    if (row.child >= n) {
      birth[row.child] = row.lambda;
      child_clusters[row.parent].push_back(row.child);
    }
  }
  std::vector<double> stability(n_nodes, 0.0);
  for (const auto& row : model.condensed_tree) {
    stability[row.parent] += (row.lambda - birth[row.parent]) * static_cast<double>(row.size);
  }
  const std::vector<double> own_stability = stability;

  // Excess-of-mass selection, children before parents (children carry larger ids).
  std::vector<char> selected(n_nodes, 0);
  for (std::size_t node = max_node; node > n; --node) {
    double subtree = 0.0;
    for (std::size_t c : child_clusters[node]) subtree += stability[c];
    if (!child_clusters[node].empty() && subtree > stability[node]) {
      stability[node] = subtree;
    } else {
      selected[node] = 1;
      std::vector<std::size_t> stack(child_clusters[node].begin(), child_clusters[node].end());
      while (!stack.empty()) {
        const std::size_t d = stack.back();
        stack.pop_back();
        selected[d] = 0;
        stack.insert(stack.end(), child_clusters[d].begin(), child_clusters[d].end());
      }
    }
  }
  // The root only stands as a cluster when the hierarchy never split.
  if (child_clusters[n].empty()) selected[n] = 1;

  std::vector<int> flat(n_nodes, kBackground);
  int next = 0;
  for (std::size_t node = n; node < n_nodes; ++node) {
    if (selected[node]) {
      flat[node] = next++;
      model.stabilities[flat[node]] = own_stability[node];
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t node = parent_of[p];
    while (node != n && !selected[node]) node = parent_of[node];
    model.labels[p] = selected[node] ? flat[node] : kBackground;
  }
  return model;
}

std::unordered_map<std::string, int> assign_clusters(const ClusterModel& model,
                                                     const std::vector<std::string>& ids) {
  std::unordered_map<std::string, int> out;
  if (ids.empty()) return out;
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(model.point_ids.size());
  for (std::size_t i = 0; i < model.point_ids.size(); ++i) index.emplace(model.point_ids[i], i);
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) fail(ErrorKind::UnknownId, "cell '" + id + "' was not part of the clustering");
    out[id] = model.labels[it->second];
  }
  return out;
}

nlohmann::json condensed_tree_json(const ClusterModel& model) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : model.condensed_tree) {
    rows.push_back({{"parent", r.parent}, {"child", r.child}, {"lambda", r.lambda}, {"size", r.size}});
  }
  nlohmann::json stab = nlohmann::json::object();
  for (const auto& [id, s] : model.stabilities) stab[std::to_string(id)] = s;
  return {{"min_cluster_size", model.min_cluster_size},
          {"min_samples", model.min_samples},
          {"n_points", model.labels.size()},
          {"n_clusters", model.cluster_count()},
          {"stabilities", stab},
          {"condensed_tree", rows}};
}

}  // namespace hilctc
