#include "hilctc/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <utility>

#include "hilctc/error.hpp"

namespace hilctc {

namespace {

struct RowMajor {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  explicit RowMajor(const Eigen::MatrixXd& m)
      : n(static_cast<std::size_t>(m.rows())), dim(static_cast<std::size_t>(m.cols())), data(n * dim) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }

  const double* row(std::size_t i) const { return data.data() + i * dim; }

  double dist2(std::size_t a, std::size_t b) const {
    const double* pa = row(a);
    const double* pb = row(b);
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = pa[j] - pb[j];
      s += d * d;
    }
    return s;
  }
};

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

void check_k(std::size_t n, std::size_t k) {
  if (k == 0) fail(ErrorKind::InvalidSpec, "k must be positive");
  if (n <= k) {
    fail(ErrorKind::TooFewPoints, "need more than " + std::to_string(k) + " points, got " + std::to_string(n));
  }
}

void emit(KnnGraph& graph, std::size_t i, std::vector<Candidate>& best) {
  std::sort(best.begin(), best.end());
  for (std::size_t r = 0; r < graph.k; ++r) {
    graph.indices[i * graph.k + r] = best[r].second;
    graph.distances[i * graph.k + r] = std::sqrt(best[r].first);
  }
}

class KdTree {
 public:
  explicit KdTree(const RowMajor& pts) : pts_(pts), order_(pts.n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * pts.n / kLeafSize + 2);
    build(0, pts.n);
  }

  void query(std::size_t self, std::size_t k, std::vector<Candidate>& out) const {
    std::priority_queue<Candidate> heap;  // max-heap, worst on top
    search(0, self, k, heap);
    out.clear();
    while (!heap.empty()) {
      out.push_back(heap.top());
      heap.pop();
    }
  }

 private:
  static constexpr std::size_t kLeafSize = 16;

  struct Node {
    std::size_t begin, end;
    std::size_t axis = 0;
    double split = 0.0;
    std::size_t left = 0, right = 0;
    bool leaf = true;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;
    std::size_t axis = 0;
    double widest = -1.0;
    for (std::size_t j = 0; j < pts_.dim; ++j) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t t = begin; t < end; ++t) {
        const double v = pts_.row(order_[t])[j];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = j;
      }
    }
    if (widest <= 0.0) return id;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return pts_.row(a)[axis] < pts_.row(b)[axis]; });
    const double split = pts_.row(order_[mid])[axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    Node& node = nodes_[id];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    node.leaf = false;
    return id;
  }

  void search(std::size_t id, std::size_t self, std::size_t k, std::priority_queue<Candidate>& heap) const {
    const Node& node = nodes_[id];
    if (node.leaf) {
      for (std::size_t t = node.begin; t < node.end; ++t) {
        const std::size_t j = order_[t];
        if (j == self) continue;
        Candidate c{pts_.dist2(self, j), j};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double delta = pts_.row(self)[node.axis] - node.split;
    const std::size_t near = delta < 0.0 ? node.left : node.right;
    const std::size_t far = delta < 0.0 ? node.right : node.left;
    search(near, self, k, heap);
    // Equal plane distance must still be explored so index ties resolve exactly as in brute force.
    if (heap.size() < k || delta * delta <= heap.top().first) search(far, self, k, heap);
  }

  const RowMajor& pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace

KnnGraph knn_brute_force(const Eigen::MatrixXd& points, std::size_t k) {
  const RowMajor pts(points);
  check_k(pts.n, k);
  KnnGraph graph{k, std::vector<std::size_t>(pts.n * k), std::vector<double>(pts.n * k)};
  std::vector<Candidate> all;
  all.reserve(pts.n);
  for (std::size_t i = 0; i < pts.n; ++i) {
    all.clear();
    for (std::size_t j = 0; j < pts.n; ++j) {
      if (j != i) all.emplace_back(pts.dist2(i, j), j);
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    all.resize(k);
    emit(graph, i, all);
  }
  return graph;
}

KnnGraph knn_kd_tree(const Eigen::MatrixXd& points, std::size_t k) {
  const RowMajor pts(points);
  check_k(pts.n, k);
  KnnGraph graph{k, std::vector<std::size_t>(pts.n * k), std::vector<double>(pts.n * k)};
  const KdTree tree(pts);
  std::vector<Candidate> best;
  for (std::size_t i = 0; i < pts.n; ++i) {
    tree.query(i, k, best);
    emit(graph, i, best);
  }
  return graph;
}

KnnGraph knn(const Eigen::MatrixXd& points, std::size_t k) {
  if (static_cast<std::size_t>(points.rows()) < kBruteForceKnnLimit) return knn_brute_force(points, k);
  return knn_kd_tree(points, k);
}

}  // namespace hilctc
