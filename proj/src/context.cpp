#include "plac/context.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plac/error.hpp"

namespace plac {

namespace {

constexpr std::uint32_t kLeafSize = 8;

inline double squared_distance(const Position& a, const Position& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Same expression shape as squared_distance with zero terms for axes where the
// query lies inside the box. Rounding is monotone, so this never exceeds the
// computed distance to any point in the box.
inline double box_distance(const Position& q, const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
  double d[3];
  for (int c = 0; c < 3; ++c) {
    if (q[c] < lo[c]) d[c] = lo[c] - q[c];
    else if (q[c] > hi[c]) d[c] = q[c] - hi[c];
    else d[c] = 0.0;
  }
  return d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
}

inline void offer(std::vector<Neighbor>& heap, std::size_t k, const Neighbor& cand) {
  if (heap.size() < k) {
    heap.push_back(cand);
    std::push_heap(heap.begin(), heap.end());
  } else if (cand < heap.front()) {
    std::pop_heap(heap.begin(), heap.end());
    heap.back() = cand;
    std::push_heap(heap.begin(), heap.end());
  }
}

std::vector<std::uint32_t> ids_of(std::vector<Neighbor>& best) {
  std::sort(best.begin(), best.end());
  std::vector<std::uint32_t> ids(best.size());
  for (std::size_t i = 0; i < best.size(); ++i) ids[i] = best[i].id;
  return ids;
}

}  // namespace

std::vector<std::uint32_t> knn_brute(const Position& query, std::span<const Position> antecedents, int k) {
  if (antecedents.empty()) throw Error("knn: empty antecedent set");
  if (k < 1) throw Error("knn: k must be >= 1");
  std::vector<Neighbor> all(antecedents.size());
  for (std::size_t i = 0; i < antecedents.size(); ++i) {
    all[i] = {squared_distance(query, antecedents[i]), static_cast<std::uint32_t>(i)};
  }
  const std::size_t keep = std::min<std::size_t>(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
  all.resize(keep);
  return ids_of(all);
}

KdTree::KdTree(std::span<const Position> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = points_[order_[begin]];
  node.hi = node.lo;
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    const Position& p = points_[order_[i]];
    for (int c = 0; c < 3; ++c) {
      node.lo[c] = std::min(node.lo[c], p[c]);
      node.hi[c] = std::max(node.hi[c], p[c]);
    }
  }
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return index;

  int axis = 0;
  for (int c = 1; c < 3; ++c) {
    if (node.hi[c] - node.lo[c] > node.hi[axis] - node.lo[axis]) axis = c;
  }
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

void KdTree::search(std::int32_t index, const Position& q, std::size_t k, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[index];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t id = order_[i];
      offer(heap, k, {squared_distance(q, points_[id]), id});
    }
    return;
  }
  const double dl = box_distance(q, nodes_[node.left].lo, nodes_[node.left].hi);
  const double dr = box_distance(q, nodes_[node.right].lo, nodes_[node.right].hi);
  const std::int32_t first = dl <= dr ? node.left : node.right;
  const std::int32_t second = dl <= dr ? node.right : node.left;
  const double d_first = std::min(dl, dr);
  const double d_second = std::max(dl, dr);
  // Equal distances are still visited: a farther-by-box node may hold a tie
  // with a smaller id.
  if (heap.size() < k || d_first <= heap.front().dist2) search(first, q, k, heap);
  if (heap.size() < k || d_second <= heap.front().dist2) search(second, q, k, heap);
}

void KdTree::knn(const Position& query, int k, std::vector<Neighbor>& heap) const {
  if (points_.empty()) throw Error("knn: empty antecedent set");
  if (k < 1) throw Error("knn: k must be >= 1");
  heap.clear();
  search(0, query, static_cast<std::size_t>(k), heap);
  std::sort(heap.begin(), heap.end());
}

std::vector<std::uint32_t> KdTree::knn(const Position& query, int k) const {
  std::vector<Neighbor> heap;
  knn(query, k, heap);
  std::vector<std::uint32_t> ids(heap.size());
  for (std::size_t i = 0; i < heap.size(); ++i) ids[i] = heap[i].id;
  return ids;
}

std::vector<std::uint32_t> knn(const Position& query, std::span<const Position> antecedents, int k) {
  if (antecedents.empty()) throw Error("knn: empty antecedent set");
  return KdTree(antecedents).knn(query, k);
}

Attribute network_attribute(const Attribute& a, ChannelMode mode) {
  if (mode == ChannelMode::kReflectance1) return {a[0], a[0], a[0]};
  return a;
}

ContextWindow make_window(const Position& query, std::span<const Position> positions,
                          std::span<const Attribute> net_attrs, std::span<const std::uint32_t> neighbor_ids,
                          const WindowOptions& options) {
  if (neighbor_ids.empty()) throw Error("context window needs at least one neighbor");
  ContextWindow w;
  w.ids.assign(neighbor_ids.begin(), neighbor_ids.end());
  std::sort(w.ids.begin(), w.ids.end());
  const std::size_t n = w.ids.size();
  w.rel_positions.resize(n);
  w.attrs.resize(n);

  double scale = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    const Position& p = positions[w.ids[m]];
    const double dx = p[0] - query[0];
    const double dy = p[1] - query[1];
    const double dz = p[2] - query[2];
    scale = std::max(scale, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  for (std::size_t m = 0; m < n; ++m) {
    const Position& p = positions[w.ids[m]];
    for (int c = 0; c < 3; ++c) {
      const double centered = options.center ? p[c] - query[c] : p[c];
      double v = centered;
      if (options.rescale) v = scale > 0.0 ? centered / scale : 0.0;
      w.rel_positions[m][c] = v;
    }
    const Attribute& a = net_attrs[w.ids[m]];
    for (int c = 0; c < 3; ++c) w.attrs[m][c] = static_cast<double>(a[c]) / 255.0;
  }
  return w;
}

ContextWindow build_window(const Position& query, std::span<const Position> positions,
                           std::span<const Attribute> net_attrs, int k, const WindowOptions& options) {
  const auto ids = knn_brute(query, positions, k);
  return make_window(query, positions, net_attrs, ids, options);
}

void canonicalize(ContextWindow& window) {
  std::vector<std::size_t> idx(window.ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return window.ids[a] < window.ids[b]; });
  ContextWindow sorted;
  for (std::size_t i : idx) {
    sorted.ids.push_back(window.ids[i]);
    sorted.rel_positions.push_back(window.rel_positions[i]);
    sorted.attrs.push_back(window.attrs[i]);
  }
  window = std::move(sorted);
}

}  // namespace plac
