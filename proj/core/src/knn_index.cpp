#include "onsurf/knn_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace onsurf {
namespace {

constexpr std::uint32_t kLeafSize = 12;

inline bool candidate_less(double d2a, std::uint32_t ia, double d2b, std::uint32_t ib) {
  return d2a < d2b || (d2a == d2b && ia < ib);
}

}  // namespace

KnnIndex::KnnIndex(const PointCloud& cloud) : KnnIndex(cloud.points()) {}

KnnIndex::KnnIndex(std::vector<Point3> points) : points_(std::move(points)) {
  if (points_.empty()) throw InvalidInput("knn index: cloud must contain at least one point");
  if (points_.size() > std::numeric_limits<std::int32_t>::max())
    throw InvalidInput("knn index: cloud too large");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));
  leaf_points_.reserve(points_.size());
  for (auto i : order_) leaf_points_.push_back(points_[i]);
}

std::int32_t KnnIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Point3 lo = points_[order_[begin]], hi = lo;
  for (auto i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int dim = 0;
  (hi - lo).maxCoeff(&dim);
  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = points_[a][dim], cb = points_[b][dim];
                     return ca < cb || (ca == cb && a < b);
                   });
  const double split = points_[order_[mid]][dim];
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  Node& node = nodes_[id];
  node.dim = static_cast<std::uint8_t>(dim);
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void KnnIndex::search(std::int32_t id, const Point3& probe, std::size_t k,
                      std::vector<Candidate>& best) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (auto slot = node.begin; slot < node.end; ++slot) {
      const double d2 = squared_distance(probe, leaf_points_[slot]);
      const std::uint32_t idx = order_[slot];
      if (best.size() == k && !candidate_less(d2, idx, best.back().d2, best.back().index)) continue;
      if (best.size() < k) best.push_back({d2, idx});
      auto pos = best.size() - 1;
      while (pos > 0 && candidate_less(d2, idx, best[pos - 1].d2, best[pos - 1].index)) {
        best[pos] = best[pos - 1];
        --pos;
      }
      best[pos] = {d2, idx};
    }
    return;
  }
  const double diff = probe[node.dim] - node.split;
  const auto near = diff < 0 ? node.left : node.right;
  const auto far = diff < 0 ? node.right : node.left;
  search(near, probe, k, best);
  // Points across the plane are at least diff^2 away; equality must still be
  // visited because a tie can be won by a smaller index.
  if (best.size() < k || diff * diff <= best.back().d2) search(far, probe, k, best);
}

void KnnIndex::query(const Point3& probe, std::size_t k, std::vector<Neighbor>& out) const {
  out.clear();
  k = std::min(k, points_.size());
  if (k == 0) return;
  std::vector<Candidate> best;
  best.reserve(k);
  search(0, probe, k, best);
  out.reserve(k);
  for (const auto& c : best) out.push_back({c.index, std::sqrt(c.d2)});
}

std::vector<Neighbor> KnnIndex::query(const Point3& probe, std::size_t k) const {
  std::vector<Neighbor> out;
  query(probe, k, out);
  return out;
}

Neighbor KnnIndex::nearest(const Point3& probe) const {
  std::vector<Candidate> best;
  best.reserve(1);
  search(0, probe, 1, best);
  return {best.front().index, std::sqrt(best.front().d2)};
}

}  // namespace onsurf
