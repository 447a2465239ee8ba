#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "plac/cloud_io.hpp"

namespace plac {

// Antecedent ids are indices into the antecedent array handed to the search,
// i.e. positions in coding order.
struct Neighbor {
  double dist2;
  std::uint32_t id;
  bool operator<(const Neighbor& o) const { return dist2 < o.dist2 || (dist2 == o.dist2 && id < o.id); }
};

// Exact k nearest antecedents, sorted by (squared distance, id). Returns
// min(k, |antecedents|) ids. Throws on an empty antecedent set.
std::vector<std::uint32_t> knn_brute(const Position& query, std::span<const Position> antecedents, int k);

// Static kd-tree over a fixed antecedent set. Results are identical to
// knn_brute, including tie order.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Position> points);

  std::size_t size() const { return points_.size(); }

  std::vector<std::uint32_t> knn(const Position& query, int k) const;
  void knn(const Position& query, int k, std::vector<Neighbor>& heap) const;

 private:
  struct Node {
    std::array<double, 3> lo;
    std::array<double, 3> hi;
    std::uint32_t begin;  // into order_
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Position& q, std::size_t k, std::vector<Neighbor>& heap) const;

  std::vector<Position> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

std::vector<std::uint32_t> knn(const Position& query, std::span<const Position> antecedents, int k);

// Spatial normalization toggles; both on is the standard codec behaviour.
struct WindowOptions {
  bool center = true;
  bool rescale = true;
  bool operator==(const WindowOptions&) const = default;
};

struct ContextWindow {
  std::vector<std::array<double, 3>> rel_positions;
  std::vector<std::array<double, 3>> attrs;  // network-domain attributes / 255
  std::vector<std::uint32_t> ids;

  int k_effective() const { return static_cast<int>(ids.size()); }
  bool operator==(const ContextWindow&) const = default;
};

// Network-domain attribute: YCoCg-R triple for color, value replicated into
// all three slots for reflectance.
Attribute network_attribute(const Attribute& a, ChannelMode mode);

// Assembles a window from already-selected neighbor ids. Entries are stored
// in ascending id order so reductions over the window have a fixed order.
ContextWindow make_window(const Position& query, std::span<const Position> positions,
                          std::span<const Attribute> net_attrs, std::span<const std::uint32_t> neighbor_ids,
                          const WindowOptions& options = {});

ContextWindow build_window(const Position& query, std::span<const Position> positions,
                           std::span<const Attribute> net_attrs, int k, const WindowOptions& options = {});

// Sorts window entries by antecedent id.
void canonicalize(ContextWindow& window);

}  // namespace plac
