#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace attnsched {

/// Half-open interval [lo, hi).
struct Interval {
  std::size_t lo = 0;
  std::size_t hi = 0;

  std::size_t length() const { return hi - lo; }
  bool overlaps(const Interval& o) const { return lo < o.hi && o.lo < hi; }
  Interval intersect(const Interval& o) const {
    return {std::max(lo, o.lo), std::min(hi, o.hi)};
  }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct Rect {
  Interval rows;
  Interval cols;

  std::size_t area() const { return rows.length() * cols.length(); }
  bool overlaps(const Rect& o) const {
    return rows.overlaps(o.rows) && cols.overlaps(o.cols);
  }
  /// Area of the intersection, 0 when disjoint.
  std::size_t overlap_area(const Rect& o) const {
    if (!overlaps(o)) return 0;
    return rows.intersect(o.rows).length() * cols.intersect(o.cols).length();
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Static R-tree over axis-aligned rectangles, bulk-loaded with
/// Sort-Tile-Recursive packing. Payloads are returned in ascending order.
template <typename Payload>
class RectIndex {
 public:
  static constexpr std::size_t kFanout = 8;

  RectIndex() = default;

  explicit RectIndex(std::vector<std::pair<Rect, Payload>> entries)
      : entries_(std::move(entries)) {
    build();
  }

  std::size_t size() const { return entries_.size(); }

  template <typename Visitor>
  void visit_overlaps(const Rect& query, Visitor&& visit) const {
    if (nodes_.empty()) return;
    std::vector<std::size_t> stack{root_};
    while (!stack.empty()) {
      const Node& node = nodes_[stack.back()];
      stack.pop_back();
      if (!node.bounds.overlaps(query)) continue;
      for (std::size_t i = node.first; i < node.first + node.count; ++i) {
        if (node.leaf) {
          if (entries_[i].first.overlaps(query)) visit(entries_[i].first, entries_[i].second);
        } else {
          stack.push_back(children_[i]);
        }
      }
    }
  }

  std::vector<Payload> query(const Rect& q) const {
    std::vector<Payload> out;
    visit_overlaps(q, [&](const Rect&, const Payload& p) { out.push_back(p); });
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    Rect bounds;
    bool leaf = true;
    std::size_t first = 0;  // into entries_ (leaf) or children_ (inner)
    std::size_t count = 0;
  };

  static Rect merge(const Rect& a, const Rect& b) {
    return {{std::min(a.rows.lo, b.rows.lo), std::max(a.rows.hi, b.rows.hi)},
            {std::min(a.cols.lo, b.cols.lo), std::max(a.cols.hi, b.cols.hi)}};
  }

  // Orders [first, last) of `items` into STR tiles: slabs by row centre,
  // each slab sorted by column centre.
  template <typename Item, typename RectOf>
  static void str_sort(std::vector<Item>& items, RectOf rect_of) {
    auto row_key = [&](const Item& it) { return rect_of(it).rows.lo + rect_of(it).rows.hi; };
    auto col_key = [&](const Item& it) { return rect_of(it).cols.lo + rect_of(it).cols.hi; };
    std::stable_sort(items.begin(), items.end(),
                     [&](const Item& a, const Item& b) { return row_key(a) < row_key(b); });
    const std::size_t leaves = (items.size() + kFanout - 1) / kFanout;
    const auto slabs = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(leaves))));
    const std::size_t per_slab = slabs * kFanout;
    for (std::size_t s = 0; s < items.size(); s += per_slab) {
      auto b = items.begin() + static_cast<std::ptrdiff_t>(s);
      auto e = items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), s + per_slab));
      std::stable_sort(b, e, [&](const Item& x, const Item& y) { return col_key(x) < col_key(y); });
    }
  }

  void build() {
    nodes_.clear();
    children_.clear();
    if (entries_.empty()) return;
    str_sort(entries_, [](const std::pair<Rect, Payload>& e) -> const Rect& { return e.first; });

    std::vector<std::size_t> level;
    for (std::size_t i = 0; i < entries_.size(); i += kFanout) {
      Node n;
      n.leaf = true;
      n.first = i;
      n.count = std::min(kFanout, entries_.size() - i);
      n.bounds = entries_[i].first;
      for (std::size_t j = i + 1; j < i + n.count; ++j) n.bounds = merge(n.bounds, entries_[j].first);
      level.push_back(nodes_.size());
      nodes_.push_back(n);
    }
    while (level.size() > 1) {
      str_sort(level, [this](std::size_t id) -> const Rect& { return nodes_[id].bounds; });
      std::vector<std::size_t> next;
      for (std::size_t i = 0; i < level.size(); i += kFanout) {
        Node n;
        n.leaf = false;
        n.first = children_.size();
        n.count = std::min(kFanout, level.size() - i);
        n.bounds = nodes_[level[i]].bounds;
        for (std::size_t j = i; j < i + n.count; ++j) {
          children_.push_back(level[j]);
          n.bounds = merge(n.bounds, nodes_[level[j]].bounds);
        }
        next.push_back(nodes_.size());
        nodes_.push_back(n);
      }
      level = std::move(next);
    }
    root_ = level.front();
  }

  std::vector<std::pair<Rect, Payload>> entries_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> children_;
  std::size_t root_ = 0;
};

}  // namespace attnsched
