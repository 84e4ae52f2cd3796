#include "cellscape/kdtree.hpp"

#include "cellscape/error.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace cellscape {

KdTree2D::KdTree2D(const Matrix<double>& coords) {
    std::vector<Point2> pts(coords.rows());
    std::vector<std::size_t> ids(coords.rows());
    for (std::size_t i = 0; i < coords.rows(); ++i) {
        pts[i] = {coords(i, 0), coords(i, 1)};
        ids[i] = i;
    }
    build(std::move(pts), std::move(ids));
}

KdTree2D::KdTree2D(const Matrix<double>& coords, std::span<const std::size_t> rows) {
    std::vector<Point2> pts;
    pts.reserve(rows.size());
    for (std::size_t r : rows) pts.push_back({coords(r, 0), coords(r, 1)});
    build(std::move(pts), std::vector<std::size_t>(rows.begin(), rows.end()));
}

KdTree2D::KdTree2D(std::span<const Point2> points) {
    std::vector<std::size_t> ids(points.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    build(std::vector<Point2>(points.begin(), points.end()), std::move(ids));
}

void KdTree2D::build(std::vector<Point2> points, std::vector<std::size_t> ids) {
    points_ = std::move(points);
    ids_ = std::move(ids);
    nodes_.clear();
    if (points_.empty()) return;
    nodes_.reserve(2 * (points_.size() / kLeafSize + 1));
    build_node(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KdTree2D::build_node(std::uint32_t begin, std::uint32_t end) {
    Node node{};
    node.min_x = node.min_y = std::numeric_limits<double>::infinity();
    node.max_x = node.max_y = -std::numeric_limits<double>::infinity();
    for (std::uint32_t i = begin; i < end; ++i) {
        node.min_x = std::min(node.min_x, points_[i].x);
        node.max_x = std::max(node.max_x, points_[i].x);
        node.min_y = std::min(node.min_y, points_[i].y);
        node.max_y = std::max(node.max_y, points_[i].y);
    }
    node.begin = begin;
    node.end = end;
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    const bool split_x = (node.max_x - node.min_x) >= (node.max_y - node.min_y);
    const std::uint32_t mid = begin + (end - begin) / 2;
    // Sort a permutation so points and ids move together.
    std::vector<std::uint32_t> order(end - begin);
    std::iota(order.begin(), order.end(), begin);
    std::nth_element(order.begin(), order.begin() + (mid - begin), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double va = split_x ? points_[a].x : points_[a].y;
        const double vb = split_x ? points_[b].x : points_[b].y;
        return va < vb || (va == vb && a < b);
    });
    std::vector<Point2> pts(order.size());
    std::vector<std::size_t> ids(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        pts[k] = points_[order[k]];
        ids[k] = ids_[order[k]];
    }
    std::copy(pts.begin(), pts.end(), points_.begin() + begin);
    std::copy(ids.begin(), ids.end(), ids_.begin() + begin);

    const std::int32_t left = build_node(begin, mid);
    const std::int32_t right = build_node(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

double KdTree2D::box_distance2(const Node& n, Point2 p) {
    const double dx = p.x < n.min_x ? n.min_x - p.x : (p.x > n.max_x ? p.x - n.max_x : 0.0);
    const double dy = p.y < n.min_y ? n.min_y - p.y : (p.y > n.max_y ? p.y - n.max_y : 0.0);
    return dx * dx + dy * dy;
}

void KdTree2D::radius_visit(Point2 p, double r, const std::function<void(std::size_t, double)>& visit) const {
    if (nodes_.empty() || r < 0.0) return;
    const double r2 = r * r;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        if (box_distance2(n, p) > r2) continue;
        if (n.left < 0) {
            for (std::uint32_t i = n.begin; i < n.end; ++i) {
                const double d2 = squared_distance(points_[i], p);
                if (d2 <= r2) visit(ids_[i], d2);
            }
        } else {
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
}

std::vector<std::size_t> KdTree2D::radius_query(Point2 p, double r) const {
    std::vector<std::size_t> out;
    radius_visit(p, r, [&](std::size_t id, double) { out.push_back(id); });
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t KdTree2D::radius_count(Point2 p, double r) const {
    std::size_t count = 0;
    radius_visit(p, r, [&](std::size_t, double) { ++count; });
    return count;
}

std::vector<Neighbor> KdTree2D::knn_query(Point2 p, std::size_t k, std::optional<std::size_t> exclude) const {
    // `exclude` is assumed to be a member of the tree.
    const std::size_t available = size() - (exclude && size() > 0 ? 1 : 0);
    if (k > available) {
        throw Error(ErrorCode::KTooLarge,
                    "k=" + std::to_string(k) + " exceeds the " + std::to_string(available) + " available points", "k");
    }
    if (k == 0) return {};
    auto worse = [](const Neighbor& a, const Neighbor& b) {
        return a.squared_distance < b.squared_distance ||
               (a.squared_distance == b.squared_distance && a.index < b.index);
    };
    // Max-heap on (distance, index): the top is the current worst keeper.
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        if (heap.size() == k && box_distance2(n, p) > heap.top().squared_distance) continue;
        if (n.left < 0) {
            for (std::uint32_t i = n.begin; i < n.end; ++i) {
                if (exclude && ids_[i] == *exclude) continue;
                const Neighbor cand{ids_[i], squared_distance(points_[i], p)};
                if (heap.size() < k) {
                    heap.push(cand);
                } else if (worse(cand, heap.top())) {
                    heap.pop();
                    heap.push(cand);
                }
            }
        } else {
            // Descend into the nearer child last so it is popped first.
            const Node& l = nodes_[n.left];
            const Node& r = nodes_[n.right];
            if (box_distance2(l, p) <= box_distance2(r, p)) {
                stack.push_back(n.right);
                stack.push_back(n.left);
            } else {
                stack.push_back(n.left);
                stack.push_back(n.right);
            }
        }
    }
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = heap.top();
        heap.pop();
    }
    return out;
}

}  // namespace cellscape
