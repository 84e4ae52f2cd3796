#pragma once

#include "cellscape/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace cellscape {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

inline double squared_distance(Point2 a, Point2 b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

struct Neighbor {
    std::size_t index;
    double squared_distance;
};

/// Balanced static 2D tree. Nodes split at the median of the wider axis and
/// stop at 16 points per leaf. Queries are exact and return caller-side
/// indices (row numbers in the coordinate matrix).
class KdTree2D {
public:
    static constexpr std::size_t kLeafSize = 16;

    KdTree2D() = default;
    explicit KdTree2D(const Matrix<double>& coords);
    // Tree over a subset of rows; queries report the original row numbers.
    KdTree2D(const Matrix<double>& coords, std::span<const std::size_t> rows);
    explicit KdTree2D(std::span<const Point2> points);

    std::size_t size() const noexcept { return ids_.size(); }

    // Every index with distance <= r (closed ball), ascending.
    std::vector<std::size_t> radius_query(Point2 p, double r) const;

    // Visits every point with distance <= r in unspecified order.
    void radius_visit(Point2 p, double r, const std::function<void(std::size_t, double)>& visit) const;

    // Number of points with distance <= r.
    std::size_t radius_count(Point2 p, double r) const;

    // k nearest, ordered by (distance, index). `exclude` drops one index from
    // consideration (typically the query cell itself).
    std::vector<Neighbor> knn_query(Point2 p, std::size_t k,
                                    std::optional<std::size_t> exclude = std::nullopt) const;

private:
    struct Node {
        double min_x, max_x, min_y, max_y;
        std::uint32_t begin, end;
        std::int32_t left = -1, right = -1;
    };

    void build(std::vector<Point2> points, std::vector<std::size_t> ids);
    std::int32_t build_node(std::uint32_t begin, std::uint32_t end);
    static double box_distance2(const Node& n, Point2 p);

    std::vector<Point2> points_;
    std::vector<std::size_t> ids_;
    std::vector<Node> nodes_;
};

}  // namespace cellscape
