#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace cellscape {

/// Compressed adjacency over n nodes. For undirected graphs every edge is
/// stored in both endpoint rows.
struct NeighborGraph {
    std::size_t n_nodes = 0;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> neighbors;
    std::vector<float> weights;
    bool directed = true;

    std::span<const std::uint32_t> neighbors_of(std::size_t i) const {
        return std::span<const std::uint32_t>(neighbors).subspan(offsets[i], offsets[i + 1] - offsets[i]);
    }
    std::span<const float> weights_of(std::size_t i) const {
        return std::span<const float>(weights).subspan(offsets[i], offsets[i + 1] - offsets[i]);
    }
    std::size_t n_edges() const noexcept { return neighbors.size(); }

    // Checks offsets, no self-loops, non-negative weights.
    bool valid() const;

    // Undirected unit-weight graph from an edge list; duplicates collapse and
    // each row is sorted by neighbor index.
    static NeighborGraph undirected_from_edges(std::size_t n_nodes,
                                               std::vector<std::pair<std::uint32_t, std::uint32_t>> edges);
};

}  // namespace cellscape
