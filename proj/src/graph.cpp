#include "cellscape/graph.hpp"

#include <algorithm>

namespace cellscape {

bool NeighborGraph::valid() const {
    if (offsets.size() != n_nodes + 1 || offsets.front() != 0 || offsets.back() != neighbors.size()) return false;
    if (weights.size() != neighbors.size()) return false;
    for (std::size_t i = 0; i < n_nodes; ++i) {
        if (offsets[i] > offsets[i + 1]) return false;
        for (auto j : neighbors_of(i)) {
            if (j == i || j >= n_nodes) return false;
        }
    }
    return std::all_of(weights.begin(), weights.end(), [](float w) { return w >= 0.0f; });
}

NeighborGraph NeighborGraph::undirected_from_edges(std::size_t n_nodes,
                                                   std::vector<std::pair<std::uint32_t, std::uint32_t>> edges) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> both;
    both.reserve(edges.size() * 2);
    for (auto [a, b] : edges) {
        if (a == b) continue;
        both.emplace_back(a, b);
        both.emplace_back(b, a);
    }
    std::sort(both.begin(), both.end());
    both.erase(std::unique(both.begin(), both.end()), both.end());

    NeighborGraph g;
    g.n_nodes = n_nodes;
    g.directed = false;
    g.offsets.assign(n_nodes + 1, 0);
    for (auto [a, b] : both) ++g.offsets[a + 1];
    for (std::size_t i = 0; i < n_nodes; ++i) g.offsets[i + 1] += g.offsets[i];
    g.neighbors.reserve(both.size());
    for (auto [a, b] : both) g.neighbors.push_back(b);
    g.weights.assign(both.size(), 1.0f);
    return g;
}

}  // namespace cellscape
