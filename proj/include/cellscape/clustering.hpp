#pragma once

#include "cellscape/cell_table.hpp"
#include "cellscape/graph.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cellscape {

// Directed exact kNN graph on the rows of `data` (euclidean). Each row lists
// its k nearest other rows by increasing distance, ties to the lower index.
NeighborGraph knn_graph(const Matrix<float>& data, std::size_t k);

// Undirected graph over the union of kNN edges, weighted by the Jaccard
// index of the two endpoints' neighbor sets. Zero-weight edges are dropped.
NeighborGraph jaccard_weights(const NeighborGraph& knn);

// Modularity of a partition with the given resolution.
double modularity(const NeighborGraph& g, std::span<const std::uint32_t> labels, double resolution = 1.0);

// Multi-level Louvain. Labels are 0..C-1 in order of first appearance.
std::vector<std::uint32_t> louvain(const NeighborGraph& g, double resolution, std::uint64_t seed);

struct PhenographParams {
    std::string layer{kFeaturesLayer};
    std::size_t k = 30;
    double resolution = 1.0;
    std::uint64_t seed = 0;
    std::string out_annotation;  // default "phenograph_<layer>"
};

// knn_graph -> jaccard_weights -> louvain on a feature layer. Cluster labels
// are stored as categories "0", "1", ... in an annotation.
CellTable phenograph(const CellTable& table, const PhenographParams& params);

// Each row becomes the mean of itself and every cell within `radius`.
CellTable utag_smooth(const CellTable& table, const std::string& layer, double radius, const std::string& out_layer);

// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

}  // namespace cellscape
