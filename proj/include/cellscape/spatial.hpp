#pragma once

#include "cellscape/cell_table.hpp"
#include "cellscape/graph.hpp"
#include "cellscape/kdtree.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cellscape {

struct RegionBounds {
    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;

    double area() const { return (xmax - xmin) * (ymax - ymin); }
    bool contains(Point2 p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
    // Shortest distance from p to any of the four edges.
    double border_distance(Point2 p) const;
    void validate() const;

    static RegionBounds bounding_box(std::span<const Point2> points);
};

// Cells sharing one level of the stratifying annotation; a single stratum
// (label == nullopt) holding every cell when there is no stratification.
struct Stratum {
    std::optional<std::string> label;
    std::vector<std::size_t> rows;
};

std::vector<Stratum> make_strata(const CellTable& table, const std::optional<std::string>& stratify_by);

// ---------------------------------------------------------------------------
// Ripley's L, center phenotype against neighbor phenotype

struct Envelope {
    std::vector<double> lo;
    std::vector<double> hi;
    std::size_t n_sims = 0;
    bool percentile = false;  // 2.5/97.5 percentiles instead of min/max
};

struct RipleyCurve {
    std::optional<std::string> stratum;
    std::string center_label;
    std::string neighbor_label;
    std::vector<double> radii;
    std::vector<double> k_values;
    std::vector<double> l_values;
    std::vector<std::size_t> n_valid_centers;
    std::size_t n_center = 0;
    std::size_t n_neighbor = 0;
    double area = 0.0;
    RegionBounds bounds;
    bool edge_correction = true;
    bool same_set = false;  // neighbors are the centers
    std::optional<Envelope> envelope;
    std::vector<std::string> warnings;

    // +1 above the envelope, -1 below, 0 inside or undefined. Empty without an envelope.
    std::vector<int> envelope_flags() const;
};

// The estimator on raw points. `same_set` marks neighbors that are the
// centers themselves (it matters for envelope simulation).
// K(r) = A / (n_valid(r) * n_neighbor) * sum over valid centers of
//        |{neighbors j : 0 < d(i, j) <= r}|,  L = sqrt(K / pi).
// With edge correction a center is valid at r only if it is at least r from
// every edge of the region ("minus sampling"); otherwise all centers count.
RipleyCurve ripley_from_points(std::span<const Point2> centers, std::span<const Point2> neighbors, bool same_set,
                               std::span<const double> radii, const RegionBounds& bounds, bool edge_correction = true);

struct RipleyParams {
    std::string annotation;
    std::string center;
    std::string neighbor;
    std::vector<double> radii;
    std::optional<RegionBounds> bounds;  // default: per-stratum bounding box
    std::optional<std::string> stratify_by;
    bool edge_correction = true;
    std::size_t envelope_sims = 0;
    std::uint64_t seed = 0;
};

std::vector<RipleyCurve> ripley_l(const CellTable& table, const RipleyParams& params);

// Simulates n_sims CSR patterns in the curve's bounds with the curve's
// center/neighbor counts, each from seed hash(seed, sim).
Envelope csr_envelope(const RipleyCurve& curve, std::size_t n_sims, std::uint64_t seed);

// Returns the curve with an envelope attached; n_sims == 0 leaves it unchanged.
RipleyCurve with_csr_envelope(RipleyCurve curve, std::size_t n_sims, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Neighbor graphs

struct GraphSpec {
    enum class Kind { Radius, Knn };
    Kind kind = Kind::Radius;
    double radius = 0.0;
    std::size_t k = 0;

    static GraphSpec with_radius(double r) { return {Kind::Radius, r, 0}; }
    static GraphSpec with_knn(std::size_t k) { return {Kind::Knn, 0.0, k}; }
    void validate() const;
};

// Undirected spatial graph over `rows` (node i is rows[i]). Radius graphs
// join pairs within the closed ball; kNN graphs join i-j when either is
// among the other's k nearest.
NeighborGraph spatial_graph(const Matrix<double>& coords, std::span<const std::size_t> rows, const GraphSpec& spec);

// ---------------------------------------------------------------------------
// Neighborhood enrichment

struct EnrichmentResult {
    std::optional<std::string> stratum;
    std::vector<std::string> labels;
    std::vector<std::vector<double>> z;
    std::vector<std::vector<std::int64_t>> observed;
    std::vector<std::vector<double>> perm_mean;
    std::vector<std::vector<double>> perm_std;
    std::size_t n_permutations = 0;
    std::size_t n_edges = 0;
    std::vector<std::string> warnings;
};

struct EnrichmentParams {
    std::string annotation;
    GraphSpec graph = GraphSpec::with_knn(6);
    std::size_t n_permutations = 1000;
    std::uint64_t seed = 0;
    std::optional<std::string> stratify_by;
};

std::vector<EnrichmentResult> neighborhood_enrichment(const CellTable& table, const EnrichmentParams& params);

// ---------------------------------------------------------------------------
// Interaction matrix

enum class RowNormalization { None, Row };

struct InteractionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    bool row_normalized = false;
};

InteractionMatrix interaction_matrix(const CellTable& table, const std::string& annotation, const GraphSpec& graph,
                                     RowNormalization normalize);

// ---------------------------------------------------------------------------
// Nearest neighbor distances

struct NearestNeighborDistances {
    std::vector<std::string> labels;
    Matrix<double> distances;  // n_cells x labels
};

NearestNeighborDistances nearest_neighbor_distances(const CellTable& table, const std::string& annotation,
                                                    const std::optional<std::string>& stratify_by);

// ---------------------------------------------------------------------------
// Neighborhood profile

enum class ProfileNormalization { Counts, AreaDensity };

struct NeighborhoodProfile {
    std::size_t n_cells = 0;
    std::vector<std::string> labels;
    std::vector<double> bin_edges;
    ProfileNormalization normalization = ProfileNormalization::Counts;
    std::vector<float> values;  // [cell][label][bin]

    std::size_t n_labels() const { return labels.size(); }
    std::size_t n_bins() const { return bin_edges.size() - 1; }
    float at(std::size_t cell, std::size_t label, std::size_t bin) const {
        return values[(cell * n_labels() + label) * n_bins() + bin];
    }
    std::vector<std::string> column_labels() const;
};

NeighborhoodProfile neighborhood_profile(const CellTable& table, const std::string& annotation,
                                         std::span<const double> bin_edges, ProfileNormalization normalize,
                                         const std::optional<std::string>& stratify_by);

// Stores the flattened profile as an associated table for embedding tools.
CellTable attach_profile(const CellTable& table, const NeighborhoodProfile& profile, const std::string& name);

}  // namespace cellscape
