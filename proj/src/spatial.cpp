#include "cellscape/spatial.hpp"

#include "cellscape/error.hpp"
#include "cellscape/parallel.hpp"
#include "cellscape/quantile.hpp"
#include "cellscape/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace cellscape {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Point2> gather_points(const Matrix<double>& coords, std::span<const std::size_t> rows) {
    std::vector<Point2> pts;
    pts.reserve(rows.size());
    for (std::size_t r : rows) pts.push_back({coords(r, 0), coords(r, 1)});
    return pts;
}

std::string format_number(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

void validate_radii(std::span<const double> radii) {
    if (radii.empty()) throw Error(ErrorCode::EmptyRadii, "at least one radius is required", "radii");
    for (std::size_t i = 0; i < radii.size(); ++i) {
        if (!(radii[i] > 0.0) || !std::isfinite(radii[i]) || (i > 0 && !(radii[i] > radii[i - 1]))) {
            throw Error(ErrorCode::InvalidArgument, "radii must be positive and strictly increasing", "radii");
        }
    }
}

std::uint32_t require_label(const CategoricalColumn& col, const std::string& label, const char* field) {
    auto code = col.find_category(label);
    if (!code) throw Error(ErrorCode::UnknownLabel, "unknown label '" + label + "'", field);
    return *code;
}

}  // namespace

// ---------------------------------------------------------------------------
// Regions and strata

double RegionBounds::border_distance(Point2 p) const {
    return std::min(std::min(p.x - xmin, xmax - p.x), std::min(p.y - ymin, ymax - p.y));
}

void RegionBounds::validate() const {
    if (!(xmax > xmin) || !(ymax > ymin) || !std::isfinite(area())) {
        throw Error(ErrorCode::InvalidArgument, "region bounds need xmax > xmin and ymax > ymin", "bounds");
    }
}

RegionBounds RegionBounds::bounding_box(std::span<const Point2> points) {
    RegionBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : points) {
        b.xmin = std::min(b.xmin, p.x);
        b.xmax = std::max(b.xmax, p.x);
        b.ymin = std::min(b.ymin, p.y);
        b.ymax = std::max(b.ymax, p.y);
    }
    return b;
}

std::vector<Stratum> make_strata(const CellTable& table, const std::optional<std::string>& stratify_by) {
    if (!stratify_by) {
        Stratum s;
        s.rows.resize(table.n_cells());
        for (std::size_t i = 0; i < table.n_cells(); ++i) s.rows[i] = i;
        return {std::move(s)};
    }
    const auto& col = table.annotation(*stratify_by);
    std::vector<Stratum> strata(col.categories().size());
    for (std::size_t c = 0; c < strata.size(); ++c) strata[c].label = col.categories()[c];
    for (std::size_t i = 0; i < table.n_cells(); ++i) {
        if (!col.is_missing(i)) strata[col.code(i)].rows.push_back(i);
    }
    std::erase_if(strata, [](const Stratum& s) { return s.rows.empty(); });
    return strata;
}

// ---------------------------------------------------------------------------
// Ripley

std::vector<int> RipleyCurve::envelope_flags() const {
    std::vector<int> flags;
    if (!envelope) return flags;
    flags.resize(radii.size(), 0);
    for (std::size_t r = 0; r < radii.size(); ++r) {
        const double l = l_values[r];
        if (std::isnan(l) || std::isnan(envelope->lo[r]) || std::isnan(envelope->hi[r])) continue;
        if (l > envelope->hi[r]) flags[r] = 1;
        if (l < envelope->lo[r]) flags[r] = -1;
    }
    return flags;
}

RipleyCurve ripley_from_points(std::span<const Point2> centers, std::span<const Point2> neighbors, bool same_set,
                               std::span<const double> radii, const RegionBounds& bounds, bool edge_correction) {
    validate_radii(radii);
    const std::size_t n_radii = radii.size();
    RipleyCurve curve;
    curve.radii.assign(radii.begin(), radii.end());
    curve.n_center = centers.size();
    curve.n_neighbor = neighbors.size();
    curve.area = bounds.area();
    curve.bounds = bounds;
    curve.edge_correction = edge_correction;
    curve.same_set = same_set;
    curve.k_values.assign(n_radii, kNaN);
    curve.l_values.assign(n_radii, kNaN);
    curve.n_valid_centers.assign(n_radii, 0);

    const KdTree2D tree(neighbors);
    const double r_max = radii.back();
    constexpr std::size_t grain = 256;
    const std::size_t n_chunks = chunk_count(centers.size(), grain);
    std::vector<std::vector<std::uint64_t>> chunk_pairs(n_chunks, std::vector<std::uint64_t>(n_radii, 0));
    std::vector<std::vector<std::uint64_t>> chunk_valid(n_chunks, std::vector<std::uint64_t>(n_radii, 0));

    parallel_chunks(centers.size(), grain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto& pairs = chunk_pairs[chunk];
        auto& valid = chunk_valid[chunk];
        std::vector<double> d2;
        for (std::size_t i = begin; i < end; ++i) {
            const Point2 c = centers[i];
            const double border = bounds.border_distance(c);
            if (edge_correction && border < radii.front()) continue;
            d2.clear();
            // Pairs at distance zero never count, which also drops self-pairs.
            tree.radius_visit(c, r_max, [&](std::size_t, double dist2) {
                if (dist2 > 0.0) d2.push_back(dist2);
            });
            std::sort(d2.begin(), d2.end());
            for (std::size_t r = 0; r < n_radii; ++r) {
                if (edge_correction && border < radii[r]) break;
                ++valid[r];
                const double r2 = radii[r] * radii[r];
                pairs[r] += static_cast<std::uint64_t>(std::upper_bound(d2.begin(), d2.end(), r2) - d2.begin());
            }
        }
    });

    bool warned_empty_neighbor = false;
    for (std::size_t r = 0; r < n_radii; ++r) {
        std::uint64_t pairs = 0;
        std::uint64_t valid = 0;
        for (std::size_t c = 0; c < n_chunks; ++c) {
            pairs += chunk_pairs[c][r];
            valid += chunk_valid[c][r];
        }
        curve.n_valid_centers[r] = static_cast<std::size_t>(valid);
        if (curve.n_neighbor == 0) {
            if (!warned_empty_neighbor) curve.warnings.push_back("no neighbor cells; K and L undefined");
            warned_empty_neighbor = true;
            continue;
        }
        if (valid == 0) {
            curve.warnings.push_back("radius " + format_number(radii[r]) + ": no valid centers; K and L undefined");
            continue;
        }
        const double k = curve.area * static_cast<double>(pairs) /
                         (static_cast<double>(valid) * static_cast<double>(curve.n_neighbor));
        curve.k_values[r] = k;
        curve.l_values[r] = std::sqrt(k / std::numbers::pi);
    }
    return curve;
}

std::vector<RipleyCurve> ripley_l(const CellTable& table, const RipleyParams& params) {
    validate_radii(params.radii);
    const auto& col = table.annotation(params.annotation);
    const std::uint32_t center_code = require_label(col, params.center, "center");
    const std::uint32_t neighbor_code = require_label(col, params.neighbor, "neighbor");
    if (params.bounds) params.bounds->validate();
    const bool same_set = center_code == neighbor_code;

    std::vector<RipleyCurve> curves;
    for (const auto& stratum : make_strata(table, params.stratify_by)) {
        std::vector<std::string> warnings;
        std::vector<std::size_t> rows;
        RegionBounds bounds;
        if (params.bounds) {
            bounds = *params.bounds;
            for (std::size_t r : stratum.rows) {
                if (bounds.contains({table.coords()(r, 0), table.coords()(r, 1)})) rows.push_back(r);
            }
            if (rows.size() < stratum.rows.size()) {
                warnings.push_back(std::to_string(stratum.rows.size() - rows.size()) +
                                   " cell(s) outside the region bounds ignored");
            }
        } else {
            rows = stratum.rows;
            bounds = RegionBounds::bounding_box(gather_points(table.coords(), rows));
        }

        std::vector<Point2> centers;
        std::vector<Point2> neighbors;
        for (std::size_t r : rows) {
            const auto code = col.code(r);
            const Point2 p{table.coords()(r, 0), table.coords()(r, 1)};
            if (code == center_code) centers.push_back(p);
            if (code == neighbor_code && !same_set) neighbors.push_back(p);
        }
        if (same_set) neighbors = centers;

        RipleyCurve curve;
        const bool degenerate = !(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin);
        if (degenerate) {
            curve.radii = params.radii;
            curve.k_values.assign(params.radii.size(), kNaN);
            curve.l_values.assign(params.radii.size(), kNaN);
            curve.n_valid_centers.assign(params.radii.size(), 0);
            curve.n_center = centers.size();
            curve.n_neighbor = neighbors.size();
            curve.bounds = bounds;
            curve.area = 0.0;
            curve.edge_correction = params.edge_correction;
            curve.same_set = same_set;
            curve.warnings.push_back("region has zero area; K and L undefined");
        } else {
            curve = ripley_from_points(centers, neighbors, same_set, params.radii, bounds, params.edge_correction);
        }
        if (centers.empty()) curve.warnings.push_back("no '" + params.center + "' cells in stratum");
        if (neighbors.empty() && !same_set) curve.warnings.push_back("no '" + params.neighbor + "' cells in stratum");
        curve.warnings.insert(curve.warnings.begin(), warnings.begin(), warnings.end());
        curve.stratum = stratum.label;
        curve.center_label = params.center;
        curve.neighbor_label = params.neighbor;
        if (params.envelope_sims > 0 && !degenerate) {
            curve.envelope = csr_envelope(curve, params.envelope_sims, params.seed);
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

Envelope csr_envelope(const RipleyCurve& curve, std::size_t n_sims, std::uint64_t seed) {
    Envelope env;
    env.n_sims = n_sims;
    env.percentile = n_sims >= 199;
    const std::size_t n_radii = curve.radii.size();
    env.lo.assign(n_radii, kNaN);
    env.hi.assign(n_radii, kNaN);
    if (n_sims == 0) return env;
    curve.bounds.validate();

    const bool same_set = curve.same_set;
    std::vector<double> sims(n_sims * n_radii, kNaN);
    parallel_for(n_sims, [&](std::size_t s) {
        Rng rng(derive_seed(seed, s));
        const auto& b = curve.bounds;
        auto draw = [&](std::size_t n) {
            std::vector<Point2> pts(n);
            for (auto& p : pts) {
                p.x = rng.uniform(b.xmin, b.xmax);
                p.y = rng.uniform(b.ymin, b.ymax);
            }
            return pts;
        };
        const auto centers = draw(curve.n_center);
        const auto neighbors = same_set ? centers : draw(curve.n_neighbor);
        const auto sim = ripley_from_points(centers, neighbors, same_set, curve.radii, b, curve.edge_correction);
        std::copy(sim.l_values.begin(), sim.l_values.end(), sims.begin() + static_cast<std::ptrdiff_t>(s * n_radii));
    });

    std::vector<double> column;
    for (std::size_t r = 0; r < n_radii; ++r) {
        column.clear();
        for (std::size_t s = 0; s < n_sims; ++s) {
            const double v = sims[s * n_radii + r];
            if (!std::isnan(v)) column.push_back(v);
        }
        if (column.empty()) continue;
        std::sort(column.begin(), column.end());
        if (env.percentile) {
            env.lo[r] = quantile_sorted<double>(column, 0.025);
            env.hi[r] = quantile_sorted<double>(column, 0.975);
        } else {
            env.lo[r] = column.front();
            env.hi[r] = column.back();
        }
    }
    return env;
}

RipleyCurve with_csr_envelope(RipleyCurve curve, std::size_t n_sims, std::uint64_t seed) {
    if (n_sims == 0) return curve;
    curve.envelope = csr_envelope(curve, n_sims, seed);
    return curve;
}

// ---------------------------------------------------------------------------
// Graphs

void GraphSpec::validate() const {
    if (kind == Kind::Radius && !(radius > 0.0 && std::isfinite(radius))) {
        throw Error(ErrorCode::NonPositiveRadius, "graph radius must be > 0", "radius");
    }
    if (kind == Kind::Knn && k == 0) throw Error(ErrorCode::InvalidArgument, "graph k must be >= 1", "k");
}

NeighborGraph spatial_graph(const Matrix<double>& coords, std::span<const std::size_t> rows, const GraphSpec& spec) {
    spec.validate();
    const std::size_t n = rows.size();
    const KdTree2D tree(coords, rows);
    std::vector<std::uint32_t> local(coords.rows(), 0);
    for (std::size_t i = 0; i < n; ++i) local[rows[i]] = static_cast<std::uint32_t>(i);

    if (spec.kind == GraphSpec::Kind::Knn && n > 0 && spec.k > n - 1) {
        throw Error(ErrorCode::KTooLarge,
                    "k=" + std::to_string(spec.k) + " needs more than " + std::to_string(n) + " cells", "k");
    }

    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> per_node(n);
    parallel_for(n, [&](std::size_t i) {
        const Point2 p{coords(rows[i], 0), coords(rows[i], 1)};
        auto& out = per_node[i];
        if (spec.kind == GraphSpec::Kind::Radius) {
            tree.radius_visit(p, spec.radius, [&](std::size_t j, double) {
                const auto lj = local[j];
                if (lj > i) out.emplace_back(static_cast<std::uint32_t>(i), lj);
            });
        } else {
            for (const auto& nb : tree.knn_query(p, spec.k, rows[i])) {
                out.emplace_back(static_cast<std::uint32_t>(i), local[nb.index]);
            }
        }
    });
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (auto& v : per_node) edges.insert(edges.end(), v.begin(), v.end());
    return NeighborGraph::undirected_from_edges(n, std::move(edges));
}

// ---------------------------------------------------------------------------
// Enrichment

namespace {

void count_pairs(const NeighborGraph& g, std::span<const std::uint32_t> labels, std::size_t n_labels,
                 std::vector<std::int64_t>& counts) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t u = 0; u < g.n_nodes; ++u) {
        const auto a = labels[u];
        for (auto v : g.neighbors_of(u)) {
            if (v <= u) continue;
            const auto b = labels[v];
            if (a == b) {
                ++counts[a * n_labels + a];
            } else {
                ++counts[a * n_labels + b];
                ++counts[b * n_labels + a];
            }
        }
    }
}

}  // namespace

std::vector<EnrichmentResult> neighborhood_enrichment(const CellTable& table, const EnrichmentParams& params) {
    const auto& col = table.annotation(params.annotation);
    params.graph.validate();
    if (params.n_permutations == 0) {
        throw Error(ErrorCode::InvalidArgument, "n_permutations must be >= 1", "n_permutations");
    }
    const std::size_t n_labels = col.categories().size();

    std::vector<EnrichmentResult> results;
    for (const auto& stratum : make_strata(table, params.stratify_by)) {
        std::vector<std::size_t> rows;
        for (std::size_t r : stratum.rows) {
            if (!col.is_missing(r)) rows.push_back(r);
        }
        std::vector<std::uint32_t> labels(rows.size());
        std::vector<char> present(n_labels, 0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            labels[i] = col.code(rows[i]);
            present[labels[i]] = 1;
        }
        const std::string where = stratum.label ? " in stratum '" + *stratum.label + "'" : "";
        if (std::count(present.begin(), present.end(), 1) < 2) {
            throw Error(ErrorCode::SingleLabel, "enrichment needs at least two labels" + where, params.annotation);
        }
        const NeighborGraph graph = spatial_graph(table.coords(), rows, params.graph);
        if (graph.n_edges() == 0) throw Error(ErrorCode::EmptyGraph, "spatial graph has no edges" + where, "graph");

        const std::size_t cells = n_labels * n_labels;
        std::vector<std::int64_t> observed(cells);
        count_pairs(graph, labels, n_labels, observed);

        // Exact integer accumulation makes the reduction order irrelevant.
        constexpr std::size_t grain = 8;
        const std::size_t n_chunks = chunk_count(params.n_permutations, grain);
        std::vector<std::vector<__int128>> chunk_sum(n_chunks, std::vector<__int128>(cells, 0));
        std::vector<std::vector<__int128>> chunk_sumsq(n_chunks, std::vector<__int128>(cells, 0));
        parallel_chunks(params.n_permutations, grain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
            std::vector<std::uint32_t> shuffled(labels.size());
            std::vector<std::int64_t> counts(cells);
            for (std::size_t t = begin; t < end; ++t) {
                std::copy(labels.begin(), labels.end(), shuffled.begin());
                Rng rng(derive_seed(params.seed, t));
                rng.shuffle(std::span<std::uint32_t>(shuffled));
                count_pairs(graph, shuffled, n_labels, counts);
                for (std::size_t c = 0; c < cells; ++c) {
                    chunk_sum[chunk][c] += counts[c];
                    chunk_sumsq[chunk][c] += static_cast<__int128>(counts[c]) * counts[c];
                }
            }
        });

        EnrichmentResult res;
        res.stratum = stratum.label;
        res.labels = col.categories();
        res.n_permutations = params.n_permutations;
        res.n_edges = graph.n_edges() / 2;
        res.z.assign(n_labels, std::vector<double>(n_labels, kNaN));
        res.observed.assign(n_labels, std::vector<std::int64_t>(n_labels, 0));
        res.perm_mean.assign(n_labels, std::vector<double>(n_labels, 0.0));
        res.perm_std.assign(n_labels, std::vector<double>(n_labels, 0.0));
        const auto N = static_cast<__int128>(params.n_permutations);
        std::size_t undefined = 0;
        for (std::size_t c = 0; c < cells; ++c) {
            __int128 s = 0;
            __int128 ss = 0;
            for (std::size_t k = 0; k < n_chunks; ++k) {
                s += chunk_sum[k][c];
                ss += chunk_sumsq[k][c];
            }
            const std::size_t p = c / n_labels;
            const std::size_t q = c % n_labels;
            const double mean = static_cast<double>(s) / static_cast<double>(N);
            const __int128 var_num = N * ss - s * s;  // N^2 * population variance
            const double sd = std::sqrt(static_cast<double>(var_num)) / static_cast<double>(N);
            res.observed[p][q] = observed[c];
            res.perm_mean[p][q] = mean;
            res.perm_std[p][q] = sd;
            if (var_num > 0) {
                res.z[p][q] = (static_cast<double>(observed[c]) - mean) / sd;
            } else {
                ++undefined;
            }
        }
        if (undefined > 0) {
            res.warnings.push_back(std::to_string(undefined) +
                                   " label pair(s) have zero permutation variance; z undefined");
        }
        results.push_back(std::move(res));
    }
    return results;
}

// ---------------------------------------------------------------------------
// Interaction matrix

InteractionMatrix interaction_matrix(const CellTable& table, const std::string& annotation, const GraphSpec& graph_spec,
                                     RowNormalization normalize) {
    const auto& col = table.annotation(annotation);
    const std::size_t n_labels = col.categories().size();
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < table.n_cells(); ++i) {
        if (!col.is_missing(i)) rows.push_back(i);
    }
    const NeighborGraph g = spatial_graph(table.coords(), rows, graph_spec);

    InteractionMatrix m;
    m.labels = col.categories();
    m.row_normalized = normalize == RowNormalization::Row;
    m.values.assign(n_labels, std::vector<double>(n_labels, 0.0));
    std::vector<std::uint64_t> counts(n_labels * n_labels, 0);
    for (std::size_t u = 0; u < g.n_nodes; ++u) {
        const auto a = col.code(rows[u]);
        for (auto v : g.neighbors_of(u)) ++counts[a * n_labels + col.code(rows[v])];
    }
    for (std::size_t p = 0; p < n_labels; ++p) {
        std::uint64_t row_sum = 0;
        for (std::size_t q = 0; q < n_labels; ++q) row_sum += counts[p * n_labels + q];
        for (std::size_t q = 0; q < n_labels; ++q) {
            const auto c = static_cast<double>(counts[p * n_labels + q]);
            m.values[p][q] = !m.row_normalized ? c : (row_sum == 0 ? 0.0 : c / static_cast<double>(row_sum));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Nearest neighbor distances

NearestNeighborDistances nearest_neighbor_distances(const CellTable& table, const std::string& annotation,
                                                    const std::optional<std::string>& stratify_by) {
    const auto& col = table.annotation(annotation);
    const std::size_t n_labels = col.categories().size();
    const std::size_t n = table.n_cells();
    std::vector<double> out(n * n_labels, kNaN);

    for (const auto& stratum : make_strata(table, stratify_by)) {
        std::vector<std::vector<std::size_t>> by_label(n_labels);
        for (std::size_t r : stratum.rows) {
            if (!col.is_missing(r)) by_label[col.code(r)].push_back(r);
        }
        for (std::size_t q = 0; q < n_labels; ++q) {
            if (by_label[q].empty()) continue;
            const KdTree2D tree(table.coords(), by_label[q]);
            parallel_for(stratum.rows.size(), [&](std::size_t k) {
                const std::size_t i = stratum.rows[k];
                const bool is_q = !col.is_missing(i) && col.code(i) == q;
                if (is_q && by_label[q].size() < 2) return;
                const Point2 p{table.coords()(i, 0), table.coords()(i, 1)};
                const auto nn = tree.knn_query(p, 1, is_q ? std::optional<std::size_t>(i) : std::nullopt);
                out[i * n_labels + q] = std::sqrt(nn.front().squared_distance);
            });
        }
    }
    return {col.categories(), Matrix<double>(n, n_labels, std::move(out))};
}

// ---------------------------------------------------------------------------
// Neighborhood profile

std::vector<std::string> NeighborhoodProfile::column_labels() const {
    std::vector<std::string> out;
    for (const auto& label : labels) {
        for (std::size_t b = 0; b < n_bins(); ++b) {
            out.push_back(label + "|" + format_number(bin_edges[b]) + "-" + format_number(bin_edges[b + 1]));
        }
    }
    return out;
}

NeighborhoodProfile neighborhood_profile(const CellTable& table, const std::string& annotation,
                                         std::span<const double> bin_edges, ProfileNormalization normalize,
                                         const std::optional<std::string>& stratify_by) {
    if (bin_edges.size() < 2 || !(bin_edges.front() >= 0.0)) {
        throw Error(ErrorCode::BadBinEdges, "need at least two bin edges starting at >= 0", "bin_edges");
    }
    for (std::size_t b = 0; b < bin_edges.size(); ++b) {
        if (!std::isfinite(bin_edges[b]) || (b > 0 && !(bin_edges[b] > bin_edges[b - 1]))) {
            throw Error(ErrorCode::BadBinEdges, "bin edges must be finite and strictly increasing", "bin_edges");
        }
    }
    const auto& col = table.annotation(annotation);

    NeighborhoodProfile prof;
    prof.n_cells = table.n_cells();
    prof.labels = col.categories();
    prof.bin_edges.assign(bin_edges.begin(), bin_edges.end());
    prof.normalization = normalize;
    const std::size_t n_labels = prof.n_labels();
    const std::size_t n_bins = prof.n_bins();
    prof.values.assign(prof.n_cells * n_labels * n_bins, 0.0f);

    std::vector<double> bin_area(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        bin_area[b] = std::numbers::pi * (bin_edges[b + 1] * bin_edges[b + 1] - bin_edges[b] * bin_edges[b]);
    }
    const double max_edge = bin_edges.back();
    const double lo_edge = bin_edges.front();
    // Widen the search slightly; the half-open bin test below is authoritative.
    const double search = max_edge * (1.0 + 1e-12);

    for (const auto& stratum : make_strata(table, stratify_by)) {
        std::vector<std::size_t> labeled;
        for (std::size_t r : stratum.rows) {
            if (!col.is_missing(r)) labeled.push_back(r);
        }
        const KdTree2D tree(table.coords(), labeled);
        parallel_for(stratum.rows.size(), [&](std::size_t k) {
            const std::size_t i = stratum.rows[k];
            const Point2 p{table.coords()(i, 0), table.coords()(i, 1)};
            std::vector<std::uint32_t> counts(n_labels * n_bins, 0);
            tree.radius_visit(p, search, [&](std::size_t j, double d2) {
                if (j == i) return;
                const double d = std::sqrt(d2);
                if (d < lo_edge || d >= max_edge) return;
                const auto b = static_cast<std::size_t>(std::upper_bound(bin_edges.begin(), bin_edges.end(), d) -
                                                        bin_edges.begin()) - 1;
                ++counts[col.code(j) * n_bins + b];
            });
            float* dst = prof.values.data() + i * n_labels * n_bins;
            for (std::size_t c = 0; c < counts.size(); ++c) {
                const double v = static_cast<double>(counts[c]);
                dst[c] = static_cast<float>(normalize == ProfileNormalization::Counts ? v : v / bin_area[c % n_bins]);
            }
        });
    }
    return prof;
}

CellTable attach_profile(const CellTable& table, const NeighborhoodProfile& profile, const std::string& name) {
    if (profile.n_cells != table.n_cells()) {
        throw Error(ErrorCode::LengthMismatch, "profile does not match the table's cell count", name);
    }
    const std::size_t cols = profile.n_labels() * profile.n_bins();
    AssociatedTable assoc{Matrix<float>(profile.n_cells, cols, profile.values), profile.column_labels()};
    return table.with_associated(name, std::move(assoc))
        .with_record(make_record("neighborhood_profile",
                                 {{"name", name},
                                  {"bin_edges", profile.bin_edges},
                                  {"labels", profile.labels},
                                  {"normalization", profile.normalization == ProfileNormalization::Counts
                                                        ? "counts"
                                                        : "area-density"}}));
}

}  // namespace cellscape
