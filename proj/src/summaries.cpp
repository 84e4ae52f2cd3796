#include "cellscape/summaries.hpp"

#include "cellscape/error.hpp"
#include "cellscape/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cellscape {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kGrain = 1 << 16;

// Group index per cell; a missing group maps to `missing_code`.
struct Grouping {
    std::vector<std::optional<std::string>> labels;
    std::span<const std::uint32_t> codes;  // empty when ungrouped

    std::size_t size() const { return labels.size(); }
    std::uint32_t of(std::size_t i) const { return codes.empty() ? 0 : codes[i]; }
};

Grouping make_grouping(const CellTable& table, const std::optional<std::string>& group_by) {
    Grouping g;
    if (!group_by) {
        g.labels.push_back(std::nullopt);
        return g;
    }
    const auto& col = table.annotation(*group_by);
    for (const auto& c : col.categories()) g.labels.emplace_back(c);
    g.codes = col.codes();
    return g;
}

// One column of a feature layer as a strided view.
struct ColumnView {
    const float* base = nullptr;
    std::size_t stride = 1;
    float operator[](std::size_t i) const { return base[i * stride]; }
};

ColumnView feature_column(const CellTable& table, const std::string& layer, const std::string& feature) {
    const auto& m = table.layer(layer);
    const std::size_t j = table.feature_index(feature);
    return {m.values().data() + j, m.cols()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Histogram

Histogram histogram(const CellTable& table, const HistogramParams& params) {
    if (params.feature.has_value() == params.annotation.has_value()) {
        throw Error(ErrorCode::InvalidArgument, "exactly one of feature or annotation is required", "feature");
    }
    const std::size_t n = table.n_cells();
    const Grouping grouping = make_grouping(table, params.group_by);
    const std::size_t n_groups = grouping.size();
    Histogram out;

    if (params.annotation) {
        const auto& col = table.annotation(*params.annotation);
        out.categories = col.categories();
        const std::size_t n_bins = out.categories.size();
        const auto codes = col.codes();
        // Per-group bins plus one slot for missing codes and one for missing groups.
        const std::size_t width = n_groups * (n_bins + 1) + 1;
        const std::size_t n_chunks = chunk_count(n, kGrain);
        std::vector<std::uint64_t> partial(n_chunks * width, 0);
        parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
            auto* acc = partial.data() + chunk * width;
            for (std::size_t i = begin; i < end; ++i) {
                const auto g = grouping.of(i);
                if (g == CategoricalColumn::missing_code) {
                    ++acc[width - 1];
                    continue;
                }
                const auto c = codes[i];
                ++acc[g * (n_bins + 1) + (c == CategoricalColumn::missing_code ? n_bins : c)];
            }
        });
        std::vector<std::uint64_t> total(width, 0);
        for (std::size_t c = 0; c < n_chunks; ++c) {
            for (std::size_t k = 0; k < width; ++k) total[k] += partial[c * width + k];
        }
        for (std::size_t g = 0; g < n_groups; ++g) {
            HistogramGroup hg;
            hg.label = grouping.labels[g];
            hg.counts.assign(total.begin() + static_cast<std::ptrdiff_t>(g * (n_bins + 1)),
                             total.begin() + static_cast<std::ptrdiff_t>(g * (n_bins + 1) + n_bins));
            hg.n_nan = total[g * (n_bins + 1) + n_bins];
            out.groups.push_back(std::move(hg));
        }
        out.n_missing_group = total[width - 1];
        return out;
    }

    const ColumnView column = feature_column(table, params.layer, *params.feature);
    const bool explicit_edges = !params.edges.empty();
    if (explicit_edges) {
        if (params.edges.size() < 2) throw Error(ErrorCode::BadBinEdges, "need at least two edges", "edges");
        for (std::size_t b = 0; b < params.edges.size(); ++b) {
            if (!std::isfinite(params.edges[b]) || (b > 0 && !(params.edges[b] > params.edges[b - 1]))) {
                throw Error(ErrorCode::BadBinEdges, "edges must be finite and strictly increasing", "edges");
            }
        }
        out.edges = params.edges;
    } else {
        if (params.n_bins == 0) throw Error(ErrorCode::InvalidArgument, "n_bins must be >= 1", "n_bins");
        const std::size_t n_chunks = chunk_count(n, kGrain);
        std::vector<double> lo(n_chunks, std::numeric_limits<double>::infinity());
        std::vector<double> hi(n_chunks, -std::numeric_limits<double>::infinity());
        parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
            float l = std::numeric_limits<float>::infinity();
            float h = -std::numeric_limits<float>::infinity();
            for (std::size_t i = begin; i < end; ++i) {
                const float v = column[i];
                if (std::isnan(v) || grouping.of(i) == CategoricalColumn::missing_code) continue;
                l = std::min(l, v);
                h = std::max(h, v);
            }
            lo[chunk] = l;
            hi[chunk] = h;
        });
        const double vmin = *std::min_element(lo.begin(), lo.end());
        const double vmax = *std::max_element(hi.begin(), hi.end());
        if (!std::isfinite(vmin) || !std::isfinite(vmax)) {
            throw Error(ErrorCode::EmptyColumn, "no finite values in '" + *params.feature + "'", "feature");
        }
        const double a = vmin == vmax ? vmin - 0.5 : vmin;
        const double b = vmin == vmax ? vmax + 0.5 : vmax;
        out.edges.resize(params.n_bins + 1);
        for (std::size_t k = 0; k <= params.n_bins; ++k) {
            out.edges[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(params.n_bins);
        }
        out.edges.back() = b;
    }

    const auto& edges = out.edges;
    const std::size_t n_bins = edges.size() - 1;
    const double first = edges.front();
    const double last = edges.back();
    const double scale = static_cast<double>(n_bins) / (last - first);
    // Per group: bins, NaN, out of range. Then one slot for missing groups.
    const std::size_t stride = n_bins + 2;
    const std::size_t width = n_groups * stride + 1;
    const std::size_t n_chunks = chunk_count(n, kGrain);
    std::vector<std::uint64_t> partial(n_chunks * width, 0);
    parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto* acc = partial.data() + chunk * width;
        for (std::size_t i = begin; i < end; ++i) {
            const auto g = grouping.of(i);
            if (g == CategoricalColumn::missing_code) {
                ++acc[width - 1];
                continue;
            }
            auto* row = acc + g * stride;
            const double v = column[i];
            if (std::isnan(v)) {
                ++row[n_bins];
                continue;
            }
            if (v < first || v > last) {
                ++row[n_bins + 1];
                continue;
            }
            // Arithmetic guess, then nudge so the edges themselves decide.
            auto k = static_cast<std::size_t>(std::min((v - first) * scale, static_cast<double>(n_bins - 1)));
            while (k > 0 && v < edges[k]) --k;
            while (k + 1 < n_bins && v >= edges[k + 1]) ++k;
            ++row[k];
        }
    });
    std::vector<std::uint64_t> total(width, 0);
    for (std::size_t c = 0; c < n_chunks; ++c) {
        for (std::size_t k = 0; k < width; ++k) total[k] += partial[c * width + k];
    }
    for (std::size_t g = 0; g < n_groups; ++g) {
        HistogramGroup hg;
        hg.label = grouping.labels[g];
        const auto* row = total.data() + g * stride;
        hg.counts.assign(row, row + n_bins);
        hg.n_nan = row[n_bins];
        hg.n_out_of_range = row[n_bins + 1];
        out.groups.push_back(std::move(hg));
    }
    out.n_missing_group = total[width - 1];
    return out;
}

// ---------------------------------------------------------------------------
// Boxplot

namespace {

// Quantile by selection; reorders `v`.
double select_quantile(std::vector<double>& v, double q) {
    const double h = static_cast<double>(v.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (lo + 1 >= v.size()) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (h - static_cast<double>(lo)) * (b - a);
}

}  // namespace

BoxStats box_stats(std::vector<double> v) {
    BoxStats s;
    s.n_nan = static_cast<std::uint64_t>(std::erase_if(v, [](double x) { return std::isnan(x); }));
    s.n = v.size();
    if (v.empty()) {
        s.min = s.q1 = s.median = s.q3 = s.max = s.whisker_lo = s.whisker_hi = kNaN;
        return s;
    }
    s.median = select_quantile(v, 0.5);
    s.q1 = select_quantile(v, 0.25);
    s.q3 = select_quantile(v, 0.75);
    const double iqr = s.q3 - s.q1;
    const double fence_lo = s.q1 - 1.5 * iqr;
    const double fence_hi = s.q3 + 1.5 * iqr;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    s.whisker_lo = std::numeric_limits<double>::infinity();
    s.whisker_hi = -std::numeric_limits<double>::infinity();
    for (const double x : v) {
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
        if (x < fence_lo || x > fence_hi) {
            ++s.n_outliers;
            continue;
        }
        s.whisker_lo = std::min(s.whisker_lo, x);
        s.whisker_hi = std::max(s.whisker_hi, x);
    }
    return s;
}

BoxplotResult boxplot_stats(const CellTable& table, const std::string& feature, const std::string& layer,
                            const std::optional<std::string>& group_by) {
    const std::size_t n = table.n_cells();
    const ColumnView column = feature_column(table, layer, feature);
    const Grouping grouping = make_grouping(table, group_by);
    const std::size_t n_groups = grouping.size();

    // Two passes: count per chunk and group, then scatter into place.
    const std::size_t width = n_groups + 1;  // groups, then missing group
    const std::size_t n_chunks = chunk_count(n, kGrain);
    std::vector<std::uint64_t> counts(n_chunks * width, 0);
    std::vector<std::uint64_t> nan_counts(n_chunks * n_groups, 0);
    parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto* acc = counts.data() + chunk * width;
        for (std::size_t i = begin; i < end; ++i) {
            const auto g = grouping.of(i);
            if (g == CategoricalColumn::missing_code) {
                ++acc[n_groups];
            } else if (std::isnan(column[i])) {
                ++nan_counts[chunk * n_groups + g];
            } else {
                ++acc[g];
            }
        }
    });
    std::vector<std::vector<std::size_t>> offsets(n_chunks, std::vector<std::size_t>(n_groups, 0));
    std::vector<std::vector<double>> values(n_groups);
    BoxplotResult result;
    result.feature = feature;
    for (std::size_t g = 0; g < n_groups; ++g) {
        std::size_t running = 0;
        for (std::size_t c = 0; c < n_chunks; ++c) {
            offsets[c][g] = running;
            running += counts[c * width + g];
        }
        values[g].resize(running);
    }
    for (std::size_t c = 0; c < n_chunks; ++c) result.n_missing_group += counts[c * width + n_groups];
    parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto pos = offsets[chunk];
        for (std::size_t i = begin; i < end; ++i) {
            const auto g = grouping.of(i);
            if (g == CategoricalColumn::missing_code) continue;
            const float v = column[i];
            if (!std::isnan(v)) values[g][pos[g]++] = v;
        }
    });

    result.groups.resize(n_groups);
    parallel_for(n_groups, [&](std::size_t g) {
        result.groups[g] = box_stats(std::move(values[g]));
        result.groups[g].label = grouping.labels[g];
        for (std::size_t c = 0; c < n_chunks; ++c) result.groups[g].n_nan += nan_counts[c * n_groups + g];
    });
    return result;
}

// ---------------------------------------------------------------------------
// Group means

GroupMeans group_means(const CellTable& table, const std::string& layer, const std::optional<std::string>& group_by) {
    const auto& m = table.layer(layer);
    const std::size_t n = table.n_cells();
    const std::size_t d = m.cols();
    const Grouping grouping = make_grouping(table, group_by);
    const std::size_t n_groups = grouping.size();
    const auto data = m.values();

    // Fixed chunks of partial sums, combined by pairwise summation, so the
    // result does not depend on the thread count.
    const std::size_t n_chunks = chunk_count(n, kGrain);
    const std::size_t width = n_groups * d;
    std::vector<double> sums(n_chunks * width, 0.0);
    std::vector<std::uint64_t> counts(n_chunks * width, 0);
    std::vector<std::uint64_t> sizes(n_chunks * (n_groups + 1), 0);
    parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        double* s = sums.data() + chunk * width;
        std::uint64_t* c = counts.data() + chunk * width;
        std::uint64_t* z = sizes.data() + chunk * (n_groups + 1);
        for (std::size_t i = begin; i < end; ++i) {
            const auto g = grouping.of(i);
            if (g == CategoricalColumn::missing_code) {
                ++z[n_groups];
                continue;
            }
            ++z[g];
            for (std::size_t j = 0; j < d; ++j) {
                const float v = data[i * d + j];
                if (std::isnan(v)) continue;
                s[g * d + j] += v;
                ++c[g * d + j];
            }
        }
    });

    GroupMeans out;
    for (const auto& l : grouping.labels) out.groups.push_back(l.value_or("all"));
    out.features = table.feature_names();
    out.means.assign(n_groups, std::vector<double>(d, kNaN));
    out.counts.assign(n_groups, std::vector<std::uint64_t>(d, 0));
    out.sizes.assign(n_groups, 0);
    std::vector<double> column(n_chunks);
    for (std::size_t g = 0; g < n_groups; ++g) {
        for (std::size_t c = 0; c < n_chunks; ++c) out.sizes[g] += sizes[c * (n_groups + 1) + g];
        for (std::size_t j = 0; j < d; ++j) {
            std::uint64_t cnt = 0;
            for (std::size_t c = 0; c < n_chunks; ++c) {
                column[c] = sums[c * width + g * d + j];
                cnt += counts[c * width + g * d + j];
            }
            out.counts[g][j] = cnt;
            if (cnt > 0) out.means[g][j] = pairwise_sum(column) / static_cast<double>(cnt);
        }
    }
    for (std::size_t c = 0; c < n_chunks; ++c) out.n_missing_group += sizes[c * (n_groups + 1) + n_groups];
    return out;
}

// ---------------------------------------------------------------------------
// Hierarchical ordering

HierarchicalOrder hierarchical_order(const std::vector<std::vector<double>>& matrix, Axis axis) {
    const std::size_t rows = matrix.size();
    const std::size_t cols = rows == 0 ? 0 : matrix.front().size();
    for (const auto& r : matrix) {
        if (r.size() != cols) throw Error(ErrorCode::LengthMismatch, "ragged matrix", "matrix");
    }
    const std::size_t n = axis == Axis::Rows ? rows : cols;
    const std::size_t dim = axis == Axis::Rows ? cols : rows;
    auto at = [&](std::size_t item, std::size_t k) { return axis == Axis::Rows ? matrix[item][k] : matrix[k][item]; };

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            double s = 0.0;
            std::size_t used = 0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double x = at(a, k);
                const double y = at(b, k);
                if (std::isnan(x) || std::isnan(y)) continue;
                s += (x - y) * (x - y);
                ++used;
            }
            const double dd = used == 0 ? 0.0 : std::sqrt(s * static_cast<double>(dim) / static_cast<double>(used));
            dist[a * n + b] = dist[b * n + a] = dd;
        }
    }

    HierarchicalOrder out;
    // Slot i holds the cluster currently indexed by its lowest original slot.
    std::vector<std::vector<std::size_t>> leaves(n);
    std::vector<std::size_t> id(n);
    std::vector<std::size_t> size(n, 1);
    std::vector<char> active(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        leaves[i] = {i};
        id[i] = i;
    }
    for (std::size_t step = 0; step + 1 < n; ++step) {
        std::size_t bi = 0, bj = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (active[j] && dist[i * n + j] < best) {
                    best = dist[i * n + j];
                    bi = i;
                    bj = j;
                }
            }
        }
        out.merges.push_back({id[bi], id[bj], best, size[bi] + size[bj]});
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const double v = (static_cast<double>(size[bi]) * dist[bi * n + k] +
                              static_cast<double>(size[bj]) * dist[bj * n + k]) /
                             static_cast<double>(size[bi] + size[bj]);
            dist[bi * n + k] = dist[k * n + bi] = v;
        }
        leaves[bi].insert(leaves[bi].end(), leaves[bj].begin(), leaves[bj].end());
        leaves[bj].clear();
        size[bi] += size[bj];
        active[bj] = 0;
        id[bi] = n + step;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (active[i]) out.order = leaves[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Crosstab

Crosstab crosstab(const CellTable& table, const std::string& annotation_a, const std::string& annotation_b,
                  CrosstabNormalization normalize) {
    const auto& a = table.annotation(annotation_a);
    const auto& b = table.annotation(annotation_b);
    const std::size_t ra = a.categories().size();
    const std::size_t rb = b.categories().size();
    const std::size_t n = table.n_cells();
    const std::size_t width = ra * rb + 1;
    const std::size_t n_chunks = chunk_count(n, kGrain);
    std::vector<std::uint64_t> partial(n_chunks * width, 0);
    parallel_chunks(n, kGrain, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto* acc = partial.data() + chunk * width;
        for (std::size_t i = begin; i < end; ++i) {
            if (a.is_missing(i) || b.is_missing(i)) {
                ++acc[width - 1];
            } else {
                ++acc[a.code(i) * rb + b.code(i)];
            }
        }
    });
    std::vector<std::uint64_t> total(width, 0);
    for (std::size_t c = 0; c < n_chunks; ++c) {
        for (std::size_t k = 0; k < width; ++k) total[k] += partial[c * width + k];
    }

    Crosstab out;
    out.row_labels = a.categories();
    out.col_labels = b.categories();
    out.normalization = normalize;
    out.n_missing = total[width - 1];
    out.counts.assign(ra, std::vector<std::uint64_t>(rb, 0));
    out.values.assign(ra, std::vector<double>(rb, 0.0));
    std::uint64_t grand = 0;
    for (std::size_t k = 0; k + 1 < width; ++k) grand += total[k];
    for (std::size_t p = 0; p < ra; ++p) {
        std::uint64_t row_sum = 0;
        for (std::size_t q = 0; q < rb; ++q) row_sum += total[p * rb + q];
        for (std::size_t q = 0; q < rb; ++q) {
            const std::uint64_t c = total[p * rb + q];
            out.counts[p][q] = c;
            const double denom = normalize == CrosstabNormalization::Row     ? static_cast<double>(row_sum)
                                 : normalize == CrosstabNormalization::Total ? static_cast<double>(grand)
                                                                              : 1.0;
            out.values[p][q] = denom == 0.0 ? 0.0 : static_cast<double>(c) / denom;
            if (c > 0) out.flows.push_back({out.row_labels[p], out.col_labels[q], c});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scatter payloads

ScatterSample scatter_downsample(const CellTable& table, std::size_t max_points,
                                 const std::optional<std::string>& stratify_by, std::uint64_t seed,
                                 const std::vector<std::string>& annotations) {
    ScatterSample s;
    for (const auto& name : annotations) table.annotation(name);
    s.indices = downsample_indices(table, max_points, stratify_by, seed);
    s.x.reserve(s.indices.size());
    s.y.reserve(s.indices.size());
    for (auto i : s.indices) {
        s.x.push_back(table.coords()(i, 0));
        s.y.push_back(table.coords()(i, 1));
    }
    for (const auto& name : annotations) {
        const auto& col = table.annotation(name);
        std::vector<std::uint32_t> codes;
        codes.reserve(s.indices.size());
        for (auto i : s.indices) codes.push_back(col.code(i));
        s.codes.emplace_back(name, std::move(codes));
    }
    return s;
}

}  // namespace cellscape
