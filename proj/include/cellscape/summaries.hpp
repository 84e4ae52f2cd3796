#pragma once

#include "cellscape/cell_table.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cellscape {

// Values of one feature column or one annotation, optionally split by a
// grouping annotation. Cells with a missing group are excluded and counted.
struct HistogramParams {
    std::optional<std::string> feature;     // numeric source
    std::optional<std::string> annotation;  // categorical source (one bin per category)
    std::string layer{kFeaturesLayer};
    std::size_t n_bins = 50;
    std::vector<double> edges;  // explicit edges override n_bins
    std::optional<std::string> group_by;
};

struct HistogramGroup {
    std::optional<std::string> label;
    std::vector<std::uint64_t> counts;
    std::uint64_t n_nan = 0;           // NaN values, or missing codes for annotation sources
    std::uint64_t n_out_of_range = 0;  // outside explicit edges
};

struct Histogram {
    std::vector<double> edges;            // empty for annotation sources
    std::vector<std::string> categories;  // bin labels for annotation sources
    std::vector<HistogramGroup> groups;
    std::uint64_t n_missing_group = 0;
};

// Bins are half-open [e_i, e_{i+1}) except the last, which includes its
// upper edge. Auto edges split [min, max] uniformly; a constant column gets
// [v - 0.5, v + 0.5].
Histogram histogram(const CellTable& table, const HistogramParams& params);

struct BoxStats {
    std::optional<std::string> label;
    std::uint64_t n = 0;
    std::uint64_t n_nan = 0;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    double whisker_lo = 0.0, whisker_hi = 0.0;
    std::uint64_t n_outliers = 0;
};

// Box statistics of non-NaN values (consumes the vector).
BoxStats box_stats(std::vector<double> values);

struct BoxplotResult {
    std::string feature;
    std::vector<BoxStats> groups;
    std::uint64_t n_missing_group = 0;
};

// Linear-interpolation quartiles; whiskers reach the most extreme values
// within 1.5 IQR of the quartiles. Empty groups report NaN statistics.
BoxplotResult boxplot_stats(const CellTable& table, const std::string& feature, const std::string& layer,
                            const std::optional<std::string>& group_by);

struct GroupMeans {
    std::vector<std::string> groups;
    std::vector<std::string> features;
    std::vector<std::vector<double>> means;        // groups x features, NaN when no values
    std::vector<std::vector<std::uint64_t>> counts;  // non-NaN values behind each mean
    std::vector<std::uint64_t> sizes;              // cells per group
    std::uint64_t n_missing_group = 0;
};

// Without group_by every cell falls in a single group named "all".
GroupMeans group_means(const CellTable& table, const std::string& layer, const std::optional<std::string>& group_by);

enum class Axis { Rows, Columns };

struct Merge {
    std::size_t left = 0;   // cluster ids: leaves are 0..n-1, merge s creates n+s
    std::size_t right = 0;
    double distance = 0.0;
    std::size_t size = 0;
};

struct HierarchicalOrder {
    std::vector<std::size_t> order;  // dendrogram leaf order
    std::vector<Merge> merges;
};

// Average-linkage agglomerative clustering on euclidean distance. NaN
// entries are skipped and the distance rescaled to the full dimension.
HierarchicalOrder hierarchical_order(const std::vector<std::vector<double>>& matrix, Axis axis);

enum class CrosstabNormalization { None, Row, Total };

struct Flow {
    std::string source;
    std::string target;
    std::uint64_t value = 0;
};

struct Crosstab {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<std::uint64_t>> counts;
    std::vector<std::vector<double>> values;  // counts after normalization
    CrosstabNormalization normalization = CrosstabNormalization::None;
    std::vector<Flow> flows;  // non-zero cells, row-major
    std::uint64_t n_missing = 0;
};

Crosstab crosstab(const CellTable& table, const std::string& annotation_a, const std::string& annotation_b,
                  CrosstabNormalization normalize);

struct ScatterSample {
    std::vector<std::size_t> indices;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<std::pair<std::string, std::vector<std::uint32_t>>> codes;  // per requested annotation
};

ScatterSample scatter_downsample(const CellTable& table, std::size_t max_points,
                                 const std::optional<std::string>& stratify_by, std::uint64_t seed,
                                 const std::vector<std::string>& annotations);

}  // namespace cellscape
