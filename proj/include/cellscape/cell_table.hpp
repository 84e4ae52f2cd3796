#pragma once

#include "cellscape/matrix.hpp"

#include "json.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cellscape {

using Json = nlohmann::json;

// Name under which the raw feature matrix is addressed wherever a layer name
// is expected.
inline constexpr std::string_view kFeaturesLayer = "features";

/// Dictionary-encoded categorical column. Category order is first appearance
/// and is never pruned when rows are subset, so colour assignments keyed on
/// category index stay stable across analyses.
class CategoricalColumn {
public:
    static constexpr std::uint32_t missing_code = std::numeric_limits<std::uint32_t>::max();

    CategoricalColumn() : codes_(std::make_shared<const std::vector<std::uint32_t>>()) {}
    CategoricalColumn(std::vector<std::uint32_t> codes, std::vector<std::string> categories);

    // Encodes values in first-appearance order. Empty strings are ordinary
    // categories; pass std::nullopt for missing.
    static CategoricalColumn from_values(std::span<const std::string> values);
    static CategoricalColumn from_optional_values(std::span<const std::optional<std::string>> values);

    std::size_t size() const noexcept { return codes_->size(); }
    std::span<const std::uint32_t> codes() const noexcept { return *codes_; }
    const std::vector<std::string>& categories() const noexcept { return categories_; }

    std::uint32_t code(std::size_t row) const { return (*codes_)[row]; }
    bool is_missing(std::size_t row) const { return code(row) == missing_code; }
    std::optional<std::uint32_t> find_category(std::string_view label) const;
    std::size_t count_missing() const;

    CategoricalColumn select_rows(std::span<const std::size_t> rows) const;

    bool operator==(const CategoricalColumn& other) const;

private:
    std::shared_ptr<const std::vector<std::uint32_t>> codes_;
    std::vector<std::string> categories_;
};

struct AssociatedTable {
    Matrix<float> values;
    std::vector<std::string> column_labels;
};

struct ProvenanceRecord {
    std::string operation;
    Json parameters = Json::object();
    std::string timestamp;
    std::vector<std::string> warnings;

    bool operator==(const ProvenanceRecord&) const = default;
};

ProvenanceRecord make_record(std::string operation, Json parameters,
                             std::vector<std::string> warnings = {});

// UTC ISO-8601 timestamp. Honours SOURCE_DATE_EPOCH so scripted pipelines
// produce byte-identical containers.
std::string current_timestamp();

/// Columnar store of segmented cells. Immutable: every operation returns a
/// new table, sharing untouched column buffers with its source.
class CellTable {
public:
    CellTable() = default;

    // Validates shapes, uniqueness of feature names, and finiteness of coords.
    static CellTable create(std::vector<std::string> cell_ids, Matrix<double> coords,
                            Matrix<float> features, std::vector<std::string> feature_names);

    std::size_t n_cells() const noexcept { return cell_ids_.size(); }
    std::size_t n_features() const noexcept { return feature_names_.size(); }

    const std::vector<std::string>& cell_ids() const noexcept { return cell_ids_; }
    const Matrix<double>& coords() const noexcept { return coords_; }
    const Matrix<float>& features() const noexcept { return features_; }
    const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
    const std::map<std::string, Matrix<float>>& layers() const noexcept { return layers_; }
    const std::map<std::string, CategoricalColumn>& annotations() const noexcept { return annotations_; }
    const std::map<std::string, AssociatedTable>& associated() const noexcept { return associated_; }
    const std::vector<ProvenanceRecord>& provenance() const noexcept { return provenance_; }
    const std::optional<std::string>& slide_label() const noexcept { return slide_label_; }

    // "features" resolves to the raw matrix; anything else must be a layer.
    const Matrix<float>& layer(std::string_view name) const;
    bool has_layer(std::string_view name) const;
    const CategoricalColumn& annotation(std::string_view name) const;
    std::size_t feature_index(std::string_view name) const;
    std::optional<std::size_t> find_feature(std::string_view name) const;

    // Structural builders. These do not touch provenance; public operations
    // pair them with exactly one with_record().
    CellTable with_layer(std::string name, Matrix<float> values) const;
    CellTable with_annotation(std::string name, CategoricalColumn column) const;
    CellTable with_associated(std::string name, AssociatedTable table) const;
    CellTable with_record(ProvenanceRecord record) const;
    CellTable with_slide_label(std::optional<std::string> label) const;
    CellTable without_annotation(std::string_view name) const;
    CellTable with_provenance(std::vector<ProvenanceRecord> records) const;

    // Row subset in the given order; all per-cell columns follow.
    CellTable select_rows(std::span<const std::size_t> rows) const;

private:
    std::vector<std::string> cell_ids_;
    Matrix<double> coords_;
    Matrix<float> features_;
    std::vector<std::string> feature_names_;
    std::map<std::string, Matrix<float>> layers_;
    std::map<std::string, CategoricalColumn> annotations_;
    std::map<std::string, AssociatedTable> associated_;
    std::vector<ProvenanceRecord> provenance_;
    std::optional<std::string> slide_label_;
};

// Field-by-field equality with bitwise float comparison.
bool tables_identical(const CellTable& a, const CellTable& b);

// ---------------------------------------------------------------------------
// Row filters

enum class CompareOp { Greater, GreaterEqual, Less, LessEqual, Equal };

struct AnnotationIn {
    std::string annotation;
    std::vector<std::string> values;
};

struct FeatureCompare {
    std::string feature;
    CompareOp op = CompareOp::Greater;
    double value = 0.0;
    std::string layer{kFeaturesLayer};
};

struct Predicate;

struct AllOf {
    std::vector<Predicate> terms;
};

struct AnyOf {
    std::vector<Predicate> terms;
};

struct Predicate {
    std::variant<AnnotationIn, FeatureCompare, AllOf, AnyOf> node;
};

// {"annotation": "phenotype", "in": ["T"]}
// {"feature": "CD3", "op": ">", "value": 0.5, "layer": "features"}
// {"and": [...]} / {"or": [...]}
Predicate predicate_from_json(const Json& j);

// Row indices (ascending) satisfying the predicate.
std::vector<std::size_t> matching_rows(const CellTable& table, const Predicate& predicate);

// ---------------------------------------------------------------------------
// Operations

CellTable add_annotation(const CellTable& table, const std::string& name,
                         std::span<const std::string> values);

CellTable select(const CellTable& table, const Predicate& predicate);

// Row indices chosen by downsample(), ascending.
std::vector<std::size_t> downsample_indices(const CellTable& table, std::size_t n,
                                            const std::optional<std::string>& stratify_by,
                                            std::uint64_t seed);

// Per-stratum quotas by largest remainder; ties go to the lower stratum.
std::vector<std::size_t> proportional_quotas(std::span<const std::size_t> counts, std::size_t n);

CellTable downsample(const CellTable& table, std::size_t n,
                     const std::optional<std::string>& stratify_by, std::uint64_t seed);

}  // namespace cellscape
