#pragma once

#include "cellscape/cell_table.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cellscape {

struct BoundingBoxColumns {
    std::string xmin, xmax, ymin, ymax;
};

/// Declarative mapping from CSV headers to table columns. Exactly one of the
/// x/y pair or the bounding-box columns must be set.
struct ColumnMapping {
    std::optional<std::string> x_column;
    std::optional<std::string> y_column;
    std::optional<BoundingBoxColumns> bbox_columns;
    std::vector<std::string> feature_columns;
    std::optional<std::string> feature_regex;  // used when feature_columns is empty
    std::vector<std::string> annotation_columns;
    std::optional<std::string> id_column;
    std::optional<std::string> slide_label;
    std::string slide_annotation = "slide";

    void validate() const;
};

// Schema:
// {
//   "x": "X", "y": "Y",                        -- or --
//   "bbox": {"xmin": "...", "xmax": "...", "ymin": "...", "ymax": "..."},
//   "features": ["CD3", "CD20"]  |  {"regex": "^CD\\d+"},
//   "annotations": ["Phenotype"],
//   "id": "CellID",
//   "slide_label": "s1",
//   "slide_annotation": "slide"
// }
ColumnMapping mapping_from_json(const Json& j);

struct IngestOptions {
    bool case_insensitive = false;
};

// RFC 4180 reader over an in-memory buffer: quoted fields, doubled quotes,
// embedded separators and line breaks, CRLF or LF terminators.
class CsvReader {
public:
    explicit CsvReader(std::string text) : text_(std::move(text)) {}

    bool next_row(std::vector<std::string>& fields);
    std::size_t line() const noexcept { return line_; }

private:
    std::string text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

std::string csv_escape(std::string_view field);

Matrix<double> compute_centroids(std::span<const double> xmin, std::span<const double> xmax,
                                 std::span<const double> ymin, std::span<const double> ymax);

CellTable ingest_csv_text(std::string text, const ColumnMapping& mapping, const IngestOptions& options = {});
CellTable ingest_csv(const std::filesystem::path& path, const ColumnMapping& mapping,
                     const IngestOptions& options = {});

// Dispatches on extension. Parquet input is rejected with UnsupportedFormat.
CellTable ingest_file(const std::filesystem::path& path, const ColumnMapping& mapping,
                      const IngestOptions& options = {});

// Writes cell_id, x, y, every feature of `layer`, then every annotation.
// Floats use shortest round-trip formatting, so re-ingesting is lossless.
void export_csv(const CellTable& table, const std::filesystem::path& path,
                std::string_view layer = kFeaturesLayer);

CellTable combine_tables(std::span<const CellTable> tables, const std::string& slide_annotation_name);

}  // namespace cellscape
