#include "cellscape/ingest.hpp"

#include "cellscape/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>

namespace cellscape {

namespace fs = std::filesystem;

void ColumnMapping::validate() const {
    const bool has_xy = x_column.has_value() || y_column.has_value();
    if (has_xy == bbox_columns.has_value()) {
        throw Error(ErrorCode::InvalidArgument, "mapping needs exactly one of x/y columns or bbox columns",
                    "mapping");
    }
    if (has_xy && (!x_column || !y_column)) {
        throw Error(ErrorCode::InvalidArgument, "mapping must give both x and y columns", "mapping");
    }
    for (const auto& a : annotation_columns) {
        if (std::find(feature_columns.begin(), feature_columns.end(), a) != feature_columns.end()) {
            throw Error(ErrorCode::InvalidArgument, "column '" + a + "' is mapped as both feature and annotation", a);
        }
    }
}

ColumnMapping mapping_from_json(const Json& j) {
    ColumnMapping m;
    try {
        if (j.contains("x")) m.x_column = j.at("x").get<std::string>();
        if (j.contains("y")) m.y_column = j.at("y").get<std::string>();
        if (j.contains("bbox")) {
            const auto& b = j.at("bbox");
            m.bbox_columns = BoundingBoxColumns{b.at("xmin").get<std::string>(), b.at("xmax").get<std::string>(),
                                                b.at("ymin").get<std::string>(), b.at("ymax").get<std::string>()};
        }
        if (j.contains("features")) {
            const auto& f = j.at("features");
            if (f.is_array()) {
                m.feature_columns = f.get<std::vector<std::string>>();
            } else {
                m.feature_regex = f.at("regex").get<std::string>();
            }
        }
        if (j.contains("annotations")) m.annotation_columns = j.at("annotations").get<std::vector<std::string>>();
        if (j.contains("id")) m.id_column = j.at("id").get<std::string>();
        if (j.contains("slide_label")) m.slide_label = j.at("slide_label").get<std::string>();
        if (j.contains("slide_annotation")) m.slide_annotation = j.at("slide_annotation").get<std::string>();
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed column mapping: ") + e.what(), "mapping");
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// CSV

bool CsvReader::next_row(std::vector<std::string>& fields) {
    fields.clear();
    if (pos_ >= text_.size()) return false;
    ++line_;
    std::string field;
    bool quoted = false;
    while (pos_ < text_.size()) {
        const char c = text_[pos_];
        if (quoted) {
            if (c == '"') {
                if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '"') {
                    field.push_back('"');
                    pos_ += 2;
                    continue;
                }
                quoted = false;
                ++pos_;
                continue;
            }
            if (c == '\n') ++line_;
            field.push_back(c);
            ++pos_;
            continue;
        }
        if (c == '"') {
            quoted = true;
            ++pos_;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
            ++pos_;
        } else if (c == '\r' || c == '\n') {
            pos_ += (c == '\r' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\n') ? 2 : 1;
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(c);
            ++pos_;
        }
    }
    fields.push_back(std::move(field));
    return true;
}

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
    return value;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class HeaderIndex {
public:
    HeaderIndex(const std::vector<std::string>& header, bool case_insensitive)
        : header_(header), case_insensitive_(case_insensitive) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            index_.try_emplace(key(header[i]), i);
        }
    }

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = index_.find(key(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::string key(std::string_view s) const { return case_insensitive_ ? lower(s) : std::string(s); }

    const std::vector<std::string>& header_;
    bool case_insensitive_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace

Matrix<double> compute_centroids(std::span<const double> xmin, std::span<const double> xmax,
                                 std::span<const double> ymin, std::span<const double> ymax) {
    const std::size_t n = xmin.size();
    if (xmax.size() != n || ymin.size() != n || ymax.size() != n) {
        throw Error(ErrorCode::LengthMismatch, "bounding box columns differ in length", "bbox");
    }
    std::vector<double> out(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(xmax[i] >= xmin[i]) || !(ymax[i] >= ymin[i])) {
            throw Error(ErrorCode::InvertedBox, "inverted bounding box at row " + std::to_string(i), std::to_string(i));
        }
        out[2 * i] = (xmin[i] + xmax[i]) / 2.0;
        out[2 * i + 1] = (ymin[i] + ymax[i]) / 2.0;
    }
    return Matrix<double>(n, 2, std::move(out));
}

CellTable ingest_csv_text(std::string text, const ColumnMapping& mapping, const IngestOptions& options) {
    mapping.validate();
    CsvReader reader(std::move(text));
    std::vector<std::string> header;
    if (!reader.next_row(header) || (header.size() == 1 && header[0].empty())) {
        throw Error(ErrorCode::EmptyFile, "CSV has no header row");
    }
    // Tolerate a UTF-8 byte-order mark on the first header.
    if (header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    const HeaderIndex index(header, options.case_insensitive);

    std::vector<std::string> required;
    if (mapping.x_column) {
        required.push_back(*mapping.x_column);
        required.push_back(*mapping.y_column);
    } else {
        const auto& b = *mapping.bbox_columns;
        required.insert(required.end(), {b.xmin, b.xmax, b.ymin, b.ymax});
    }
    if (mapping.id_column) required.push_back(*mapping.id_column);

    std::vector<std::string> feature_names = mapping.feature_columns;
    if (feature_names.empty() && mapping.feature_regex) {
        std::regex re;
        try {
            re = std::regex(*mapping.feature_regex, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw Error(ErrorCode::InvalidArgument, std::string("bad feature regex: ") + e.what(), "features");
        }
        std::set<std::string> reserved(required.begin(), required.end());
        for (const auto& h : header) {
            if (reserved.contains(h)) continue;
            if (std::regex_search(h, re)) feature_names.push_back(h);
        }
        for (const auto& a : mapping.annotation_columns) {
            if (std::find(feature_names.begin(), feature_names.end(), a) != feature_names.end()) {
                throw Error(ErrorCode::InvalidArgument,
                            "column '" + a + "' matches the feature regex and is mapped as an annotation", a);
            }
        }
    }
    required.insert(required.end(), feature_names.begin(), feature_names.end());
    required.insert(required.end(), mapping.annotation_columns.begin(), mapping.annotation_columns.end());

    std::vector<std::string> missing;
    for (const auto& name : required) {
        if (!index.find(name)) missing.push_back(name);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ",") + m;
        throw Error(ErrorCode::MissingColumn, "missing columns: " + list, list);
    }
    auto col = [&](const std::string& name) { return *index.find(name); };

    std::vector<std::size_t> feature_cols;
    for (const auto& f : feature_names) feature_cols.push_back(col(f));
    std::vector<std::size_t> annotation_cols;
    for (const auto& a : mapping.annotation_columns) annotation_cols.push_back(col(a));
    std::vector<std::size_t> coord_cols;
    for (std::size_t k = 0; k < (mapping.x_column ? 2u : 4u); ++k) coord_cols.push_back(col(required[k]));

    std::vector<std::string> cell_ids;
    std::vector<float> features;
    std::vector<std::vector<double>> coord_values(coord_cols.size());
    std::vector<std::vector<std::string>> annotation_values(annotation_cols.size());
    std::vector<std::size_t> nan_counts(feature_cols.size(), 0);

    std::vector<std::string> row;
    std::size_t data_row = 0;
    while (reader.next_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;  // blank line
        if (row.size() != header.size()) {
            throw Error(ErrorCode::InvalidArgument,
                        "row " + std::to_string(data_row) + " (line " + std::to_string(reader.line()) + ") has " +
                            std::to_string(row.size()) + " fields, header has " + std::to_string(header.size()),
                        "csv");
        }
        for (std::size_t k = 0; k < coord_cols.size(); ++k) {
            auto v = parse_number<double>(row[coord_cols[k]]);
            if (!v || !std::isfinite(*v)) {
                throw Error(ErrorCode::InvalidArgument,
                            "non-numeric coordinate '" + row[coord_cols[k]] + "' at row " + std::to_string(data_row) +
                                ", column " + header[coord_cols[k]],
                            header[coord_cols[k]]);
            }
            coord_values[k].push_back(*v);
        }
        for (std::size_t k = 0; k < feature_cols.size(); ++k) {
            const std::string& cell = row[feature_cols[k]];
            if (trim(cell).empty()) {
                features.push_back(std::numeric_limits<float>::quiet_NaN());
                ++nan_counts[k];
                continue;
            }
            auto v = parse_number<float>(cell);
            if (!v) {
                throw Error(ErrorCode::NonNumericFeature,
                            "non-numeric feature value '" + cell + "' at row " + std::to_string(data_row) +
                                ", column " + header[feature_cols[k]],
                            header[feature_cols[k]]);
            }
            if (std::isnan(*v)) ++nan_counts[k];
            features.push_back(*v);
        }
        for (std::size_t k = 0; k < annotation_cols.size(); ++k) {
            annotation_values[k].push_back(row[annotation_cols[k]]);
        }
        cell_ids.push_back(mapping.id_column ? row[col(*mapping.id_column)] : std::to_string(data_row));
        ++data_row;
    }

    Matrix<double> coords;
    if (mapping.x_column) {
        std::vector<double> xy(data_row * 2);
        for (std::size_t i = 0; i < data_row; ++i) {
            xy[2 * i] = coord_values[0][i];
            xy[2 * i + 1] = coord_values[1][i];
        }
        coords = Matrix<double>(data_row, 2, std::move(xy));
    } else {
        coords = compute_centroids(coord_values[0], coord_values[1], coord_values[2], coord_values[3]);
    }

    const std::size_t n_features = feature_names.size();
    CellTable table = CellTable::create(std::move(cell_ids), std::move(coords),
                                        Matrix<float>(data_row, n_features, std::move(features)), feature_names);
    for (std::size_t k = 0; k < annotation_cols.size(); ++k) {
        table = table.with_annotation(mapping.annotation_columns[k],
                                      CategoricalColumn::from_values(annotation_values[k]));
    }
    if (mapping.slide_label) {
        if (table.annotations().contains(mapping.slide_annotation)) {
            throw Error(ErrorCode::DuplicateName,
                        "slide annotation '" + mapping.slide_annotation + "' collides with a mapped annotation",
                        mapping.slide_annotation);
        }
        std::vector<std::string> slide(table.n_cells(), *mapping.slide_label);
        table = table.with_annotation(mapping.slide_annotation, CategoricalColumn::from_values(slide))
                    .with_slide_label(mapping.slide_label);
    }

    std::vector<std::string> warnings;
    Json nan_report = Json::object();
    for (std::size_t k = 0; k < n_features; ++k) {
        if (nan_counts[k] > 0) {
            nan_report[feature_names[k]] = nan_counts[k];
            warnings.push_back(std::to_string(nan_counts[k]) + " NaN value(s) in feature '" + feature_names[k] + "'");
        }
    }
    Json params = {{"n_cells", table.n_cells()},
                   {"n_features", n_features},
                   {"features", feature_names},
                   {"annotations", mapping.annotation_columns},
                   {"centroids_from_bbox", mapping.bbox_columns.has_value()},
                   {"nan_counts", nan_report}};
    return table.with_record(make_record("ingest_csv", std::move(params), std::move(warnings)));
}

CellTable ingest_csv(const fs::path& path, const ColumnMapping& mapping, const IngestOptions& options) {
    auto table = ingest_csv_text(read_text(path), mapping, options);
    return table;
}

CellTable ingest_file(const fs::path& path, const ColumnMapping& mapping, const IngestOptions& options) {
    const auto ext = lower(path.extension().string());
    if (ext == ".parquet" || ext == ".pq") {
        throw Error(ErrorCode::UnsupportedFormat,
                    "Parquet input is not available in this build; convert to CSV first", path.string());
    }
    return ingest_csv(path, mapping, options);
}

namespace {

template <typename T>
std::string shortest(T v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

void export_csv(const CellTable& table, const fs::path& path, std::string_view layer) {
    const auto& m = table.layer(layer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing", path.string());
    out << "cell_id,x,y";
    for (const auto& f : table.feature_names()) out << ',' << csv_escape(f);
    for (const auto& [name, col] : table.annotations()) out << ',' << csv_escape(name);
    out << '\n';
    for (std::size_t i = 0; i < table.n_cells(); ++i) {
        out << csv_escape(table.cell_ids()[i]) << ',' << shortest(table.coords()(i, 0)) << ','
            << shortest(table.coords()(i, 1));
        for (std::size_t j = 0; j < table.n_features(); ++j) out << ',' << shortest(m(i, j));
        for (const auto& [name, col] : table.annotations()) {
            out << ',';
            if (!col.is_missing(i)) out << csv_escape(col.categories()[col.code(i)]);
        }
        out << '\n';
    }
    if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'", path.string());
}

// ---------------------------------------------------------------------------
// combine

CellTable combine_tables(std::span<const CellTable> tables, const std::string& slide_annotation_name) {
    if (tables.empty()) throw Error(ErrorCode::InvalidArgument, "combine_tables needs at least one table", "tables");
    const auto& names = tables.front().feature_names();
    for (const auto& t : tables) {
        if (t.feature_names() == names) continue;
        std::set<std::string> a(names.begin(), names.end());
        std::set<std::string> b(t.feature_names().begin(), t.feature_names().end());
        std::vector<std::string> diff;
        std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
        std::string list;
        for (const auto& d : diff) list += (list.empty() ? "" : ",") + d;
        throw Error(ErrorCode::FeatureSetMismatch,
                    diff.empty() ? "feature order differs between tables" : "feature sets differ: " + list, list);
    }

    std::vector<std::string> labels;
    std::set<std::string> seen_labels;
    for (std::size_t k = 0; k < tables.size(); ++k) {
        if (!tables[k].slide_label()) {
            throw Error(ErrorCode::InvalidArgument, "table " + std::to_string(k) + " has no slide label",
                        "slide_label");
        }
        const auto& label = *tables[k].slide_label();
        if (!seen_labels.insert(label).second) {
            throw Error(ErrorCode::DuplicateSlideLabel, "slide label '" + label + "' appears twice", label);
        }
        labels.push_back(label);
    }

    std::vector<std::string> warnings;
    auto in_all = [&](auto member, const std::string& name) {
        return std::all_of(tables.begin(), tables.end(), [&](const CellTable& t) { return (t.*member)().contains(name); });
    };

    std::size_t total = 0;
    for (const auto& t : tables) total += t.n_cells();

    std::vector<std::string> cell_ids;
    cell_ids.reserve(total);
    std::vector<double> coords;
    coords.reserve(total * 2);
    std::vector<float> features;
    features.reserve(total * names.size());
    std::vector<std::string> slide_values;
    slide_values.reserve(total);
    for (std::size_t k = 0; k < tables.size(); ++k) {
        const auto& t = tables[k];
        cell_ids.insert(cell_ids.end(), t.cell_ids().begin(), t.cell_ids().end());
        coords.insert(coords.end(), t.coords().values().begin(), t.coords().values().end());
        features.insert(features.end(), t.features().values().begin(), t.features().values().end());
        slide_values.insert(slide_values.end(), t.n_cells(), labels[k]);
    }
    CellTable out = CellTable::create(std::move(cell_ids), Matrix<double>(total, 2, std::move(coords)),
                                      Matrix<float>(total, names.size(), std::move(features)), names);

    std::set<std::string> all_layers;
    for (const auto& t : tables)
        for (const auto& [name, m] : t.layers()) all_layers.insert(name);
    for (const auto& name : all_layers) {
        if (!in_all(&CellTable::layers, name)) {
            warnings.push_back("layer '" + name + "' dropped: not present in every input");
            continue;
        }
        std::vector<float> values;
        values.reserve(total * names.size());
        for (const auto& t : tables) {
            const auto v = t.layers().at(name).values();
            values.insert(values.end(), v.begin(), v.end());
        }
        out = out.with_layer(name, Matrix<float>(total, names.size(), std::move(values)));
    }

    std::set<std::string> all_annotations;
    for (const auto& t : tables)
        for (const auto& [name, c] : t.annotations()) all_annotations.insert(name);
    for (const auto& name : all_annotations) {
        if (name == slide_annotation_name) continue;
        if (!in_all(&CellTable::annotations, name)) {
            warnings.push_back("annotation '" + name + "' dropped: not present in every input");
            continue;
        }
        // Merge category lists in first-appearance order across inputs.
        std::vector<std::string> categories;
        std::unordered_map<std::string, std::uint32_t> index;
        std::vector<std::uint32_t> codes;
        codes.reserve(total);
        for (const auto& t : tables) {
            const auto& col = t.annotations().at(name);
            std::vector<std::uint32_t> remap;
            for (const auto& c : col.categories()) {
                auto [it, inserted] = index.try_emplace(c, static_cast<std::uint32_t>(categories.size()));
                if (inserted) categories.push_back(c);
                remap.push_back(it->second);
            }
            for (auto code : col.codes()) {
                codes.push_back(code == CategoricalColumn::missing_code ? code : remap[code]);
            }
        }
        out = out.with_annotation(name, CategoricalColumn(std::move(codes), std::move(categories)));
    }

    std::set<std::string> all_associated;
    for (const auto& t : tables)
        for (const auto& [name, a] : t.associated()) all_associated.insert(name);
    for (const auto& name : all_associated) {
        const bool compatible = in_all(&CellTable::associated, name) &&
                                std::all_of(tables.begin(), tables.end(), [&](const CellTable& t) {
                                    return t.associated().at(name).column_labels ==
                                           tables.front().associated().at(name).column_labels;
                                });
        if (!compatible) {
            warnings.push_back("associated table '" + name + "' dropped: not present with identical columns in every input");
            continue;
        }
        const auto& labels0 = tables.front().associated().at(name).column_labels;
        std::vector<float> values;
        for (const auto& t : tables) {
            const auto v = t.associated().at(name).values.values();
            values.insert(values.end(), v.begin(), v.end());
        }
        out = out.with_associated(name, AssociatedTable{Matrix<float>(total, labels0.size(), std::move(values)), labels0});
    }

    out = out.with_annotation(slide_annotation_name, CategoricalColumn::from_values(slide_values));

    Json inputs = Json::array();
    for (std::size_t k = 0; k < tables.size(); ++k) {
        Json history = Json::array();
        for (const auto& r : tables[k].provenance()) history.push_back(r.operation);
        inputs.push_back({{"slide", labels[k]}, {"n_cells", tables[k].n_cells()}, {"history", std::move(history)}});
    }
    return out.with_record(make_record(
        "combine_tables", {{"slide_annotation", slide_annotation_name}, {"inputs", std::move(inputs)}},
        std::move(warnings)));
}

}  // namespace cellscape
