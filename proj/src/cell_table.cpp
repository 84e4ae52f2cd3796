#include "cellscape/cell_table.hpp"

#include "cellscape/error.hpp"
#include "cellscape/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <numeric>
#include <set>
#include <unordered_map>

namespace cellscape {

// ---------------------------------------------------------------------------
// CategoricalColumn

CategoricalColumn::CategoricalColumn(std::vector<std::uint32_t> codes, std::vector<std::string> categories)
    : codes_(std::make_shared<const std::vector<std::uint32_t>>(std::move(codes))),
      categories_(std::move(categories)) {
    std::set<std::string_view> seen;
    for (const auto& c : categories_) {
        if (!seen.insert(c).second) {
            throw Error(ErrorCode::DuplicateName, "duplicate category '" + c + "'");
        }
    }
    for (std::uint32_t code : *codes_) {
        if (code != missing_code && code >= categories_.size()) {
            throw Error(ErrorCode::InvalidArgument, "category code out of range");
        }
    }
}

CategoricalColumn CategoricalColumn::from_values(std::span<const std::string> values) {
    std::vector<std::uint32_t> codes;
    codes.reserve(values.size());
    std::vector<std::string> categories;
    std::unordered_map<std::string, std::uint32_t> index;
    for (const auto& v : values) {
        auto [it, inserted] = index.try_emplace(v, static_cast<std::uint32_t>(categories.size()));
        if (inserted) categories.push_back(v);
        codes.push_back(it->second);
    }
    return CategoricalColumn(std::move(codes), std::move(categories));
}

CategoricalColumn CategoricalColumn::from_optional_values(std::span<const std::optional<std::string>> values) {
    std::vector<std::uint32_t> codes;
    codes.reserve(values.size());
    std::vector<std::string> categories;
    std::unordered_map<std::string, std::uint32_t> index;
    for (const auto& v : values) {
        if (!v) {
            codes.push_back(missing_code);
            continue;
        }
        auto [it, inserted] = index.try_emplace(*v, static_cast<std::uint32_t>(categories.size()));
        if (inserted) categories.push_back(*v);
        codes.push_back(it->second);
    }
    return CategoricalColumn(std::move(codes), std::move(categories));
}

std::optional<std::uint32_t> CategoricalColumn::find_category(std::string_view label) const {
    for (std::size_t i = 0; i < categories_.size(); ++i) {
        if (categories_[i] == label) return static_cast<std::uint32_t>(i);
    }
    return std::nullopt;
}

std::size_t CategoricalColumn::count_missing() const {
    return static_cast<std::size_t>(std::count(codes_->begin(), codes_->end(), missing_code));
}

CategoricalColumn CategoricalColumn::select_rows(std::span<const std::size_t> rows) const {
    std::vector<std::uint32_t> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back((*codes_)[r]);
    CategoricalColumn result;
    result.codes_ = std::make_shared<const std::vector<std::uint32_t>>(std::move(out));
    result.categories_ = categories_;
    return result;
}

bool CategoricalColumn::operator==(const CategoricalColumn& other) const {
    return categories_ == other.categories_ && *codes_ == *other.codes_;
}

// ---------------------------------------------------------------------------
// Provenance

std::string current_timestamp() {
    std::time_t t = 0;
    const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
    bool fixed = false;
    if (epoch != nullptr && *epoch != '\0') {
        char* end = nullptr;
        const long long v = std::strtoll(epoch, &end, 10);
        if (end != epoch && *end == '\0') {
            t = static_cast<std::time_t>(v);
            fixed = true;
        }
    }
    if (!fixed) t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ProvenanceRecord make_record(std::string operation, Json parameters, std::vector<std::string> warnings) {
    return ProvenanceRecord{std::move(operation), std::move(parameters), current_timestamp(), std::move(warnings)};
}

// ---------------------------------------------------------------------------
// CellTable

CellTable CellTable::create(std::vector<std::string> cell_ids, Matrix<double> coords, Matrix<float> features,
                            std::vector<std::string> feature_names) {
    const std::size_t n = cell_ids.size();
    if (coords.rows() != n || coords.cols() != 2) {
        throw Error(ErrorCode::LengthMismatch, "coords must be n_cells x 2", "coords");
    }
    if (features.rows() != n || features.cols() != feature_names.size()) {
        throw Error(ErrorCode::LengthMismatch, "features must be n_cells x n_features", "features");
    }
    std::set<std::string_view> seen;
    for (const auto& name : feature_names) {
        if (!seen.insert(name).second) {
            throw Error(ErrorCode::DuplicateName, "duplicate feature name '" + name + "'", name);
        }
    }
    for (double v : coords.values()) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "coordinates must be finite", "coords");
    }
    CellTable t;
    t.cell_ids_ = std::move(cell_ids);
    t.coords_ = std::move(coords);
    t.features_ = std::move(features);
    t.feature_names_ = std::move(feature_names);
    return t;
}

const Matrix<float>& CellTable::layer(std::string_view name) const {
    if (name == kFeaturesLayer) return features_;
    auto it = layers_.find(std::string(name));
    if (it == layers_.end()) {
        throw Error(ErrorCode::UnknownLayer, "unknown layer '" + std::string(name) + "'", std::string(name));
    }
    return it->second;
}

bool CellTable::has_layer(std::string_view name) const {
    return name == kFeaturesLayer || layers_.contains(std::string(name));
}

const CategoricalColumn& CellTable::annotation(std::string_view name) const {
    auto it = annotations_.find(std::string(name));
    if (it == annotations_.end()) {
        throw Error(ErrorCode::UnknownAnnotation, "unknown annotation '" + std::string(name) + "'",
                    std::string(name));
    }
    return it->second;
}

std::optional<std::size_t> CellTable::find_feature(std::string_view name) const {
    for (std::size_t j = 0; j < feature_names_.size(); ++j) {
        if (feature_names_[j] == name) return j;
    }
    return std::nullopt;
}

std::size_t CellTable::feature_index(std::string_view name) const {
    if (auto j = find_feature(name)) return *j;
    throw Error(ErrorCode::UnknownColumn, "unknown feature '" + std::string(name) + "'", std::string(name));
}

CellTable CellTable::with_layer(std::string name, Matrix<float> values) const {
    if (name == kFeaturesLayer) {
        throw Error(ErrorCode::DuplicateName, "layer name 'features' is reserved", name);
    }
    if (!values.same_shape(features_)) {
        throw Error(ErrorCode::LengthMismatch, "layer '" + name + "' must match the feature matrix shape", name);
    }
    CellTable t = *this;
    t.layers_.insert_or_assign(std::move(name), std::move(values));
    return t;
}

CellTable CellTable::with_annotation(std::string name, CategoricalColumn column) const {
    if (column.size() != n_cells()) {
        throw Error(ErrorCode::LengthMismatch, "annotation '" + name + "' has wrong length", name);
    }
    if (annotations_.contains(name)) {
        throw Error(ErrorCode::DuplicateName, "annotation '" + name + "' already exists", name);
    }
    CellTable t = *this;
    t.annotations_.emplace(std::move(name), std::move(column));
    return t;
}

CellTable CellTable::with_associated(std::string name, AssociatedTable table) const {
    if (table.values.rows() != n_cells() || table.values.cols() != table.column_labels.size()) {
        throw Error(ErrorCode::LengthMismatch, "associated table '" + name + "' has wrong shape", name);
    }
    CellTable t = *this;
    t.associated_.insert_or_assign(std::move(name), std::move(table));
    return t;
}

CellTable CellTable::with_record(ProvenanceRecord record) const {
    CellTable t = *this;
    t.provenance_.push_back(std::move(record));
    return t;
}

CellTable CellTable::with_slide_label(std::optional<std::string> label) const {
    CellTable t = *this;
    t.slide_label_ = std::move(label);
    return t;
}

CellTable CellTable::without_annotation(std::string_view name) const {
    CellTable t = *this;
    t.annotations_.erase(std::string(name));
    return t;
}

CellTable CellTable::with_provenance(std::vector<ProvenanceRecord> records) const {
    CellTable t = *this;
    t.provenance_ = std::move(records);
    return t;
}

CellTable CellTable::select_rows(std::span<const std::size_t> rows) const {
    CellTable t;
    t.cell_ids_.reserve(rows.size());
    for (std::size_t r : rows) t.cell_ids_.push_back(cell_ids_[r]);
    t.coords_ = coords_.select_rows(rows);
    t.features_ = features_.select_rows(rows);
    t.feature_names_ = feature_names_;
    for (const auto& [name, m] : layers_) t.layers_.emplace(name, m.select_rows(rows));
    for (const auto& [name, c] : annotations_) t.annotations_.emplace(name, c.select_rows(rows));
    for (const auto& [name, a] : associated_) {
        t.associated_.emplace(name, AssociatedTable{a.values.select_rows(rows), a.column_labels});
    }
    t.provenance_ = provenance_;
    t.slide_label_ = slide_label_;
    return t;
}

bool tables_identical(const CellTable& a, const CellTable& b) {
    if (a.cell_ids() != b.cell_ids() || a.feature_names() != b.feature_names()) return false;
    if (!a.coords().bit_equal(b.coords()) || !a.features().bit_equal(b.features())) return false;
    if (a.layers().size() != b.layers().size()) return false;
    for (const auto& [name, m] : a.layers()) {
        auto it = b.layers().find(name);
        if (it == b.layers().end() || !m.bit_equal(it->second)) return false;
    }
    if (a.annotations() != b.annotations()) return false;
    if (a.associated().size() != b.associated().size()) return false;
    for (const auto& [name, t] : a.associated()) {
        auto it = b.associated().find(name);
        if (it == b.associated().end() || !t.values.bit_equal(it->second.values) ||
            t.column_labels != it->second.column_labels) {
            return false;
        }
    }
    return a.provenance() == b.provenance() && a.slide_label() == b.slide_label();
}

// ---------------------------------------------------------------------------
// Predicates

namespace {

CompareOp parse_op(const std::string& op) {
    if (op == ">") return CompareOp::Greater;
    if (op == ">=") return CompareOp::GreaterEqual;
    if (op == "<") return CompareOp::Less;
    if (op == "<=") return CompareOp::LessEqual;
    if (op == "==") return CompareOp::Equal;
    throw Error(ErrorCode::InvalidArgument, "unknown comparison operator '" + op + "'", "op");
}

bool compare(double v, CompareOp op, double ref) {
    switch (op) {
        case CompareOp::Greater: return v > ref;
        case CompareOp::GreaterEqual: return v >= ref;
        case CompareOp::Less: return v < ref;
        case CompareOp::LessEqual: return v <= ref;
        case CompareOp::Equal: return v == ref;
    }
    return false;
}

// Evaluates into a row mask. Unknown columns surface before any row work.
std::vector<char> evaluate(const CellTable& table, const Predicate& p) {
    const std::size_t n = table.n_cells();
    return std::visit(
        [&](const auto& node) -> std::vector<char> {
            using T = std::decay_t<decltype(node)>;
            std::vector<char> mask(n, 0);
            if constexpr (std::is_same_v<T, AnnotationIn>) {
                auto it = table.annotations().find(node.annotation);
                if (it == table.annotations().end()) {
                    throw Error(ErrorCode::UnknownColumn, "unknown annotation '" + node.annotation + "'",
                                node.annotation);
                }
                const auto& col = it->second;
                std::vector<char> wanted(col.categories().size(), 0);
                for (const auto& v : node.values) {
                    if (auto code = col.find_category(v)) wanted[*code] = 1;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const auto code = col.code(i);
                    mask[i] = code != CategoricalColumn::missing_code && wanted[code];
                }
            } else if constexpr (std::is_same_v<T, FeatureCompare>) {
                auto j = table.find_feature(node.feature);
                if (!j) throw Error(ErrorCode::UnknownColumn, "unknown feature '" + node.feature + "'", node.feature);
                if (!table.has_layer(node.layer)) {
                    throw Error(ErrorCode::UnknownColumn, "unknown layer '" + node.layer + "'", node.layer);
                }
                const auto& m = table.layer(node.layer);
                for (std::size_t i = 0; i < n; ++i) mask[i] = compare(m(i, *j), node.op, node.value);
            } else if constexpr (std::is_same_v<T, AllOf>) {
                std::fill(mask.begin(), mask.end(), 1);
                for (const auto& term : node.terms) {
                    auto sub = evaluate(table, term);
                    for (std::size_t i = 0; i < n; ++i) mask[i] = mask[i] && sub[i];
                }
            } else {
                for (const auto& term : node.terms) {
                    auto sub = evaluate(table, term);
                    for (std::size_t i = 0; i < n; ++i) mask[i] = mask[i] || sub[i];
                }
            }
            return mask;
        },
        p.node);
}

}  // namespace

Predicate predicate_from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "filter must be a JSON object", "filter");
    if (j.contains("and") || j.contains("or")) {
        const bool is_and = j.contains("and");
        const Json& terms = is_and ? j.at("and") : j.at("or");
        if (!terms.is_array()) throw Error(ErrorCode::InvalidArgument, "and/or expects an array", "filter");
        std::vector<Predicate> out;
        for (const auto& t : terms) out.push_back(predicate_from_json(t));
        if (is_and) return Predicate{AllOf{std::move(out)}};
        return Predicate{AnyOf{std::move(out)}};
    }
    if (j.contains("annotation")) {
        AnnotationIn a;
        a.annotation = j.at("annotation").get<std::string>();
        const Json& values = j.contains("in") ? j.at("in") : j.at("equals");
        if (values.is_array()) {
            a.values = values.get<std::vector<std::string>>();
        } else {
            a.values.push_back(values.get<std::string>());
        }
        return Predicate{std::move(a)};
    }
    if (j.contains("feature")) {
        FeatureCompare f;
        f.feature = j.at("feature").get<std::string>();
        f.op = parse_op(j.value("op", std::string(">")));
        f.value = j.at("value").get<double>();
        f.layer = j.value("layer", std::string(kFeaturesLayer));
        return Predicate{std::move(f)};
    }
    throw Error(ErrorCode::InvalidArgument, "filter node needs annotation, feature, and, or or", "filter");
}

std::vector<std::size_t> matching_rows(const CellTable& table, const Predicate& predicate) {
    const auto mask = evaluate(table, predicate);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) rows.push_back(i);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Operations

CellTable add_annotation(const CellTable& table, const std::string& name, std::span<const std::string> values) {
    if (table.annotations().contains(name)) {
        throw Error(ErrorCode::DuplicateName, "annotation '" + name + "' already exists", name);
    }
    if (values.size() != table.n_cells()) {
        throw Error(ErrorCode::LengthMismatch,
                    "annotation '" + name + "' has " + std::to_string(values.size()) + " values for " +
                        std::to_string(table.n_cells()) + " cells",
                    name);
    }
    auto column = CategoricalColumn::from_values(values);
    const auto n_categories = column.categories().size();
    return table.with_annotation(name, std::move(column))
        .with_record(make_record("add_annotation", {{"name", name}, {"n_categories", n_categories}}));
}

CellTable select(const CellTable& table, const Predicate& predicate) {
    const auto rows = matching_rows(table, predicate);
    return table.select_rows(rows).with_record(
        make_record("select", {{"n_selected", rows.size()}, {"n_input", table.n_cells()}}));
}

std::vector<std::size_t> proportional_quotas(std::span<const std::size_t> counts, std::size_t n) {
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    std::vector<std::size_t> quotas(counts.size(), 0);
    if (total == 0 || n == 0) return quotas;
    n = std::min(n, total);
    std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder, stratum)
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
        const unsigned __int128 scaled = static_cast<unsigned __int128>(n) * counts[s];
        quotas[s] = static_cast<std::size_t>(scaled / total);
        remainders.emplace_back(static_cast<std::size_t>(scaled % total), s);
        assigned += quotas[s];
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n && r < remainders.size(); ++r) {
        const std::size_t s = remainders[r].second;
        if (quotas[s] < counts[s]) {
            ++quotas[s];
            ++assigned;
        }
    }
    return quotas;
}

namespace {

// k distinct elements of pool chosen by a partial Fisher-Yates shuffle.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                    std::uint64_t seed) {
    Rng rng(seed);
    k = std::min(k, pool.size());
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace

std::vector<std::size_t> downsample_indices(const CellTable& table, std::size_t n,
                                            const std::optional<std::string>& stratify_by, std::uint64_t seed) {
    const std::size_t total = table.n_cells();
    if (stratify_by) (void)table.annotation(*stratify_by);
    if (n >= total) {
        std::vector<std::size_t> all(total);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    std::vector<std::size_t> chosen;
    if (!stratify_by) {
        std::vector<std::size_t> pool(total);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        chosen = sample_without_replacement(std::move(pool), n, seed);
    } else {
        const auto& col = table.annotation(*stratify_by);
        // Missing-coded cells form their own trailing stratum.
        const std::size_t n_strata = col.categories().size() + 1;
        std::vector<std::vector<std::size_t>> members(n_strata);
        for (std::size_t i = 0; i < total; ++i) {
            const auto code = col.code(i);
            members[code == CategoricalColumn::missing_code ? n_strata - 1 : code].push_back(i);
        }
        std::vector<std::size_t> counts(n_strata);
        for (std::size_t s = 0; s < n_strata; ++s) counts[s] = members[s].size();
        const auto quotas = proportional_quotas(counts, n);
        for (std::size_t s = 0; s < n_strata; ++s) {
            auto part = sample_without_replacement(std::move(members[s]), quotas[s], derive_seed(seed, s));
            chosen.insert(chosen.end(), part.begin(), part.end());
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

CellTable downsample(const CellTable& table, std::size_t n, const std::optional<std::string>& stratify_by,
                     std::uint64_t seed) {
    const auto rows = downsample_indices(table, n, stratify_by, seed);
    Json params = {{"n", n}, {"seed", seed}, {"n_selected", rows.size()}};
    params["stratify_by"] = stratify_by ? Json(*stratify_by) : Json(nullptr);
    return table.select_rows(rows).with_record(make_record("downsample", std::move(params)));
}

}  // namespace cellscape
