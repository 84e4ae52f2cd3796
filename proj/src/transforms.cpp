#include "cellscape/transforms.hpp"

#include "cellscape/error.hpp"
#include "cellscape/parallel.hpp"
#include "cellscape/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

namespace cellscape {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

struct ColumnResult {
    std::vector<float> values;
    std::optional<std::string> warning;
};

using ColumnFn = std::function<ColumnResult(std::size_t feature, const std::vector<float>& column)>;

// Applies fn to every feature column of the source layer in parallel and
// reassembles a row-major matrix. Warnings are gathered in feature order.
Matrix<float> map_columns(const Matrix<float>& source, const ColumnFn& fn, std::vector<std::string>& warnings) {
    const std::size_t n = source.rows();
    const std::size_t f = source.cols();
    std::vector<ColumnResult> results(f);
    parallel_for(f, [&](std::size_t j) { results[j] = fn(j, source.column(j)); });
    std::vector<float> out(n * f);
    for (std::size_t j = 0; j < f; ++j) {
        for (std::size_t i = 0; i < n; ++i) out[i * f + j] = results[j].values[i];
        if (results[j].warning) warnings.push_back(*results[j].warning);
    }
    return Matrix<float>(n, f, std::move(out));
}

struct Moments {
    std::size_t count = 0;
    double mean = 0.0;
    double sd = 0.0;
};

// Two-pass population moments over the non-NaN entries of the given rows.
Moments moments(const std::vector<float>& column, std::span<const std::size_t> rows) {
    Moments m;
    double sum = 0.0;
    for (std::size_t r : rows) {
        if (!std::isnan(column[r])) {
            sum += column[r];
            ++m.count;
        }
    }
    if (m.count == 0) return m;
    m.mean = sum / static_cast<double>(m.count);
    double ss = 0.0;
    for (std::size_t r : rows) {
        if (!std::isnan(column[r])) {
            const double d = column[r] - m.mean;
            ss += d * d;
        }
    }
    m.sd = std::sqrt(ss / static_cast<double>(m.count));
    return m;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

void require_new_layer(const CellTable& table, const std::string& out_layer) {
    if (out_layer.empty()) throw Error(ErrorCode::InvalidArgument, "output layer name is empty", "out_layer");
    if (out_layer == kFeaturesLayer) {
        throw Error(ErrorCode::DuplicateName, "cannot overwrite the raw feature matrix", "out_layer");
    }
    (void)table;
}

// z-scores rows of one column in place within `out`. Returns true when the
// rows had zero spread.
bool zscore_rows(const std::vector<float>& column, std::span<const std::size_t> rows, std::vector<float>& out,
                 const std::string& feature, const std::string& scope) {
    const Moments m = moments(column, rows);
    if (m.count < 2) {
        throw Error(ErrorCode::TooFewValues,
                    "feature '" + feature + "'" + scope + " has fewer than 2 non-NaN values", feature);
    }
    const bool constant = m.sd == 0.0;
    for (std::size_t r : rows) {
        const float v = column[r];
        if (std::isnan(v)) {
            out[r] = kNaN;
        } else {
            out[r] = constant ? 0.0f : static_cast<float>((v - m.mean) / m.sd);
        }
    }
    return constant;
}

std::vector<float> sorted_finite(const std::vector<float>& column, std::span<const std::size_t> rows) {
    std::vector<float> v;
    v.reserve(rows.size());
    for (std::size_t r : rows) {
        if (!std::isnan(column[r])) v.push_back(column[r]);
    }
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

CellTable arcsinh(const CellTable& table, std::string_view source_layer, double cofactor, const std::string& out_layer) {
    if (!(cofactor > 0.0)) {
        throw Error(ErrorCode::NonPositiveCofactor, "cofactor must be > 0", "cofactor");
    }
    const auto& source = table.layer(source_layer);
    require_new_layer(table, out_layer);
    const auto in = source.values();
    std::vector<float> out(in.size());
    parallel_chunks(in.size(), 1 << 16, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            out[i] = static_cast<float>(std::asinh(static_cast<double>(in[i]) / cofactor));
        }
    });
    return table.with_layer(out_layer, Matrix<float>(source.rows(), source.cols(), std::move(out)))
        .with_record(make_record("arcsinh",
                                 {{"source_layer", source_layer}, {"cofactor", cofactor}, {"out_layer", out_layer}}));
}

CellTable zscore(const CellTable& table, std::string_view source_layer, const std::string& out_layer) {
    const auto& source = table.layer(source_layer);
    require_new_layer(table, out_layer);
    const auto rows = all_rows(source.rows());
    std::vector<std::string> warnings;
    auto result = map_columns(
        source,
        [&](std::size_t j, const std::vector<float>& column) {
            ColumnResult r{std::vector<float>(column.size()), std::nullopt};
            const auto& name = table.feature_names()[j];
            if (zscore_rows(column, rows, r.values, name, "")) {
                r.warning = "feature '" + name + "' is constant; z-scores set to 0";
            }
            return r;
        },
        warnings);
    return table.with_layer(out_layer, std::move(result))
        .with_record(make_record("zscore", {{"source_layer", source_layer}, {"out_layer", out_layer}},
                                 std::move(warnings)));
}

CellTable quantile_rescale(const CellTable& table, std::string_view source_layer, double q_low, double q_high,
                           const std::string& out_layer) {
    if (!(q_low >= 0.0 && q_low < q_high && q_high <= 1.0)) {
        throw Error(ErrorCode::InvalidQuantileRange, "need 0 <= q_low < q_high <= 1", "q_low");
    }
    const auto& source = table.layer(source_layer);
    require_new_layer(table, out_layer);
    const auto rows = all_rows(source.rows());
    std::vector<std::string> warnings;
    auto result = map_columns(
        source,
        [&](std::size_t j, const std::vector<float>& column) {
            ColumnResult r{std::vector<float>(column.size()), std::nullopt};
            const auto& name = table.feature_names()[j];
            const auto sorted = sorted_finite(column, rows);
            if (sorted.empty()) {
                std::fill(r.values.begin(), r.values.end(), kNaN);
                r.warning = "feature '" + name + "' has no finite values";
                return r;
            }
            const double lo = quantile_sorted<float>(sorted, q_low);
            const double hi = quantile_sorted<float>(sorted, q_high);
            const bool constant = !(hi > lo);
            for (std::size_t i = 0; i < column.size(); ++i) {
                const float v = column[i];
                if (std::isnan(v)) {
                    r.values[i] = kNaN;
                } else if (constant) {
                    r.values[i] = 0.0f;
                } else {
                    const double clipped = std::clamp(static_cast<double>(v), lo, hi);
                    r.values[i] = static_cast<float>((clipped - lo) / (hi - lo));
                }
            }
            if (constant) r.warning = "feature '" + name + "' has equal quantile bounds; output set to 0";
            return r;
        },
        warnings);
    return table.with_layer(out_layer, std::move(result))
        .with_record(make_record(
            "quantile_rescale",
            {{"source_layer", source_layer}, {"q_low", q_low}, {"q_high", q_high}, {"out_layer", out_layer}},
            std::move(warnings)));
}

CellTable rescale(const CellTable& table, std::string_view source_layer, const std::string& out_layer) {
    return quantile_rescale(table, source_layer, 0.0, 1.0, out_layer);
}

BatchMethod parse_batch_method(std::string_view name) {
    if (name == "zscore") return BatchMethod::ZScore;
    if (name == "median" || name == "median-center") return BatchMethod::MedianCenter;
    throw Error(ErrorCode::InvalidArgument, "unknown batch method '" + std::string(name) + "'", "method");
}

CellTable batch_normalize(const CellTable& table, std::string_view source_layer, const std::string& batch_annotation,
                          BatchMethod method, const std::string& out_layer) {
    const auto& source = table.layer(source_layer);
    const auto& batches = table.annotation(batch_annotation);
    require_new_layer(table, out_layer);

    std::vector<std::vector<std::size_t>> members(batches.categories().size());
    std::size_t missing = 0;
    for (std::size_t i = 0; i < table.n_cells(); ++i) {
        if (batches.is_missing(i)) {
            ++missing;
        } else {
            members[batches.code(i)].push_back(i);
        }
    }
    if (method == BatchMethod::ZScore) {
        for (std::size_t b = 0; b < members.size(); ++b) {
            if (!members[b].empty() && members[b].size() < 2) {
                throw Error(ErrorCode::BatchTooSmall,
                            "batch '" + batches.categories()[b] + "' has fewer than 2 cells", batches.categories()[b]);
            }
        }
    }

    std::vector<std::string> warnings;
    if (missing > 0) warnings.push_back(std::to_string(missing) + " cell(s) without a batch label set to NaN");
    auto result = map_columns(
        source,
        [&](std::size_t j, const std::vector<float>& column) {
            ColumnResult r{std::vector<float>(column.size(), kNaN), std::nullopt};
            const auto& name = table.feature_names()[j];
            std::vector<std::string> constant_batches;
            for (std::size_t b = 0; b < members.size(); ++b) {
                if (members[b].empty()) continue;
                if (method == BatchMethod::ZScore) {
                    if (zscore_rows(column, members[b], r.values, name, " in batch '" + batches.categories()[b] + "'")) {
                        constant_batches.push_back(batches.categories()[b]);
                    }
                } else {
                    const auto sorted = sorted_finite(column, members[b]);
                    const double median = quantile_sorted<float>(sorted, 0.5);
                    for (std::size_t row : members[b]) {
                        r.values[row] = static_cast<float>(static_cast<double>(column[row]) - median);
                    }
                }
            }
            if (!constant_batches.empty()) {
                std::string list;
                for (const auto& c : constant_batches) list += (list.empty() ? "" : ",") + c;
                r.warning = "feature '" + name + "' is constant in batch(es) " + list + "; z-scores set to 0";
            }
            return r;
        },
        warnings);
    return table.with_layer(out_layer, std::move(result))
        .with_record(make_record("batch_normalize",
                                 {{"source_layer", source_layer},
                                  {"batch_annotation", batch_annotation},
                                  {"method", method == BatchMethod::ZScore ? "zscore" : "median-center"},
                                  {"out_layer", out_layer}},
                                 std::move(warnings)));
}

CellTable threshold_features(const CellTable& table, std::string_view layer, const ThresholdSet& thresholds,
                             const std::string& out_layer) {
    const auto& source = table.layer(layer);
    require_new_layer(table, out_layer);
    const std::size_t f = table.n_features();
    std::vector<std::optional<double>> per_feature(f);
    for (const auto& [marker, value] : thresholds) {
        auto j = table.find_feature(marker);
        if (!j) throw Error(ErrorCode::UnknownMarker, "threshold for unknown marker '" + marker + "'", marker);
        per_feature[*j] = value;
    }
    std::vector<std::size_t> nan_counts(f, 0);
    std::vector<float> out(source.size());
    for (std::size_t i = 0; i < source.rows(); ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            const float v = source(i, j);
            if (!per_feature[j]) {
                out[i * f + j] = kNaN;
            } else if (std::isnan(v)) {
                out[i * f + j] = 0.0f;
                ++nan_counts[j];
            } else {
                out[i * f + j] = static_cast<double>(v) > *per_feature[j] ? 1.0f : 0.0f;
            }
        }
    }
    std::vector<std::string> warnings;
    Json nan_report = Json::object();
    Json used = Json::object();
    for (std::size_t j = 0; j < f; ++j) {
        const auto& name = table.feature_names()[j];
        if (per_feature[j]) used[name] = *per_feature[j];
        if (nan_counts[j] > 0) {
            nan_report[name] = nan_counts[j];
            warnings.push_back(std::to_string(nan_counts[j]) + " NaN value(s) in '" + name + "' thresholded as 0");
        }
    }
    return table.with_layer(out_layer, Matrix<float>(source.rows(), f, std::move(out)))
        .with_record(make_record(
            "threshold_features",
            {{"layer", layer}, {"thresholds", std::move(used)}, {"nan_counts", std::move(nan_report)}, {"out_layer", out_layer}},
            std::move(warnings)));
}

void PhenotypeRule::validate() const {
    if (name.empty()) throw Error(ErrorCode::InvalidArgument, "phenotype rule needs a name", "rules");
    if (terms.empty()) throw Error(ErrorCode::InvalidArgument, "phenotype rule '" + name + "' has no terms", name);
    std::set<std::string_view> seen;
    for (const auto& t : terms) {
        if (!seen.insert(t.marker).second) {
            throw Error(ErrorCode::InvalidArgument,
                        "marker '" + t.marker + "' appears twice in rule '" + name + "'", name);
        }
    }
}

std::vector<MarkerTerm> parse_phenotype_pattern(std::string_view pattern, std::span<const std::string> known_markers) {
    std::vector<MarkerTerm> terms;
    std::size_t pos = 0;
    while (pos < pattern.size()) {
        std::size_t best = 0;
        for (const auto& m : known_markers) {
            if (m.size() > best && pos + m.size() < pattern.size() && pattern.substr(pos, m.size()) == m &&
                (pattern[pos + m.size()] == '+' || pattern[pos + m.size()] == '-')) {
                best = m.size();
            }
        }
        if (best == 0) {
            const auto sign = pattern.find_first_of("+-", pos);
            if (sign == std::string_view::npos || sign == pos) {
                throw Error(ErrorCode::InvalidArgument,
                            "malformed phenotype pattern '" + std::string(pattern) + "'", std::string(pattern));
            }
            best = sign - pos;
        }
        terms.push_back(MarkerTerm{std::string(pattern.substr(pos, best)), pattern[pos + best] == '+'});
        pos += best + 1;
    }
    if (terms.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty phenotype pattern", "pattern");
    }
    return terms;
}

PhenotypeConfig phenotype_config_from_json(const Json& j, std::span<const std::string> known_markers) {
    PhenotypeConfig config;
    try {
        if (j.contains("thresholds")) {
            for (const auto& [marker, value] : j.at("thresholds").items()) {
                config.thresholds[marker] = value.get<double>();
            }
        }
        if (j.contains("rules")) {
            for (const auto& r : j.at("rules")) {
                PhenotypeRule rule;
                const auto pattern = r.at("pattern").get<std::string>();
                rule.name = r.value("name", pattern);
                rule.terms = parse_phenotype_pattern(pattern, known_markers);
                rule.validate();
                config.rules.push_back(std::move(rule));
            }
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed phenotype document: ") + e.what(), "rules");
    }
    return config;
}

CellTable apply_phenotype_rules(const CellTable& table, std::string_view binary_layer,
                                std::span<const PhenotypeRule> rules, const std::string& out_annotation,
                                std::string_view default_label) {
    const auto& binary = table.layer(binary_layer);
    struct CompiledTerm {
        std::size_t column;
        float wanted;
    };
    std::vector<std::vector<CompiledTerm>> compiled;
    std::vector<std::string> categories;
    for (const auto& rule : rules) {
        rule.validate();
        std::vector<CompiledTerm> terms;
        for (const auto& t : rule.terms) {
            auto j = table.find_feature(t.marker);
            if (!j) {
                throw Error(ErrorCode::UnknownMarker,
                            "rule '" + rule.name + "' references unknown marker '" + t.marker + "'", t.marker);
            }
            terms.push_back({*j, t.positive ? 1.0f : 0.0f});
        }
        compiled.push_back(std::move(terms));
        if (std::find(categories.begin(), categories.end(), rule.name) == categories.end()) {
            categories.push_back(rule.name);
        }
    }
    if (std::find(categories.begin(), categories.end(), default_label) == categories.end()) {
        categories.emplace_back(default_label);
    }
    auto code_of = [&](std::string_view label) {
        return static_cast<std::uint32_t>(std::find(categories.begin(), categories.end(), label) - categories.begin());
    };
    std::vector<std::uint32_t> rule_codes;
    for (const auto& rule : rules) rule_codes.push_back(code_of(rule.name));
    const std::uint32_t default_code = code_of(default_label);

    std::vector<std::uint32_t> codes(table.n_cells(), default_code);
    std::vector<std::size_t> counts(rules.size() + 1, 0);
    for (std::size_t i = 0; i < table.n_cells(); ++i) {
        std::size_t matched = rules.size();
        for (std::size_t r = 0; r < compiled.size(); ++r) {
            const bool ok = std::all_of(compiled[r].begin(), compiled[r].end(),
                                        [&](const CompiledTerm& t) { return binary(i, t.column) == t.wanted; });
            if (ok) {
                matched = r;
                break;
            }
        }
        if (matched < rules.size()) codes[i] = rule_codes[matched];
        ++counts[matched];
    }

    Json rule_json = Json::array();
    for (std::size_t r = 0; r < rules.size(); ++r) {
        std::string pattern;
        for (const auto& t : rules[r].terms) pattern += t.marker + (t.positive ? "+" : "-");
        rule_json.push_back({{"name", rules[r].name}, {"pattern", pattern}, {"n_cells", counts[r]}});
    }
    return table.with_annotation(out_annotation, CategoricalColumn(std::move(codes), std::move(categories)))
        .with_record(make_record("apply_phenotype_rules", {{"binary_layer", binary_layer},
                                                           {"rules", std::move(rule_json)},
                                                           {"default_label", default_label},
                                                           {"n_default", counts.back()},
                                                           {"out_annotation", out_annotation}}));
}

}  // namespace cellscape
