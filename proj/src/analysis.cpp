#include "cellscape/analysis.hpp"

#include <charconv>
#include <cmath>
#include <set>

namespace cellscape {

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& message) {
    throw Error(ErrorCode::InvalidArgument, message, field);
}

void check_keys(const Json& params, std::initializer_list<const char*> allowed) {
    if (!params.is_object()) bad_field("body", "parameters must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : params.items()) {
        if (!ok.count(key)) bad_field(key, "unknown parameter '" + key + "'");
    }
}

std::string get_string(const Json& p, const char* key) {
    if (!p.contains(key)) bad_field(key, std::string("missing required parameter '") + key + "'");
    if (!p[key].is_string()) bad_field(key, std::string("'") + key + "' must be a string");
    return p[key].get<std::string>();
}

std::optional<std::string> get_optional_string(const Json& p, const char* key) {
    if (!p.contains(key) || p[key].is_null()) return std::nullopt;
    if (!p[key].is_string()) bad_field(key, std::string("'") + key + "' must be a string");
    return p[key].get<std::string>();
}

double get_number(const Json& p, const char* key, double fallback) {
    if (!p.contains(key)) return fallback;
    if (!p[key].is_number()) bad_field(key, std::string("'") + key + "' must be a number");
    return p[key].get<double>();
}

std::uint64_t get_count(const Json& p, const char* key, std::uint64_t fallback) {
    if (!p.contains(key)) return fallback;
    if (!p[key].is_number_unsigned() && !(p[key].is_number_integer() && p[key].get<std::int64_t>() >= 0)) {
        bad_field(key, std::string("'") + key + "' must be a non-negative integer");
    }
    return p[key].get<std::uint64_t>();
}

bool get_bool(const Json& p, const char* key, bool fallback) {
    if (!p.contains(key)) return fallback;
    if (!p[key].is_boolean()) bad_field(key, std::string("'") + key + "' must be true or false");
    return p[key].get<bool>();
}

std::vector<double> get_numbers(const Json& p, const char* key) {
    std::vector<double> out;
    if (!p.contains(key)) return out;
    if (!p[key].is_array()) bad_field(key, std::string("'") + key + "' must be an array of numbers");
    for (const auto& v : p[key]) {
        if (!v.is_number()) bad_field(key, std::string("'") + key + "' must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

// Rethrows lookups of unknown annotations, layers, or features against the
// request field that named them.
void require_annotation(const CellTable& t, const std::string& name, const char* field) {
    if (!t.annotations().count(name)) {
        throw Error(ErrorCode::UnknownAnnotation, "unknown annotation '" + name + "'", field);
    }
}

void require_layer(const CellTable& t, const std::string& name, const char* field) {
    if (!t.has_layer(name)) throw Error(ErrorCode::UnknownLayer, "unknown layer '" + name + "'", field);
}

void require_feature(const CellTable& t, const std::string& name, const char* field) {
    if (!t.find_feature(name)) throw Error(ErrorCode::UnknownColumn, "unknown feature '" + name + "'", field);
}

std::optional<std::string> optional_annotation(const CellTable& t, const Json& p, const char* key) {
    auto name = get_optional_string(p, key);
    if (name) require_annotation(t, *name, key);
    return name;
}

Json optional_label(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

GraphSpec graph_from(const Json& p, std::size_t default_k) {
    if (p.contains("radius") && p.contains("k")) bad_field("radius", "give either 'radius' or 'k', not both");
    if (p.contains("radius")) {
        const double r = get_number(p, "radius", 0.0);
        if (!(r > 0.0)) throw Error(ErrorCode::NonPositiveRadius, "'radius' must be > 0", "radius");
        return GraphSpec::with_radius(r);
    }
    const auto k = get_count(p, "k", default_k);
    if (k == 0) bad_field("k", "'k' must be >= 1");
    return GraphSpec::with_knn(k);
}

Json graph_json(const GraphSpec& g) {
    if (g.kind == GraphSpec::Kind::Radius) return {{"kind", "radius"}, {"radius", g.radius}};
    return {{"kind", "knn"}, {"k", g.k}};
}

std::vector<double> radii_from(const Json& p) {
    if (!p.contains("radii")) throw Error(ErrorCode::EmptyRadii, "missing required parameter 'radii'", "radii");
    const auto& r = p["radii"];
    if (r.is_string()) return parse_radii_spec(r.get<std::string>());
    auto radii = get_numbers(p, "radii");
    if (radii.empty()) throw Error(ErrorCode::EmptyRadii, "'radii' is empty", "radii");
    return radii;
}

// ---------------------------------------------------------------------------

Json ripley_request(const CellTable& t, const Json& p) {
    check_keys(p, {"annotation", "center", "neighbor", "radii", "bounds", "stratify_by", "edge_correction",
                   "envelope", "seed"});
    RipleyParams rp;
    rp.annotation = get_string(p, "annotation");
    require_annotation(t, rp.annotation, "annotation");
    rp.center = get_string(p, "center");
    rp.neighbor = get_string(p, "neighbor");
    const auto& col = t.annotation(rp.annotation);
    if (!col.find_category(rp.center)) throw Error(ErrorCode::UnknownLabel, "unknown label '" + rp.center + "'", "center");
    if (!col.find_category(rp.neighbor)) {
        throw Error(ErrorCode::UnknownLabel, "unknown label '" + rp.neighbor + "'", "neighbor");
    }
    rp.radii = radii_from(p);
    if (p.contains("bounds") && !p["bounds"].is_null()) {
        const auto b = get_numbers(p, "bounds");
        if (b.size() != 4) bad_field("bounds", "'bounds' must be [xmin, xmax, ymin, ymax]");
        rp.bounds = RegionBounds{b[0], b[1], b[2], b[3]};
        if (!(b[1] > b[0]) || !(b[3] > b[2])) bad_field("bounds", "'bounds' must have xmax > xmin and ymax > ymin");
    }
    rp.stratify_by = optional_annotation(t, p, "stratify_by");
    rp.edge_correction = get_bool(p, "edge_correction", true);
    rp.envelope_sims = get_count(p, "envelope", 0);
    rp.seed = get_count(p, "seed", 0);

    Json curves = Json::array();
    for (const auto& c : ripley_l(t, rp)) curves.push_back(to_json(c));
    return {{"analysis", "ripley"},
            {"annotation", rp.annotation},
            {"center", rp.center},
            {"neighbor", rp.neighbor},
            {"edge_correction", rp.edge_correction},
            {"envelope_sims", rp.envelope_sims},
            {"seed", rp.seed},
            {"stratify_by", optional_label(rp.stratify_by)},
            {"curves", curves}};
}

Json enrich_request(const CellTable& t, const Json& p) {
    check_keys(p, {"annotation", "k", "radius", "n_permutations", "seed", "stratify_by"});
    EnrichmentParams ep;
    ep.annotation = get_string(p, "annotation");
    require_annotation(t, ep.annotation, "annotation");
    ep.graph = graph_from(p, 6);
    ep.n_permutations = get_count(p, "n_permutations", 1000);
    if (ep.n_permutations == 0) bad_field("n_permutations", "'n_permutations' must be >= 1");
    ep.seed = get_count(p, "seed", 0);
    ep.stratify_by = optional_annotation(t, p, "stratify_by");
    Json results = Json::array();
    for (const auto& r : neighborhood_enrichment(t, ep)) results.push_back(to_json(r));
    return {{"analysis", "enrich"},
            {"annotation", ep.annotation},
            {"graph", graph_json(ep.graph)},
            {"n_permutations", ep.n_permutations},
            {"seed", ep.seed},
            {"stratify_by", optional_label(ep.stratify_by)},
            {"results", results}};
}

Json interact_request(const CellTable& t, const Json& p) {
    check_keys(p, {"annotation", "k", "radius", "normalize"});
    const auto annotation = get_string(p, "annotation");
    require_annotation(t, annotation, "annotation");
    const auto graph = graph_from(p, 6);
    const auto norm = get_optional_string(p, "normalize").value_or("none");
    if (norm != "none" && norm != "row") bad_field("normalize", "'normalize' must be 'none' or 'row'");
    const auto m = interaction_matrix(t, annotation, graph, norm == "row" ? RowNormalization::Row : RowNormalization::None);
    Json out = to_json(m);
    out["analysis"] = "interact";
    out["annotation"] = annotation;
    out["graph"] = graph_json(graph);
    return out;
}

Json nn_dist_request(const CellTable& t, const Json& p) {
    check_keys(p, {"annotation", "stratify_by", "include_cells"});
    const auto annotation = get_string(p, "annotation");
    require_annotation(t, annotation, "annotation");
    const auto stratify_by = optional_annotation(t, p, "stratify_by");
    const bool include_cells = get_bool(p, "include_cells", false);
    const auto nn = nearest_neighbor_distances(t, annotation, stratify_by);
    const auto& col = t.annotation(annotation);
    const std::size_t n_labels = nn.labels.size();

    // Distribution of distances from each source phenotype to each target.
    Json summary = Json::array();
    for (std::size_t src = 0; src < n_labels; ++src) {
        for (std::size_t dst = 0; dst < n_labels; ++dst) {
            std::vector<double> values;
            for (std::size_t i = 0; i < t.n_cells(); ++i) {
                if (col.is_missing(i) || col.code(i) != src) continue;
                values.push_back(nn.distances(i, dst));
            }
            Json s = to_json(box_stats(std::move(values)));
            s.erase("label");
            s["source"] = nn.labels[src];
            s["target"] = nn.labels[dst];
            summary.push_back(std::move(s));
        }
    }
    Json out = {{"analysis", "nn-dist"},
                {"annotation", annotation},
                {"stratify_by", optional_label(stratify_by)},
                {"labels", nn.labels},
                {"summary", summary}};
    if (include_cells) {
        Json rows = Json::array();
        for (std::size_t i = 0; i < t.n_cells(); ++i) {
            Json row = Json::array();
            for (std::size_t q = 0; q < n_labels; ++q) row.push_back(nn.distances(i, q));
            rows.push_back(std::move(row));
        }
        out["distances"] = std::move(rows);
    }
    return out;
}

Json profile_request(const CellTable& t, const Json& p) {
    check_keys(p, {"annotation", "bin_edges", "normalization", "stratify_by"});
    const auto annotation = get_string(p, "annotation");
    require_annotation(t, annotation, "annotation");
    const auto edges = get_numbers(p, "bin_edges");
    const auto norm_name = get_optional_string(p, "normalization").value_or("counts");
    if (norm_name != "counts" && norm_name != "area-density") {
        bad_field("normalization", "'normalization' must be 'counts' or 'area-density'");
    }
    const auto norm = norm_name == "counts" ? ProfileNormalization::Counts : ProfileNormalization::AreaDensity;
    const auto stratify_by = optional_annotation(t, p, "stratify_by");
    const auto prof = neighborhood_profile(t, annotation, edges, norm, stratify_by);

    // Mean profile per center phenotype; per-cell profiles go to containers.
    const auto& col = t.annotation(annotation);
    const std::size_t width = prof.n_labels() * prof.n_bins();
    Json means = Json::array();
    for (std::size_t c = 0; c < prof.n_labels(); ++c) {
        std::vector<double> sum(width, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < t.n_cells(); ++i) {
            if (col.is_missing(i) || col.code(i) != c) continue;
            ++count;
            for (std::size_t k = 0; k < width; ++k) sum[k] += prof.values[i * width + k];
        }
        Json row = Json::array();
        for (double s : sum) row.push_back(count == 0 ? std::nan("") : s / static_cast<double>(count));
        means.push_back({{"center", prof.labels[c]}, {"n", count}, {"mean", row}});
    }
    return {{"analysis", "profile"},
            {"annotation", annotation},
            {"bin_edges", prof.bin_edges},
            {"normalization", norm_name},
            {"stratify_by", optional_label(stratify_by)},
            {"labels", prof.labels},
            {"columns", prof.column_labels()},
            {"mean_by_center", means}};
}

// ---------------------------------------------------------------------------

Json hist_request(const CellTable& t, const Json& p) {
    check_keys(p, {"feature", "annotation", "layer", "n_bins", "edges", "group_by"});
    HistogramParams hp;
    hp.feature = get_optional_string(p, "feature");
    hp.annotation = get_optional_string(p, "annotation");
    if (hp.feature.has_value() == hp.annotation.has_value()) {
        bad_field("feature", "give exactly one of 'feature' or 'annotation'");
    }
    hp.layer = get_optional_string(p, "layer").value_or(std::string(kFeaturesLayer));
    if (hp.feature) {
        require_layer(t, hp.layer, "layer");
        require_feature(t, *hp.feature, "feature");
    } else {
        require_annotation(t, *hp.annotation, "annotation");
    }
    hp.n_bins = get_count(p, "n_bins", 50);
    hp.edges = get_numbers(p, "edges");
    hp.group_by = optional_annotation(t, p, "group_by");
    Json out = to_json(histogram(t, hp));
    out["analysis"] = "hist";
    out["source"] = hp.feature ? Json{{"feature", *hp.feature}, {"layer", hp.layer}} : Json{{"annotation", *hp.annotation}};
    out["group_by"] = optional_label(hp.group_by);
    return out;
}

Json box_request(const CellTable& t, const Json& p) {
    check_keys(p, {"feature", "layer", "group_by"});
    const auto feature = get_string(p, "feature");
    const auto layer = get_optional_string(p, "layer").value_or(std::string(kFeaturesLayer));
    require_layer(t, layer, "layer");
    require_feature(t, feature, "feature");
    const auto group_by = optional_annotation(t, p, "group_by");
    const auto res = boxplot_stats(t, feature, layer, group_by);
    Json groups = Json::array();
    for (const auto& g : res.groups) groups.push_back(to_json(g));
    return {{"analysis", "box"},
            {"feature", feature},
            {"layer", layer},
            {"group_by", optional_label(group_by)},
            {"groups", groups},
            {"n_missing_group", res.n_missing_group}};
}

Json means_request(const CellTable& t, const Json& p) {
    check_keys(p, {"layer", "group_by", "cluster"});
    const auto layer = get_optional_string(p, "layer").value_or(std::string(kFeaturesLayer));
    require_layer(t, layer, "layer");
    const auto group_by = optional_annotation(t, p, "group_by");
    const bool cluster = get_bool(p, "cluster", true);
    const auto means = group_means(t, layer, group_by);
    Json out = to_json(means);
    out["analysis"] = "means";
    out["layer"] = layer;
    out["group_by"] = optional_label(group_by);
    if (cluster) {
        out["row_order"] = to_json(hierarchical_order(means.means, Axis::Rows));
        out["column_order"] = to_json(hierarchical_order(means.means, Axis::Columns));
    }
    return out;
}

Json crosstab_request(const CellTable& t, const Json& p) {
    check_keys(p, {"annotation_a", "annotation_b", "normalize"});
    const auto a = get_string(p, "annotation_a");
    require_annotation(t, a, "annotation_a");
    const auto b = get_string(p, "annotation_b");
    require_annotation(t, b, "annotation_b");
    const auto norm = get_optional_string(p, "normalize").value_or("none");
    CrosstabNormalization n = CrosstabNormalization::None;
    if (norm == "row") {
        n = CrosstabNormalization::Row;
    } else if (norm == "total") {
        n = CrosstabNormalization::Total;
    } else if (norm != "none") {
        bad_field("normalize", "'normalize' must be 'none', 'row', or 'total'");
    }
    Json out = to_json(crosstab(t, a, b, n));
    out["analysis"] = "crosstab";
    out["annotation_a"] = a;
    out["annotation_b"] = b;
    return out;
}

}  // namespace

std::vector<double> parse_radii_spec(std::string_view spec) {
    auto fail = [&](const std::string& why) -> std::vector<double> {
        throw Error(ErrorCode::InvalidArgument, "bad radii spec '" + std::string(spec) + "': " + why, "radii");
    };
    double parts[3];
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
        const std::size_t end = k < 2 ? spec.find(':', start) : spec.size();
        if (end == std::string_view::npos) return fail("expected lo:hi:step");
        const auto piece = spec.substr(start, end - start);
        const auto res = std::from_chars(piece.data(), piece.data() + piece.size(), parts[k]);
        if (res.ec != std::errc() || res.ptr != piece.data() + piece.size() || piece.empty()) {
            return fail("'" + std::string(piece) + "' is not a number");
        }
        start = end + 1;
    }
    const double lo = parts[0], hi = parts[1], step = parts[2];
    if (!std::isfinite(lo) || !std::isfinite(hi) || !std::isfinite(step)) return fail("values must be finite");
    if (!(step > 0.0)) return fail("step must be > 0");
    if (!(lo > 0.0)) return fail("radii must be > 0");
    if (hi < lo) return fail("hi must be >= lo");
    const double span = (hi - lo) / step;
    const double whole = std::round(span);
    const bool exact = std::fabs(span - whole) <= 1e-9 * std::max(1.0, whole);
    const auto n = static_cast<std::size_t>(exact ? whole : std::floor(span)) + 1;
    std::vector<double> radii(n);
    for (std::size_t i = 0; i < n; ++i) radii[i] = lo + static_cast<double>(i) * step;
    if (exact) radii.back() = hi;
    return radii;
}

bool is_summary_kind(std::string_view kind) {
    return kind == "hist" || kind == "box" || kind == "means" || kind == "crosstab";
}

bool is_spatial_kind(std::string_view kind) {
    return kind == "ripley" || kind == "enrich" || kind == "interact" || kind == "nn-dist" || kind == "profile";
}

Json run_summary(const CellTable& table, std::string_view kind, const Json& params) {
    if (kind == "hist") return hist_request(table, params);
    if (kind == "box") return box_request(table, params);
    if (kind == "means") return means_request(table, params);
    if (kind == "crosstab") return crosstab_request(table, params);
    throw Error(ErrorCode::InvalidArgument, "unknown summary '" + std::string(kind) + "'", "kind");
}

Json run_spatial(const CellTable& table, std::string_view kind, const Json& params) {
    if (kind == "ripley") return ripley_request(table, params);
    if (kind == "enrich") return enrich_request(table, params);
    if (kind == "interact") return interact_request(table, params);
    if (kind == "nn-dist") return nn_dist_request(table, params);
    if (kind == "profile") return profile_request(table, params);
    throw Error(ErrorCode::InvalidArgument, "unknown spatial analysis '" + std::string(kind) + "'", "kind");
}

Json describe_table(const CellTable& table) {
    Json annotations = Json::array();
    for (const auto& [name, col] : table.annotations()) {
        annotations.push_back({{"name", name}, {"categories", col.categories()}, {"n_missing", col.count_missing()}});
    }
    Json layers = Json::array({std::string(kFeaturesLayer)});
    for (const auto& [name, m] : table.layers()) layers.push_back(name);
    Json bounds = nullptr;
    if (table.n_cells() > 0) {
        std::vector<Point2> pts(table.n_cells());
        for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {table.coords()(i, 0), table.coords()(i, 1)};
        const auto b = RegionBounds::bounding_box(pts);
        bounds = {b.xmin, b.xmax, b.ymin, b.ymax};
    }
    return {{"n_cells", table.n_cells()},
            {"features", table.feature_names()},
            {"annotations", annotations},
            {"layers", layers},
            {"bounds", bounds},
            {"slide_label", optional_label(table.slide_label())}};
}

Json to_json(const RipleyCurve& c) {
    Json out = {{"stratum", optional_label(c.stratum)},
                {"center", c.center_label},
                {"neighbor", c.neighbor_label},
                {"radii", c.radii},
                {"k", c.k_values},
                {"l", c.l_values},
                {"n_valid_centers", c.n_valid_centers},
                {"n_center", c.n_center},
                {"n_neighbor", c.n_neighbor},
                {"area", c.area},
                {"bounds", {c.bounds.xmin, c.bounds.xmax, c.bounds.ymin, c.bounds.ymax}},
                {"edge_correction", c.edge_correction},
                {"envelope", nullptr},
                {"warnings", c.warnings}};
    if (c.envelope) {
        out["envelope"] = {{"lo", c.envelope->lo},
                           {"hi", c.envelope->hi},
                           {"n_sims", c.envelope->n_sims},
                           {"method", c.envelope->percentile ? "percentile-2.5-97.5" : "min-max"},
                           {"flags", c.envelope_flags()}};
    }
    return out;
}

Json to_json(const EnrichmentResult& r) {
    return {{"stratum", optional_label(r.stratum)},
            {"labels", r.labels},
            {"z", r.z},
            {"observed", r.observed},
            {"perm_mean", r.perm_mean},
            {"perm_std", r.perm_std},
            {"n_permutations", r.n_permutations},
            {"n_edges", r.n_edges},
            {"warnings", r.warnings}};
}

Json to_json(const InteractionMatrix& m) {
    return {{"labels", m.labels}, {"values", m.values}, {"normalize", m.row_normalized ? "row" : "none"}};
}

Json to_json(const Histogram& h) {
    Json groups = Json::array();
    for (const auto& g : h.groups) {
        groups.push_back({{"label", optional_label(g.label)},
                          {"counts", g.counts},
                          {"n_nan", g.n_nan},
                          {"n_out_of_range", g.n_out_of_range}});
    }
    Json out = {{"groups", groups}, {"n_missing_group", h.n_missing_group}};
    if (h.categories.empty()) {
        out["edges"] = h.edges;
    } else {
        out["categories"] = h.categories;
    }
    return out;
}

Json to_json(const BoxStats& s) {
    return {{"label", optional_label(s.label)},
            {"n", s.n},
            {"n_nan", s.n_nan},
            {"min", s.min},
            {"q1", s.q1},
            {"median", s.median},
            {"q3", s.q3},
            {"max", s.max},
            {"whisker_lo", s.whisker_lo},
            {"whisker_hi", s.whisker_hi},
            {"n_outliers", s.n_outliers}};
}

Json to_json(const GroupMeans& m) {
    return {{"groups", m.groups},
            {"features", m.features},
            {"means", m.means},
            {"counts", m.counts},
            {"sizes", m.sizes},
            {"n_missing_group", m.n_missing_group}};
}

Json to_json(const Crosstab& c) {
    Json flows = Json::array();
    for (const auto& f : c.flows) flows.push_back({{"source", f.source}, {"target", f.target}, {"value", f.value}});
    const char* norm = c.normalization == CrosstabNormalization::Row     ? "row"
                       : c.normalization == CrosstabNormalization::Total ? "total"
                                                                         : "none";
    return {{"row_labels", c.row_labels},
            {"col_labels", c.col_labels},
            {"counts", c.counts},
            {"values", c.values},
            {"normalize", norm},
            {"flows", flows},
            {"n_missing", c.n_missing}};
}

Json to_json(const HierarchicalOrder& h) {
    Json merges = Json::array();
    for (const auto& m : h.merges) {
        merges.push_back({{"left", m.left}, {"right", m.right}, {"distance", m.distance}, {"size", m.size}});
    }
    return {{"order", h.order}, {"merges", merges}};
}

Json error_json(const Error& e) {
    Json out = {{"error", std::string(to_string(e.code()))}, {"message", e.what()}};
    if (!e.field().empty()) out["field"] = e.field();
    return out;
}

}  // namespace cellscape
