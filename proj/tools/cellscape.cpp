// cellscape command-line interface.
//
// Exit codes: 0 success, 1 data error, 2 usage error. Failures print one
// JSON object on stderr. Randomized commands default to --seed 0.

#include "cellscape/analysis.hpp"
#include "cellscape/clustering.hpp"
#include "cellscape/container.hpp"
#include "cellscape/error.hpp"
#include "cellscape/ingest.hpp"
#include "cellscape/parallel.hpp"
#include "cellscape/service.hpp"
#include "cellscape/transforms.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace cellscape;

namespace {

// Raised for bad flag values that CLI11 itself cannot see.
struct UsageError : std::runtime_error {
    UsageError(const std::string& message, std::string flag) : std::runtime_error(message), flag(std::move(flag)) {}
    std::string flag;
};

void print_error(const std::string& code, const std::string& message, const std::string& field) {
    Json j = {{"error", code}, {"message", message}};
    if (!field.empty()) j["field"] = field;
    std::cerr << j.dump() << '\n';
}

Json read_json_file(const std::string& path, const std::string& flag) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path, flag);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::IoError, path + " is not valid JSON: " + e.what(), flag);
    }
}

void write_json_file(const Json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path, "--out-json");
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + path, "--out-json");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_numbers(const std::string& s, const std::string& flag) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("'" + item + "' is not a number", flag);
        }
    }
    return out;
}

// A container directory, or a CSV file together with --mapping.
CellTable load_input(const std::string& in, const std::string& mapping) {
    const fs::path p(in);
    if (fs::is_directory(p)) return load_container(p);
    if (mapping.empty()) {
        throw Error(ErrorCode::InvalidArgument, "--mapping is required when --in is a table file", "--mapping");
    }
    return ingest_file(p, mapping_from_json(read_json_file(mapping, "--mapping")));
}

struct Common {
    std::string in;
    std::string mapping;
    std::string out;
    std::string out_json;
};

void add_input(CLI::App* cmd, Common& c) {
    cmd->add_option("--in", c.in, "Input container directory or CSV file")->required();
    cmd->add_option("--mapping", c.mapping, "Column mapping JSON when --in is a CSV file");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cellscape: single-cell spatial analysis engine"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: CELLSCAPE_THREADS or hardware)");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Read a CSV export into a container");
    std::string csv, slide_label;
    Common ing;
    bool case_insensitive = false;
    ingest->add_option("--csv,--in", csv, "Cell table CSV")->required();
    ingest->add_option("--mapping", ing.mapping, "Column mapping JSON")->required();
    ingest->add_option("--out", ing.out, "Output container directory")->required();
    ingest->add_option("--slide-label", slide_label, "Slide label for this table");
    ingest->add_flag("--case-insensitive", case_insensitive, "Match mapping columns ignoring case");

    // combine
    auto* combine = app.add_subcommand("combine", "Concatenate containers from several slides");
    std::string inputs, slide_annotation = "slide";
    Common comb;
    combine->add_option("--inputs", inputs, "Comma-separated container directories")->required();
    combine->add_option("--slide-annotation", slide_annotation, "Annotation holding slide labels");
    combine->add_option("--out", comb.out, "Output container directory")->required();

    // transform
    auto* transform = app.add_subcommand("transform", "Normalize a feature layer");
    Common tr;
    std::string op, layer = "features", out_layer, batch_annotation, batch_method = "zscore";
    double cofactor = 5.0, q_low = 0.01, q_high = 0.99;
    add_input(transform, tr);
    transform->add_option("--out", tr.out, "Output container directory")->required();
    transform->add_option("--op", op, "Transform")
        ->required()
        ->check(CLI::IsMember({"arcsinh", "zscore", "quantile", "batch", "rescale"}));
    transform->add_option("--layer", layer, "Source layer");
    transform->add_option("--out-layer", out_layer, "Output layer name")->required();
    transform->add_option("--cofactor", cofactor, "arcsinh cofactor");
    transform->add_option("--q-low", q_low, "Lower quantile for --op quantile");
    transform->add_option("--q-high", q_high, "Upper quantile for --op quantile");
    transform->add_option("--batch-annotation", batch_annotation, "Batch annotation for --op batch");
    transform->add_option("--method", batch_method, "Batch method")->check(CLI::IsMember({"zscore", "median"}));

    // phenotype
    auto* phenotype = app.add_subcommand("phenotype", "Threshold markers and assign rule-based phenotypes");
    Common ph;
    std::string thresholds_path, rules_path, out_annotation, binary_layer = "binary", ph_layer = "features";
    std::string default_label(kDefaultPhenotypeLabel);
    add_input(phenotype, ph);
    phenotype->add_option("--out", ph.out, "Output container directory")->required();
    phenotype->add_option("--thresholds", thresholds_path, "JSON object marker -> threshold")->required();
    phenotype->add_option("--rules", rules_path, "JSON list of {name, pattern}")->required();
    phenotype->add_option("--out-annotation", out_annotation, "Phenotype annotation name")->required();
    phenotype->add_option("--layer", ph_layer, "Layer to threshold");
    phenotype->add_option("--binary-layer", binary_layer, "Name of the 0/1 layer written alongside");
    phenotype->add_option("--default-label", default_label, "Label for cells matching no rule");

    // cluster
    auto* cluster = app.add_subcommand("cluster", "Unsupervised clustering");
    Common cl;
    std::string method, cl_layer = "features", cl_annotation;
    std::size_t k = 30;
    double resolution = 1.0, radius = 0.0;
    std::uint64_t seed = 0;
    add_input(cluster, cl);
    cluster->add_option("--out", cl.out, "Output container directory")->required();
    cluster->add_option("--method", method, "Method")->required()->check(CLI::IsMember({"phenograph", "utag"}));
    cluster->add_option("--layer", cl_layer, "Feature layer");
    cluster->add_option("--k", k, "Neighbors per cell");
    cluster->add_option("--resolution", resolution, "Louvain resolution");
    cluster->add_option("--seed", seed, "Random seed");
    cluster->add_option("--radius", radius, "UTAG smoothing radius (microns)");
    cluster->add_option("--out-annotation", cl_annotation, "Annotation name (default phenograph_<layer>)");

    // spatial
    auto* spatial = app.add_subcommand("spatial", "Spatial statistics");
    spatial->require_subcommand(1);
    Common sp;
    std::string annotation, center, neighbor, radii, bounds, stratify_by, normalize, bin_edges, normalization,
        attach;
    std::size_t envelope = 0, n_permutations = 1000, graph_k = 0;
    double graph_radius = 0.0;
    bool no_edge_correction = false, include_cells = false;
    std::uint64_t sp_seed = 0;
    auto add_spatial = [&](const char* name, const char* help) {
        auto* c = spatial->add_subcommand(name, help);
        add_input(c, sp);
        c->add_option("--annotation", annotation, "Phenotype annotation")->required();
        c->add_option("--out-json", sp.out_json, "Result JSON path")->required();
        return c;
    };
    auto* ripley = add_spatial("ripley", "Ripley's L for a center/neighbor phenotype pair");
    ripley->add_option("--center", center, "Center phenotype")->required();
    ripley->add_option("--neighbor", neighbor, "Neighbor phenotype")->required();
    ripley->add_option("--radii", radii, "lo:hi:step")->required();
    ripley->add_option("--bounds", bounds, "x0,x1,y0,y1 (default: bounding box per stratum)");
    ripley->add_option("--envelope", envelope, "CSR simulations for the envelope");
    ripley->add_option("--stratify-by", stratify_by, "Annotation defining strata");
    ripley->add_option("--seed", sp_seed, "Random seed");
    ripley->add_flag("--no-edge-correction", no_edge_correction, "Count every center at every radius");
    auto* enrich = add_spatial("enrich", "Neighborhood enrichment z-scores");
    enrich->add_option("--k", graph_k, "kNN graph (default 6)");
    enrich->add_option("--radius", graph_radius, "Radius graph instead of kNN");
    enrich->add_option("--permutations", n_permutations, "Label permutations");
    enrich->add_option("--seed", sp_seed, "Random seed");
    enrich->add_option("--stratify-by", stratify_by, "Annotation defining strata");
    auto* interact = add_spatial("interact", "Cluster interaction matrix");
    interact->add_option("--k", graph_k, "kNN graph (default 6)");
    interact->add_option("--radius", graph_radius, "Radius graph instead of kNN");
    interact->add_option("--normalize", normalize, "none|row")->check(CLI::IsMember({"none", "row"}));
    auto* nn_dist = add_spatial("nn-dist", "Distance to the nearest cell of each phenotype");
    nn_dist->add_option("--stratify-by", stratify_by, "Annotation defining strata");
    nn_dist->add_flag("--include-cells", include_cells, "Include the per-cell distance matrix");
    auto* profile = add_spatial("profile", "Distance-binned neighborhood composition");
    profile->add_option("--bin-edges", bin_edges, "Comma-separated edges, e.g. 0,10,25,50")->required();
    profile->add_option("--normalization", normalization, "counts|area-density")
        ->check(CLI::IsMember({"counts", "area-density"}));
    profile->add_option("--stratify-by", stratify_by, "Annotation defining strata");
    profile->add_option("--attach", attach, "Store per-cell profiles as this associated table");
    profile->add_option("--out", sp.out, "Container to write when --attach is given");

    // summarize
    auto* summarize = app.add_subcommand("summarize", "Plot-ready summaries");
    summarize->require_subcommand(1);
    Common su;
    std::string feature, su_annotation, su_layer, group_by, edges, ann_a, ann_b, su_normalize;
    std::size_t n_bins = 50;
    bool no_cluster = false;
    auto add_summary = [&](const char* name, const char* help) {
        auto* c = summarize->add_subcommand(name, help);
        add_input(c, su);
        c->add_option("--out-json", su.out_json, "Result JSON path")->required();
        return c;
    };
    auto* hist = add_summary("hist", "Histogram of a feature or annotation");
    hist->add_option("--feature", feature, "Feature name");
    hist->add_option("--annotation", su_annotation, "Annotation (one bin per category)");
    hist->add_option("--layer", su_layer, "Feature layer");
    hist->add_option("--bins", n_bins, "Number of bins");
    hist->add_option("--edges", edges, "Comma-separated bin edges");
    hist->add_option("--group-by", group_by, "Grouping annotation");
    auto* box = add_summary("box", "Boxplot statistics");
    box->add_option("--feature", feature, "Feature name")->required();
    box->add_option("--layer", su_layer, "Feature layer");
    box->add_option("--group-by", group_by, "Grouping annotation");
    auto* means = add_summary("means", "Per-group feature means with dendrogram orders");
    means->add_option("--layer", su_layer, "Feature layer");
    means->add_option("--group-by", group_by, "Grouping annotation");
    means->add_flag("--no-cluster", no_cluster, "Skip hierarchical ordering");
    auto* xtab = add_summary("crosstab", "Cross-tabulate two annotations");
    xtab->add_option("--a", ann_a, "Row annotation")->required();
    xtab->add_option("--b", ann_b, "Column annotation")->required();
    xtab->add_option("--normalize", su_normalize, "none|row|total")->check(CLI::IsMember({"none", "row", "total"}));

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP JSON API over a directory of containers");
    std::string data_dir, host = "127.0.0.1", allow_origin;
    int port = 8080;
    std::size_t max_payload = 1'000'000, job_budget_ms = 2000;
    bool persist = false;
    serve->add_option("--data", data_dir, "Directory of containers")->required();
    serve->add_option("--port", port, "Port");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--max-payload-cells", max_payload, "Largest cell payload served");
    serve->add_option("--allow-origin", allow_origin, "CORS origin for the viewer");
    serve->add_option("--job-budget-ms", job_budget_ms, "Longer analyses become polled jobs");
    serve->add_flag("--persist-annotations", persist, "Write client annotations back to containers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what(), "");
        return 2;
    }

    try {
        set_max_threads(resolve_thread_count(threads));

        if (ingest->parsed()) {
            auto mapping = mapping_from_json(read_json_file(ing.mapping, "--mapping"));
            if (!slide_label.empty()) mapping.slide_label = slide_label;
            save_container(ingest_file(csv, mapping, IngestOptions{case_insensitive}), ing.out);
        } else if (combine->parsed()) {
            std::vector<CellTable> tables;
            for (const auto& p : split_list(inputs)) tables.push_back(load_container(p));
            save_container(combine_tables(tables, slide_annotation), comb.out);
        } else if (transform->parsed()) {
            const auto table = load_input(tr.in, tr.mapping);
            CellTable result;
            if (op == "arcsinh") {
                result = arcsinh(table, layer, cofactor, out_layer);
            } else if (op == "zscore") {
                result = zscore(table, layer, out_layer);
            } else if (op == "quantile") {
                result = quantile_rescale(table, layer, q_low, q_high, out_layer);
            } else if (op == "rescale") {
                result = rescale(table, layer, out_layer);
            } else {
                if (batch_annotation.empty()) throw UsageError("--op batch needs --batch-annotation", "--batch-annotation");
                result = batch_normalize(table, layer, batch_annotation, parse_batch_method(batch_method), out_layer);
            }
            save_container(result, tr.out);
        } else if (phenotype->parsed()) {
            const auto table = load_input(ph.in, ph.mapping);
            Json thresholds = read_json_file(thresholds_path, "--thresholds");
            Json rules = read_json_file(rules_path, "--rules");
            if (thresholds.is_object() && thresholds.contains("thresholds")) thresholds = thresholds["thresholds"];
            if (rules.is_object() && rules.contains("rules")) rules = rules["rules"];
            const auto config =
                phenotype_config_from_json({{"thresholds", thresholds}, {"rules", rules}}, table.feature_names());
            auto binary = threshold_features(table, ph_layer, config.thresholds, binary_layer);
            save_container(apply_phenotype_rules(binary, binary_layer, config.rules, out_annotation, default_label),
                           ph.out);
        } else if (cluster->parsed()) {
            const auto table = load_input(cl.in, cl.mapping);
            if (method == "phenograph") {
                save_container(phenograph(table, {cl_layer, k, resolution, seed, cl_annotation}), cl.out);
            } else {
                if (!(radius > 0.0)) throw UsageError("--method utag needs --radius > 0", "--radius");
                const std::string smoothed = cl_layer + "_utag";
                const auto s = utag_smooth(table, cl_layer, radius, smoothed);
                const std::string name = cl_annotation.empty() ? "utag_" + cl_layer : cl_annotation;
                save_container(phenograph(s, {smoothed, k, resolution, seed, name}), cl.out);
            }
        } else if (spatial->parsed()) {
            Json params = {{"annotation", annotation}};
            std::string kind;
            if (ripley->parsed()) {
                kind = "ripley";
                std::vector<double> r;
                try {
                    r = parse_radii_spec(radii);
                } catch (const Error& e) {
                    throw UsageError(e.what(), "--radii");
                }
                params.update({{"center", center}, {"neighbor", neighbor}, {"radii", r}, {"seed", sp_seed},
                               {"envelope", envelope}, {"edge_correction", !no_edge_correction}});
                if (!bounds.empty()) {
                    const auto b = parse_numbers(bounds, "--bounds");
                    if (b.size() != 4) throw UsageError("--bounds needs x0,x1,y0,y1", "--bounds");
                    params["bounds"] = b;
                }
            } else if (enrich->parsed() || interact->parsed()) {
                kind = enrich->parsed() ? "enrich" : "interact";
                if (graph_radius > 0.0 && graph_k > 0) throw UsageError("give --k or --radius, not both", "--radius");
                if (graph_radius > 0.0) {
                    params["radius"] = graph_radius;
                } else if (graph_k > 0) {
                    params["k"] = graph_k;
                }
                if (enrich->parsed()) {
                    params["n_permutations"] = n_permutations;
                    params["seed"] = sp_seed;
                } else if (!normalize.empty()) {
                    params["normalize"] = normalize;
                }
            } else if (nn_dist->parsed()) {
                kind = "nn-dist";
                params["include_cells"] = include_cells;
            } else {
                kind = "profile";
                params["bin_edges"] = parse_numbers(bin_edges, "--bin-edges");
                if (!normalization.empty()) params["normalization"] = normalization;
                if (!attach.empty() && sp.out.empty()) throw UsageError("--attach needs --out", "--out");
            }
            if (!stratify_by.empty() && kind != "interact") params["stratify_by"] = stratify_by;
            const auto table = load_input(sp.in, sp.mapping);
            write_json_file(run_spatial(table, kind, params), sp.out_json);
            if (kind == "profile" && !attach.empty()) {
                const auto norm = normalization == "area-density" ? ProfileNormalization::AreaDensity
                                                                  : ProfileNormalization::Counts;
                const auto edges_v = parse_numbers(bin_edges, "--bin-edges");
                const std::optional<std::string> strat =
                    stratify_by.empty() ? std::nullopt : std::optional<std::string>(stratify_by);
                const auto prof = neighborhood_profile(table, annotation, edges_v, norm, strat);
                save_container(attach_profile(table, prof, attach), sp.out);
            }
        } else if (summarize->parsed()) {
            Json params = Json::object();
            std::string kind;
            if (!su_layer.empty()) params["layer"] = su_layer;
            if (!group_by.empty()) params["group_by"] = group_by;
            if (hist->parsed()) {
                kind = "hist";
                if (feature.empty() == su_annotation.empty()) {
                    throw UsageError("give exactly one of --feature or --annotation", "--feature");
                }
                if (!feature.empty()) params["feature"] = feature;
                if (!su_annotation.empty()) params["annotation"] = su_annotation;
                params["n_bins"] = n_bins;
                if (!edges.empty()) params["edges"] = parse_numbers(edges, "--edges");
            } else if (box->parsed()) {
                kind = "box";
                params["feature"] = feature;
            } else if (means->parsed()) {
                kind = "means";
                params["cluster"] = !no_cluster;
            } else {
                kind = "crosstab";
                params = {{"annotation_a", ann_a}, {"annotation_b", ann_b}};
                if (!su_normalize.empty()) params["normalize"] = su_normalize;
            }
            const auto table = load_input(su.in, su.mapping);
            write_json_file(run_summary(table, kind, params), su.out_json);
        } else if (serve->parsed()) {
            ServiceConfig config;
            config.max_payload_cells = max_payload;
            config.job_budget = std::chrono::milliseconds(job_budget_ms);
            if (!allow_origin.empty()) config.allow_origin = allow_origin;
            config.persist_annotations = persist;
            Service service(config);
            service.load_directory(data_dir);
            serve_http(service, host, port);
        }
    } catch (const UsageError& e) {
        print_error("UsageError", e.what(), e.flag);
        return 2;
    } catch (const Error& e) {
        std::cerr << error_json(e).dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        print_error("InternalError", e.what(), "");
        return 1;
    }
    return 0;
}
