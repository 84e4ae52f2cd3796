#pragma once

// JSON request/response layer shared by the CLI and the HTTP service. Every
// analysis takes a JSON object of parameters and returns a JSON result, so
// both front ends produce identical payloads for identical requests.

#include "cellscape/cell_table.hpp"
#include "cellscape/error.hpp"
#include "cellscape/spatial.hpp"
#include "cellscape/summaries.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace cellscape {

// "lo:hi:step"; hi is included when hi - lo is a whole number of steps.
std::vector<double> parse_radii_spec(std::string_view spec);

// Kinds: "hist", "box", "means", "crosstab".
Json run_summary(const CellTable& table, std::string_view kind, const Json& params);

// Kinds: "ripley", "enrich", "interact", "nn-dist", "profile".
Json run_spatial(const CellTable& table, std::string_view kind, const Json& params);

bool is_summary_kind(std::string_view kind);
bool is_spatial_kind(std::string_view kind);

// Dataset description: sizes, features, annotations with categories, layers, bounds.
Json describe_table(const CellTable& table);

Json to_json(const RipleyCurve& curve);
Json to_json(const EnrichmentResult& result);
Json to_json(const InteractionMatrix& matrix);
Json to_json(const Histogram& hist);
Json to_json(const BoxStats& stats);
Json to_json(const GroupMeans& means);
Json to_json(const Crosstab& table);
Json to_json(const HierarchicalOrder& order);

// {"error": code, "message": ..., "field": ...}
Json error_json(const Error& e);

}  // namespace cellscape
