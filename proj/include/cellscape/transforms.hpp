#pragma once

#include "cellscape/cell_table.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cellscape {

inline constexpr double kDefaultCofactor = 5.0;

// out = asinh(x / cofactor); NaN propagates.
CellTable arcsinh(const CellTable& table, std::string_view source_layer, double cofactor,
                  const std::string& out_layer);

// Per-feature (x - mean) / sd with the population (1/n) sd. NaNs are left
// out of the moments and stay NaN. Constant columns become zeros.
CellTable zscore(const CellTable& table, std::string_view source_layer, const std::string& out_layer);

// Per-feature clip to [quantile(q_low), quantile(q_high)], then min-max to [0, 1].
CellTable quantile_rescale(const CellTable& table, std::string_view source_layer, double q_low, double q_high,
                           const std::string& out_layer);

// quantile_rescale with q = (0, 1).
CellTable rescale(const CellTable& table, std::string_view source_layer, const std::string& out_layer);

enum class BatchMethod { ZScore, MedianCenter };

BatchMethod parse_batch_method(std::string_view name);

CellTable batch_normalize(const CellTable& table, std::string_view source_layer, const std::string& batch_annotation,
                          BatchMethod method, const std::string& out_layer);

using ThresholdSet = std::map<std::string, double>;

// Binary layer: 1 where value > threshold, else 0. NaN maps to 0 and is
// counted. Features without a threshold are NaN ("not binarized") so no rule
// can match them by accident.
CellTable threshold_features(const CellTable& table, std::string_view layer, const ThresholdSet& thresholds,
                             const std::string& out_layer);

struct MarkerTerm {
    std::string marker;
    bool positive = true;

    bool operator==(const MarkerTerm&) const = default;
};

struct PhenotypeRule {
    std::string name;
    std::vector<MarkerTerm> terms;

    void validate() const;
};

// Parses "CD3D+CD4+FOXP3+" into terms. When known markers are supplied,
// names containing '+' or '-' (e.g. "HLA-DR") are matched longest-first.
std::vector<MarkerTerm> parse_phenotype_pattern(std::string_view pattern,
                                                std::span<const std::string> known_markers = {});

struct PhenotypeConfig {
    ThresholdSet thresholds;
    std::vector<PhenotypeRule> rules;
};

// {"thresholds": {"CD3D": 0.5}, "rules": [{"name": "...", "pattern": "CD3D+CD4+"}]}
// Either key may be absent. `name` defaults to the pattern text.
PhenotypeConfig phenotype_config_from_json(const Json& j, std::span<const std::string> known_markers = {});

inline constexpr std::string_view kDefaultPhenotypeLabel = "no_label";

// First matching rule wins; unmatched cells receive default_label. A term
// (m,+) needs binary value 1 and (m,-) needs 0; any other value fails both.
CellTable apply_phenotype_rules(const CellTable& table, std::string_view binary_layer,
                                std::span<const PhenotypeRule> rules, const std::string& out_annotation,
                                std::string_view default_label = kDefaultPhenotypeLabel);

}  // namespace cellscape
